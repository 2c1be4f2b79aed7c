#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace mdat::io {

/// Shortest decimal form that parses back to the identical double.
std::string format_double(double v);
double parse_double(std::string_view s, std::size_t line = 0);
long long parse_int(std::string_view s, std::size_t line = 0);

std::vector<std::string_view> split(std::string_view s, char sep);
std::string_view trim(std::string_view s);

std::string read_file(const std::filesystem::path& path);
/// Writes atomically enough for our purposes: truncate + write, throws on failure.
void write_file(const std::filesystem::path& path, std::string_view contents);

void append_row(std::string& out, const Eigen::Ref<const Eigen::VectorXd>& v, char sep);
Eigen::VectorXd parse_row(std::string_view s, char sep, std::size_t line = 0);

}  // namespace mdat::io
