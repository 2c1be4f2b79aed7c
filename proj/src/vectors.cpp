#include "mdat/vectors.hpp"

#include <unordered_set>

#include "mdat/error.hpp"
#include "mdat/text_io.hpp"

namespace mdat {

void LabeledVectorSet::add(VectorRecord r) {
  if (r.vector.size() != dim)
    throw DataError("record '" + r.id + "' has dimension " + std::to_string(r.vector.size()) +
                    ", set expects " + std::to_string(dim));
  records.push_back(std::move(r));
}

void LabeledVectorSet::validate() const {
  std::unordered_set<std::string> seen;
  seen.reserve(records.size());
  for (const auto& r : records) {
    if (r.vector.size() != dim)
      throw DataError("record '" + r.id + "' has dimension " + std::to_string(r.vector.size()) +
                      ", set expects " + std::to_string(dim));
    if (!r.vector.allFinite()) throw DataError("record '" + r.id + "' has non-finite values");
    if (!seen.insert(r.id).second) throw DataError("duplicate id '" + r.id + "'");
  }
}

Eigen::MatrixXd LabeledVectorSet::matrix() const {
  Eigen::MatrixXd m(dim, static_cast<Eigen::Index>(records.size()));
  for (std::size_t j = 0; j < records.size(); ++j) m.col(static_cast<Eigen::Index>(j)) = records[j].vector;
  return m;
}

LabeledVectorSet LabeledVectorSet::without_speakers() const {
  LabeledVectorSet out = *this;
  for (auto& r : out.records) r.speaker.reset();
  return out;
}

namespace {

void check_field(std::string_view f, std::size_t line) {
  if (f.empty()) throw ParseError("empty field", line);
}

}  // namespace

std::string format_vectors(const LabeledVectorSet& set) {
  std::string out = "dim=" + std::to_string(set.dim) + "\n";
  for (const auto& r : set.records) {
    out += r.id;
    out += '\t';
    out += r.speaker ? *r.speaker : "-";
    out += '\t';
    out += r.domain ? std::to_string(*r.domain) : "-";
    out += '\t';
    out += r.code ? *r.code : "-";
    out += '\t';
    io::append_row(out, r.vector, ',');
    out += '\n';
  }
  return out;
}

LabeledVectorSet parse_vectors(const std::string& text) {
  LabeledVectorSet set;
  std::unordered_set<std::string> seen;
  std::size_t line_no = 0;
  bool have_header = false;
  for (auto line : io::split(text, '\n')) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (io::trim(line).empty()) continue;
    if (!have_header) {
      if (line.substr(0, 4) != "dim=") throw ParseError("expected header 'dim=<int>'", line_no);
      const auto d = io::parse_int(line.substr(4), line_no);
      if (d < 1) throw ParseError("dimension must be >= 1", line_no);
      set.dim = static_cast<int>(d);
      have_header = true;
      continue;
    }
    const auto f = io::split(line, '\t');
    if (f.size() != 5)
      throw ParseError("expected 5 tab-separated fields, found " + std::to_string(f.size()), line_no);
    for (auto field : f) check_field(field, line_no);
    VectorRecord r;
    r.id = std::string(f[0]);
    if (f[1] != "-") r.speaker = std::string(f[1]);
    if (f[2] != "-") r.domain = static_cast<int>(io::parse_int(f[2], line_no));
    if (f[3] != "-") r.code = std::string(f[3]);
    r.vector = io::parse_row(f[4], ',', line_no);
    if (r.vector.size() != set.dim)
      throw ParseError("row has " + std::to_string(r.vector.size()) + " values, header says " +
                           std::to_string(set.dim),
                       line_no);
    if (!seen.insert(r.id).second) throw DataError("line " + std::to_string(line_no) + ": duplicate id '" + r.id + "'");
    set.records.push_back(std::move(r));
  }
  if (!have_header) throw ParseError("missing header 'dim=<int>'", line_no);
  return set;
}

void write_vectors(const LabeledVectorSet& set, const std::filesystem::path& path) {
  io::write_file(path, format_vectors(set));
}

LabeledVectorSet read_vectors(const std::filesystem::path& path) {
  try {
    return parse_vectors(io::read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.detail(), e.line());
  }
}

}  // namespace mdat
