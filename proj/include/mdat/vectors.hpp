#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace mdat {

struct VectorRecord {
  std::string id;
  Eigen::VectorXd vector;
  std::optional<std::string> speaker;
  std::optional<int> domain;
  std::optional<std::string> code;

  bool operator==(const VectorRecord&) const = default;
};

/// Records sharing one dimension with unique ids. Holds source, target,
/// enroll and test vectors alike; adapted embeddings use the same type.
struct LabeledVectorSet {
  int dim = 0;
  std::vector<VectorRecord> records;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }

  /// Appends after checking the dimension; id uniqueness is checked by validate().
  void add(VectorRecord r);

  /// Throws DataError on non-uniform dimension, non-finite values or duplicate ids.
  void validate() const;

  /// dim x n, one column per record.
  Eigen::MatrixXd matrix() const;

  /// Copy with speaker labels removed.
  LabeledVectorSet without_speakers() const;

  bool operator==(const LabeledVectorSet&) const = default;
};

using EmbeddingSet = LabeledVectorSet;

/// Text format: header `dim=<int>`, then
/// `id<TAB>speaker|-<TAB>domain|-<TAB>code|-<TAB>v1,v2,...`.
std::string format_vectors(const LabeledVectorSet& set);
LabeledVectorSet parse_vectors(const std::string& text);

void write_vectors(const LabeledVectorSet& set, const std::filesystem::path& path);
LabeledVectorSet read_vectors(const std::filesystem::path& path);

}  // namespace mdat
