#pragma once

// Domain labels for source/target sets: pass-through of provided subset codes
// or unsupervised k-means over the raw vectors.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mdat/vectors.hpp"

namespace mdat {

struct DomainPartition {
  std::vector<std::pair<std::string, int>> assignments;  // in data order
  int k = 0;
  std::optional<Eigen::MatrixXd> centroids;  // dim x k, k-means only
  double inertia = 0;

  void check() const;
};

/// One domain per distinct `code`, indices in sorted code order.
DomainPartition partition_by_code(const LabeledVectorSet& data);

/// Everything in domain 0.
DomainPartition single_partition(const LabeledVectorSet& data);

struct KMeansOptions {
  int max_iter = 100;
  double tol = 1e-8;
  /// Independent seedings; the run with the lowest final inertia is kept.
  int restarts = 10;
};

struct KMeansResult {
  std::vector<int> labels;
  Eigen::MatrixXd centroids;  // dim x k
  double inertia = 0;
  /// Inertia after every assignment step, ending with the final value.
  std::vector<double> inertia_trace;
  int iterations = 0;
};

/// Lloyd's algorithm with k-means++ seeding. `points` is dim x n. Ties go to
/// the lowest centroid index; an emptied cluster is re-seeded at the point
/// farthest from its current centroid. With several restarts the trace and
/// iteration count belong to the kept run.
KMeansResult kmeans(const Eigen::MatrixXd& points, int k, std::uint64_t seed,
                    const KMeansOptions& opts = {});

DomainPartition kmeans_partition(const LabeledVectorSet& data, int k, std::uint64_t seed,
                                 const KMeansOptions& opts = {});

/// Sets each record's domain to offset + assigned index. Throws DataError
/// if a record is missing from the partition.
void apply_partition(LabeledVectorSet& data, const DomainPartition& p, int offset = 0);

/// Text: header `k=<int>`, then `id<TAB>domain_index` per line.
std::string format_partition(const DomainPartition& p);
DomainPartition parse_partition(const std::string& text);
void write_partition(const DomainPartition& p, const std::filesystem::path& path);
DomainPartition read_partition(const std::filesystem::path& path);

}  // namespace mdat
