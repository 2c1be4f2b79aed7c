#include "mdat/partition.hpp"

#include <limits>
#include <map>
#include <unordered_map>
#include <unordered_set>

#include "mdat/error.hpp"
#include "mdat/rng.hpp"
#include "mdat/text_io.hpp"

namespace mdat {

void DomainPartition::check() const {
  if (k < 1) throw DataError("partition: k must be >= 1");
  std::unordered_set<std::string> seen;
  for (const auto& [id, idx] : assignments) {
    if (idx < 0 || idx >= k)
      throw DataError("partition: '" + id + "' assigned " + std::to_string(idx) + " outside [0," +
                      std::to_string(k) + ")");
    if (!seen.insert(id).second) throw DataError("partition: duplicate id '" + id + "'");
  }
}

DomainPartition partition_by_code(const LabeledVectorSet& data) {
  std::map<std::string, int> codes;
  for (const auto& r : data.records) {
    if (!r.code) throw DataError("record '" + r.id + "' has no subset code");
    codes.emplace(*r.code, 0);
  }
  int next = 0;
  for (auto& [code, idx] : codes) idx = next++;
  DomainPartition p;
  p.k = std::max(1, next);
  for (const auto& r : data.records) p.assignments.emplace_back(r.id, codes.at(*r.code));
  return p;
}

DomainPartition single_partition(const LabeledVectorSet& data) {
  DomainPartition p;
  p.k = 1;
  for (const auto& r : data.records) p.assignments.emplace_back(r.id, 0);
  return p;
}

namespace {

// Returns inertia; writes nearest centroid (lowest index on ties) and distance.
double assign(const Eigen::MatrixXd& pts, const Eigen::MatrixXd& cents, std::vector<int>& labels,
              Eigen::VectorXd& dist) {
  double inertia = 0;
  for (Eigen::Index i = 0; i < pts.cols(); ++i) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < cents.cols(); ++c) {
      const double d = (pts.col(i) - cents.col(c)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(c);
      }
    }
    labels[i] = best;
    dist(i) = best_d;
    inertia += best_d;
  }
  return inertia;
}

Eigen::MatrixXd plus_plus_seed(const Eigen::MatrixXd& pts, int k, Rng& rng) {
  const Eigen::Index n = pts.cols();
  Eigen::MatrixXd cents(pts.rows(), k);
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  cents.col(0) = pts.col(pick(rng));
  Eigen::VectorXd d2 = (pts.colwise() - cents.col(0)).colwise().squaredNorm().transpose();
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    Eigen::Index chosen = 0;
    if (total > 0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng);
      chosen = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        target -= d2(i);
        if (target < 0 && d2(i) > 0) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = pick(rng);
    }
    cents.col(c) = pts.col(chosen);
    d2 = d2.cwiseMin((pts.colwise() - cents.col(c)).colwise().squaredNorm().transpose());
  }
  return cents;
}

KMeansResult lloyd(const Eigen::MatrixXd& points, int k, std::uint64_t seed, const KMeansOptions& opts) {
  const Eigen::Index n = points.cols();
  Rng rng(seed);
  KMeansResult r;
  r.centroids = plus_plus_seed(points, k, rng);
  r.labels.assign(static_cast<std::size_t>(n), 0);
  Eigen::VectorXd dist(n);

  for (int it = 0; it < opts.max_iter; ++it) {
    r.inertia_trace.push_back(assign(points, r.centroids, r.labels, dist));
    r.iterations = it + 1;

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(points.rows(), k);
    Eigen::VectorXi counts = Eigen::VectorXi::Zero(k);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.col(r.labels[i]) += points.col(i);
      ++counts(r.labels[i]);
    }
    Eigen::MatrixXd next = r.centroids;
    for (int c = 0; c < k; ++c) {
      if (counts(c) > 0) {
        next.col(c) = sums.col(c) / counts(c);
      } else {
        Eigen::Index far = 0;
        dist.maxCoeff(&far);
        next.col(c) = points.col(far);
        dist(far) = 0;
      }
    }
    const double shift = (next - r.centroids).colwise().norm().maxCoeff();
    r.centroids = std::move(next);
    if (shift < opts.tol) break;
  }
  r.inertia = assign(points, r.centroids, r.labels, dist);
  r.inertia_trace.push_back(r.inertia);
  return r;
}

}  // namespace

KMeansResult kmeans(const Eigen::MatrixXd& points, int k, std::uint64_t seed,
                    const KMeansOptions& opts) {
  const Eigen::Index n = points.cols();
  if (k < 1) throw ConfigError("kmeans: k must be >= 1");
  if (k > n)
    throw ConfigError("kmeans: k=" + std::to_string(k) + " exceeds the " + std::to_string(n) + " points");
  if (opts.max_iter < 1) throw ConfigError("kmeans: max_iter must be >= 1");
  if (opts.restarts < 1) throw ConfigError("kmeans: restarts must be >= 1");

  KMeansResult best = lloyd(points, k, seed, opts);
  for (int r = 1; r < opts.restarts; ++r) {
    KMeansResult next = lloyd(points, k, derive_seed(seed, static_cast<std::uint64_t>(r)), opts);
    if (next.inertia < best.inertia) best = std::move(next);
  }
  return best;
}

DomainPartition kmeans_partition(const LabeledVectorSet& data, int k, std::uint64_t seed,
                                 const KMeansOptions& opts) {
  auto km = kmeans(data.matrix(), k, seed, opts);
  DomainPartition p;
  p.k = k;
  for (std::size_t i = 0; i < data.size(); ++i) p.assignments.emplace_back(data.records[i].id, km.labels[i]);
  p.centroids = std::move(km.centroids);
  p.inertia = km.inertia;
  return p;
}

void apply_partition(LabeledVectorSet& data, const DomainPartition& p, int offset) {
  p.check();
  std::unordered_map<std::string, int> lookup(p.assignments.begin(), p.assignments.end());
  for (auto& r : data.records) {
    const auto it = lookup.find(r.id);
    if (it == lookup.end()) throw DataError("record '" + r.id + "' missing from partition");
    r.domain = offset + it->second;
  }
}

std::string format_partition(const DomainPartition& p) {
  std::string out = "k=" + std::to_string(p.k) + "\n";
  for (const auto& [id, idx] : p.assignments) out += id + "\t" + std::to_string(idx) + "\n";
  return out;
}

DomainPartition parse_partition(const std::string& text) {
  DomainPartition p;
  bool header = false;
  std::size_t line_no = 0;
  for (auto line : io::split(text, '\n')) {
    ++line_no;
    if (io::trim(line).empty()) continue;
    if (!header) {
      if (line.substr(0, 2) != "k=") throw ParseError("expected header 'k=<int>'", line_no);
      p.k = static_cast<int>(io::parse_int(line.substr(2), line_no));
      header = true;
      continue;
    }
    const auto f = io::split(io::trim(line), '\t');
    if (f.size() != 2) throw ParseError("expected 'id<TAB>domain_index'", line_no);
    p.assignments.emplace_back(std::string(f[0]), static_cast<int>(io::parse_int(f[1], line_no)));
  }
  if (!header) throw ParseError("missing header 'k=<int>'", line_no);
  p.check();
  return p;
}

void write_partition(const DomainPartition& p, const std::filesystem::path& path) {
  io::write_file(path, format_partition(p));
}

DomainPartition read_partition(const std::filesystem::path& path) {
  return parse_partition(io::read_file(path));
}

}  // namespace mdat
