#pragma once

// Scoring backend: centering + whitening + length normalization followed by
// a two-covariance Gaussian PLDA.

#include <Eigen/Dense>

#include <filesystem>
#include <string>
#include <vector>

#include "mdat/trials.hpp"
#include "mdat/vectors.hpp"

namespace mdat {

struct Whitener {
  Eigen::VectorXd mean;
  Eigen::MatrixXd transform;  // symmetric inverse square root of the fit covariance
  int floored_dims = 0;       // eigenvalues raised to the floor during fitting

  Eigen::VectorXd apply(const Eigen::VectorXd& x) const { return transform * (x - mean); }
};

/// Relative eigenvalue floor used by fit_whitener.
inline constexpr double kWhiteningFloor = 1e-8;

/// `data` is dim x n; uses the maximum-likelihood (1/n) covariance.
Whitener fit_whitener(const Eigen::MatrixXd& data);
Whitener fit_whitener(const LabeledVectorSet& data);

/// x / ||x||. Throws DataError naming `id` for a zero vector.
Eigen::VectorXd length_normalize(const Eigen::VectorXd& x, const std::string& id = "<vector>");

/// Center, whiten, length-normalize.
Eigen::VectorXd preprocess(const Whitener& w, const Eigen::VectorXd& x, const std::string& id = "<vector>");

/// y ~ N(mu, between) per speaker, x = y + e with e ~ N(0, within).
struct PldaModel {
  Eigen::VectorXd mu;
  Eigen::MatrixXd between;
  Eigen::MatrixXd within;

  int dim() const { return static_cast<int>(mu.size()); }
  /// Throws ShapeError/DataError on shape, symmetry or definiteness violations.
  void check() const;
};

struct PldaFit {
  PldaModel model;
  /// Total log-likelihood of the initial estimate and after every EM iteration.
  std::vector<double> loglik;
  bool regularized = false;  // within-class covariance needed a ridge
};

/// `data` is dim x n with one speaker index per column.
PldaFit fit_plda(const Eigen::MatrixXd& data, const std::vector<int>& speakers, int iters);
PldaFit fit_plda(const LabeledVectorSet& data, int iters);

/// Exact marginal log-likelihood of speaker-grouped data.
double plda_log_likelihood(const PldaModel& model, const Eigen::MatrixXd& data,
                           const std::vector<int>& speakers);

/// Precomputed closed-form verification log-likelihood ratio.
class PldaScorer {
 public:
  explicit PldaScorer(const PldaModel& model);

  double score(const Eigen::VectorXd& enroll, const Eigen::VectorXd& test) const;
  int dim() const { return static_cast<int>(mu_.size()); }

 private:
  Eigen::VectorXd mu_;
  Eigen::MatrixXd q_;  // self terms
  Eigen::MatrixXd p_;  // cross term
  double offset_ = 0;
};

double plda_score(const PldaModel& model, const Eigen::VectorXd& enroll, const Eigen::VectorXd& test);

struct Backend {
  Whitener whitener;
  PldaModel plda;
  bool preprocess = true;
};

/// Fits the whitener on `whitening_data`, then PLDA on the preprocessed
/// `train` embeddings (which must carry speaker labels).
Backend fit_backend(const LabeledVectorSet& train, const Eigen::MatrixXd& whitening_data, int plda_iters,
                    bool preprocess = true, PldaFit* fit_info = nullptr);

/// Each side is centered, whitened and length-normalized (when enabled), then scored.
TrialScoreSet score_trials(const PldaModel& model, const Whitener& whitener,
                           const EmbeddingSet& enroll, const EmbeddingSet& test,
                           const TrialList& trials, bool preprocess = true);
TrialScoreSet score_trials(const Backend& backend, const EmbeddingSet& enroll,
                           const EmbeddingSet& test, const TrialList& trials);

void save_backend(const Backend& backend, const std::filesystem::path& path);
Backend load_backend(const std::filesystem::path& path);

}  // namespace mdat
