#include "mdat/backend.hpp"

#include <cmath>
#include <map>
#include <unordered_map>

#include "mdat/error.hpp"
#include "mdat/text_io.hpp"

namespace mdat {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2 pi)

Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m) { return 0.5 * (m + m.transpose()); }

double log_det_spd(const Eigen::MatrixXd& m) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) throw DataError("matrix is not positive definite");
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

// Ridge the within-class covariance until Cholesky succeeds.
bool ensure_pd(Eigen::MatrixXd& m) {
  bool changed = false;
  const Eigen::Index d = m.rows();
  double ridge = 1e-6 * std::max(m.trace() / static_cast<double>(d), 1e-12);
  while (Eigen::LLT<Eigen::MatrixXd>(m).info() != Eigen::Success) {
    m.diagonal().array() += ridge;
    ridge *= 10;
    changed = true;
  }
  return changed;
}

struct SpeakerStats {
  int count = 0;
  Eigen::VectorXd mean;
  Eigen::MatrixXd scatter;  // sum of (x - mean)(x - mean)^T
};

std::vector<SpeakerStats> group(const Eigen::MatrixXd& data, const std::vector<int>& speakers) {
  if (static_cast<Eigen::Index>(speakers.size()) != data.cols())
    throw ShapeError("speaker label count does not match data columns");
  std::map<int, std::vector<Eigen::Index>> members;
  for (Eigen::Index j = 0; j < data.cols(); ++j) members[speakers[j]].push_back(j);
  std::vector<SpeakerStats> out;
  out.reserve(members.size());
  for (const auto& [spk, cols] : members) {
    SpeakerStats s;
    s.count = static_cast<int>(cols.size());
    s.mean = Eigen::VectorXd::Zero(data.rows());
    for (auto c : cols) s.mean += data.col(c);
    s.mean /= s.count;
    s.scatter = Eigen::MatrixXd::Zero(data.rows(), data.rows());
    for (auto c : cols) {
      const Eigen::VectorXd d = data.col(c) - s.mean;
      s.scatter.selfadjointView<Eigen::Lower>().rankUpdate(d);
    }
    s.scatter = Eigen::MatrixXd(s.scatter.selfadjointView<Eigen::Lower>());
    out.push_back(std::move(s));
  }
  return out;
}

double log_likelihood(const PldaModel& m, const std::vector<SpeakerStats>& stats) {
  const double d = static_cast<double>(m.dim());
  Eigen::LLT<Eigen::MatrixXd> within(m.within);
  if (within.info() != Eigen::Success) throw DataError("within-class covariance is not positive definite");
  const double logdet_w = 2.0 * within.matrixLLT().diagonal().array().log().sum();
  std::map<int, Eigen::LLT<Eigen::MatrixXd>> marg;
  double total = 0;
  for (const auto& s : stats) {
    const double n = s.count;
    auto it = marg.find(s.count);
    if (it == marg.end()) it = marg.emplace(s.count, Eigen::LLT<Eigen::MatrixXd>(m.between + m.within / n)).first;
    const auto& llt = it->second;
    const Eigen::VectorXd c = s.mean - m.mu;
    const double logdet_m = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    total += -0.5 * (d * kLog2Pi + logdet_m + c.dot(llt.solve(c)));
    total += -0.5 * (n - 1) * (d * kLog2Pi + logdet_w) - 0.5 * d * std::log(n) -
             0.5 * within.solve(s.scatter).trace();
  }
  return total;
}

}  // namespace

Whitener fit_whitener(const Eigen::MatrixXd& data) {
  if (data.cols() < 1 || data.rows() < 1) throw DataError("fit_whitener: empty data");
  Whitener w;
  w.mean = data.rowwise().mean();
  const Eigen::MatrixXd centered = data.colwise() - w.mean;
  const Eigen::MatrixXd cov = centered * centered.transpose() / static_cast<double>(data.cols());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  Eigen::VectorXd lambda = eig.eigenvalues();
  const double top = lambda.maxCoeff();
  const double floor = top > 0 ? kWhiteningFloor * top : 1.0;
  for (Eigen::Index i = 0; i < lambda.size(); ++i)
    if (lambda(i) < floor) {
      lambda(i) = floor;
      ++w.floored_dims;
    }
  w.transform = eig.eigenvectors() * lambda.cwiseInverse().cwiseSqrt().asDiagonal() *
                eig.eigenvectors().transpose();
  return w;
}

Whitener fit_whitener(const LabeledVectorSet& data) { return fit_whitener(data.matrix()); }

Eigen::VectorXd length_normalize(const Eigen::VectorXd& x, const std::string& id) {
  const double norm = x.norm();
  if (!(norm > 0) || !std::isfinite(norm))
    throw DataError("length_normalize: cannot normalize zero or non-finite vector '" + id + "'");
  return x / norm;
}

Eigen::VectorXd preprocess(const Whitener& w, const Eigen::VectorXd& x, const std::string& id) {
  if (x.size() != w.mean.size())
    throw ShapeError("preprocess: vector '" + id + "' has dimension " + std::to_string(x.size()) +
                     ", whitener expects " + std::to_string(w.mean.size()));
  return length_normalize(w.apply(x), id);
}

void PldaModel::check() const {
  const Eigen::Index d = mu.size();
  if (d < 1 || between.rows() != d || between.cols() != d || within.rows() != d || within.cols() != d)
    throw ShapeError("PLDA model dimensions are inconsistent");
  const double tol = 1e-10 * std::max(1.0, std::max(between.cwiseAbs().maxCoeff(), within.cwiseAbs().maxCoeff()));
  if ((between - between.transpose()).cwiseAbs().maxCoeff() > tol ||
      (within - within.transpose()).cwiseAbs().maxCoeff() > tol)
    throw DataError("PLDA covariances must be symmetric");
  if (Eigen::LLT<Eigen::MatrixXd>(within).info() != Eigen::Success)
    throw DataError("PLDA within-class covariance must be positive definite");
}

PldaFit fit_plda(const Eigen::MatrixXd& data, const std::vector<int>& speakers, int iters) {
  if (iters < 0) throw ConfigError("fit_plda: iteration count must be >= 0");
  const auto stats = group(data, speakers);
  if (stats.size() < 2) throw DataError("fit_plda: need at least 2 speakers");
  bool any_multi = false;
  for (const auto& s : stats) any_multi |= s.count >= 2;
  if (!any_multi) throw DataError("fit_plda: need at least one speaker with 2 or more sessions");

  const Eigen::Index d = data.rows();
  const double n_total = static_cast<double>(data.cols());
  const double n_spk = static_cast<double>(stats.size());

  PldaFit fit;
  PldaModel& m = fit.model;
  m.mu = data.rowwise().mean();
  m.within = Eigen::MatrixXd::Zero(d, d);
  m.between = Eigen::MatrixXd::Zero(d, d);
  for (const auto& s : stats) {
    m.within += s.scatter;
    const Eigen::VectorXd c = s.mean - m.mu;
    m.between.selfadjointView<Eigen::Lower>().rankUpdate(c);
  }
  m.between = Eigen::MatrixXd(m.between.selfadjointView<Eigen::Lower>()) / n_spk;
  m.within /= n_total;
  fit.regularized |= ensure_pd(m.within);
  fit.loglik.push_back(log_likelihood(m, stats));

  for (int it = 0; it < iters; ++it) {
    // E-step: posterior of each speaker's latent mean, without inverting between.
    std::map<int, std::pair<Eigen::MatrixXd, Eigen::MatrixXd>> gain;  // count -> (A, C)
    std::vector<Eigen::VectorXd> post_mean(stats.size());
    for (std::size_t s = 0; s < stats.size(); ++s) {
      const int n = stats[s].count;
      auto g = gain.find(n);
      if (g == gain.end()) {
        const Eigen::MatrixXd marg = m.between + m.within / static_cast<double>(n);
        const Eigen::MatrixXd a = marg.llt().solve(m.between).transpose();  // between * marg^-1
        g = gain.emplace(n, std::make_pair(a, symmetrize(m.between - a * m.between))).first;
      }
      post_mean[s] = m.mu + g->second.first * (stats[s].mean - m.mu);
    }
    // M-step.
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(d);
    for (const auto& pm : post_mean) mu += pm;
    mu /= n_spk;
    Eigen::MatrixXd between = Eigen::MatrixXd::Zero(d, d);
    Eigen::MatrixXd within = Eigen::MatrixXd::Zero(d, d);
    for (std::size_t s = 0; s < stats.size(); ++s) {
      const double n = stats[s].count;
      const Eigen::MatrixXd& cov = gain.at(stats[s].count).second;
      const Eigen::VectorXd db = post_mean[s] - mu;
      const Eigen::VectorXd dw = stats[s].mean - post_mean[s];
      between += cov + db * db.transpose();
      within += stats[s].scatter + n * (dw * dw.transpose() + cov);
    }
    m.mu = mu;
    m.between = symmetrize(between / n_spk);
    m.within = symmetrize(within / n_total);
    fit.regularized |= ensure_pd(m.within);
    fit.loglik.push_back(log_likelihood(m, stats));
  }
  return fit;
}

PldaFit fit_plda(const LabeledVectorSet& data, int iters) {
  std::map<std::string, int> index;
  std::vector<int> labels;
  labels.reserve(data.size());
  for (const auto& r : data.records) {
    if (!r.speaker) throw DataError("fit_plda: record '" + r.id + "' has no speaker label");
    labels.push_back(index.emplace(*r.speaker, static_cast<int>(index.size())).first->second);
  }
  return fit_plda(data.matrix(), labels, iters);
}

double plda_log_likelihood(const PldaModel& model, const Eigen::MatrixXd& data,
                           const std::vector<int>& speakers) {
  model.check();
  return log_likelihood(model, group(data, speakers));
}

PldaScorer::PldaScorer(const PldaModel& model) : mu_(model.mu) {
  model.check();
  const Eigen::MatrixXd total = model.between + model.within;
  Eigen::LLT<Eigen::MatrixXd> total_llt(total);
  const Eigen::MatrixXd total_inv = total_llt.solve(Eigen::MatrixXd::Identity(dim(), dim()));
  // Schur complement of the same-speaker joint covariance [[T, B], [B, T]].
  const Eigen::MatrixXd schur = symmetrize(total - model.between * total_inv * model.between);
  Eigen::LLT<Eigen::MatrixXd> schur_llt(schur);
  if (schur_llt.info() != Eigen::Success) throw DataError("PLDA joint covariance is not positive definite");
  const Eigen::MatrixXd schur_inv = schur_llt.solve(Eigen::MatrixXd::Identity(dim(), dim()));
  q_ = symmetrize(total_inv - schur_inv);
  p_ = symmetrize(total_inv * model.between * schur_inv);
  offset_ = 0.5 * (log_det_spd(total) - log_det_spd(schur));
}

double PldaScorer::score(const Eigen::VectorXd& enroll, const Eigen::VectorXd& test) const {
  if (enroll.size() != mu_.size() || test.size() != mu_.size())
    throw ShapeError("plda_score: vector dimension does not match model");
  const Eigen::VectorXd e = enroll - mu_;
  const Eigen::VectorXd t = test - mu_;
  return 0.5 * e.dot(q_ * e) + 0.5 * t.dot(q_ * t) + e.dot(p_ * t) + offset_;
}

double plda_score(const PldaModel& model, const Eigen::VectorXd& enroll, const Eigen::VectorXd& test) {
  return PldaScorer(model).score(enroll, test);
}

Backend fit_backend(const LabeledVectorSet& train, const Eigen::MatrixXd& whitening_data, int plda_iters,
                    bool preprocess_enabled, PldaFit* fit_info) {
  Backend b;
  b.preprocess = preprocess_enabled;
  if (preprocess_enabled) {
    b.whitener = fit_whitener(whitening_data);
  } else {
    b.whitener.mean = Eigen::VectorXd::Zero(train.dim);
    b.whitener.transform = Eigen::MatrixXd::Identity(train.dim, train.dim);
  }
  LabeledVectorSet prepared = train;
  if (preprocess_enabled)
    for (auto& r : prepared.records) r.vector = preprocess(b.whitener, r.vector, r.id);
  auto fit = fit_plda(prepared, plda_iters);
  b.plda = fit.model;
  if (fit_info) *fit_info = std::move(fit);
  return b;
}

TrialScoreSet score_trials(const PldaModel& model, const Whitener& whitener,
                           const EmbeddingSet& enroll, const EmbeddingSet& test,
                           const TrialList& trials, bool preprocess_enabled) {
  const PldaScorer scorer(model);
  // Both sides go through this one lambda.
  auto prepare = [&](const EmbeddingSet& set) {
    std::unordered_map<std::string, Eigen::VectorXd> out;
    out.reserve(set.size());
    for (const auto& r : set.records)
      out.emplace(r.id, preprocess_enabled ? preprocess(whitener, r.vector, r.id) : r.vector);
    return out;
  };
  const auto enroll_vecs = prepare(enroll);
  const auto test_vecs = prepare(test);

  TrialScoreSet out;
  out.reserve(trials.size());
  for (const auto& t : trials) {
    const auto e = enroll_vecs.find(t.enroll);
    if (e == enroll_vecs.end()) throw DataError("score_trials: unknown enroll id '" + t.enroll + "'");
    const auto s = test_vecs.find(t.test);
    if (s == test_vecs.end()) throw DataError("score_trials: unknown test id '" + t.test + "'");
    out.push_back({t.enroll, t.test, t.key, scorer.score(e->second, s->second)});
  }
  return out;
}

TrialScoreSet score_trials(const Backend& backend, const EmbeddingSet& enroll,
                           const EmbeddingSet& test, const TrialList& trials) {
  return score_trials(backend.plda, backend.whitener, enroll, test, trials, backend.preprocess);
}

namespace {

void put_matrix(std::string& out, const char* name, const Eigen::MatrixXd& m) {
  out += name;
  out += ' ' + std::to_string(m.rows()) + ' ' + std::to_string(m.cols()) + '\n';
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    io::append_row(out, m.row(r).transpose(), ' ');
    out += '\n';
  }
}

Eigen::MatrixXd get_matrix(const std::vector<std::string_view>& lines, std::size_t& pos, const char* name) {
  if (pos >= lines.size()) throw ParseError(std::string("missing '") + name + "'", pos + 1);
  const auto head = io::split(io::trim(lines[pos]), ' ');
  if (head.size() != 3 || head[0] != name) throw ParseError(std::string("expected '") + name + "'", pos + 1);
  const auto rows = io::parse_int(head[1], pos + 1);
  const auto cols = io::parse_int(head[2], pos + 1);
  ++pos;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r, ++pos) {
    if (pos >= lines.size()) throw ParseError("truncated matrix", pos + 1);
    const auto row = io::parse_row(lines[pos], ' ', pos + 1);
    if (row.size() != cols) throw ParseError("matrix row has wrong length", pos + 1);
    m.row(r) = row.transpose();
  }
  return m;
}

}  // namespace

void save_backend(const Backend& b, const std::filesystem::path& path) {
  std::string out = "mdat-backend 1\npreprocess " + std::to_string(b.preprocess ? 1 : 0) + "\n";
  put_matrix(out, "whiten_mean", b.whitener.mean);
  put_matrix(out, "whiten_transform", b.whitener.transform);
  put_matrix(out, "plda_mu", b.plda.mu);
  put_matrix(out, "plda_between", b.plda.between);
  put_matrix(out, "plda_within", b.plda.within);
  io::write_file(path, out);
}

Backend load_backend(const std::filesystem::path& path) {
  const std::string text = io::read_file(path);
  auto lines = io::split(text, '\n');
  if (lines.size() < 2 || io::trim(lines[0]) != "mdat-backend 1") throw ParseError("not a backend file", 1);
  const auto pre = io::split(io::trim(lines[1]), ' ');
  if (pre.size() != 2 || pre[0] != "preprocess") throw ParseError("expected 'preprocess'", 2);
  Backend b;
  b.preprocess = io::parse_int(pre[1], 2) != 0;
  std::size_t pos = 2;
  b.whitener.mean = get_matrix(lines, pos, "whiten_mean");
  b.whitener.transform = get_matrix(lines, pos, "whiten_transform");
  b.plda.mu = get_matrix(lines, pos, "plda_mu");
  b.plda.between = get_matrix(lines, pos, "plda_between");
  b.plda.within = get_matrix(lines, pos, "plda_within");
  b.plda.check();
  return b;
}

}  // namespace mdat
