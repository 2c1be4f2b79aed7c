#include "mdat/datagen.hpp"

#include <cmath>
#include <cstdio>
#include <set>

#include "mdat/error.hpp"
#include "mdat/rng.hpp"

namespace mdat {

namespace {

std::string make_id(const char* prefix, int speaker, int session) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_s%04d_%02d", prefix, speaker, session);
  return buf;
}

std::string make_speaker(const char* prefix, int speaker) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_spk%04d", prefix, speaker);
  return buf;
}

Eigen::VectorXd gaussian(int dim, double sigma, Rng& rng) {
  std::normal_distribution<double> n(0.0, sigma);
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v(i) = n(rng);
  return v;
}

// Per-domain map from standard normal draws to channel noise.
struct Channel {
  Eigen::VectorXd shift;
  Eigen::MatrixXd mixing;  // dim x dim
};

std::vector<Channel> channels(const PopulationSpec& pop, int dim, double sigma_w) {
  std::vector<Channel> out;
  for (const auto& d : pop.domains) {
    Channel c;
    c.shift = d.shift;
    if (d.rotation_seed) {
      // Spectrum linearly spaced in [0.2, 1.8] (mean 1), then rotated.
      Eigen::VectorXd spectrum = Eigen::VectorXd::LinSpaced(dim, 0.2, 1.8);
      if (dim == 1) spectrum.setOnes();
      c.mixing = sigma_w * d.scale * random_rotation(dim, *d.rotation_seed) *
                 spectrum.cwiseSqrt().asDiagonal();
    } else {
      c.mixing = sigma_w * d.scale * Eigen::MatrixXd::Identity(dim, dim);
    }
    out.push_back(std::move(c));
  }
  return out;
}

struct Draw {
  int speaker;
  int session;
  int domain;
  Eigen::VectorXd vector;
};

std::vector<Draw> draw_population(const PopulationSpec& pop, int sessions, int speakers,
                                  const GenSpec& spec, std::uint64_t seed) {
  const auto chans = channels(pop, spec.dim, spec.sigma_within);
  const int n_dom = static_cast<int>(chans.size());
  std::vector<Draw> out;
  out.reserve(static_cast<std::size_t>(speakers) * static_cast<std::size_t>(sessions));
  for (int s = 0; s < speakers; ++s) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(s)));
    const Eigen::VectorXd mean = gaussian(spec.dim, spec.sigma_between, rng);
    for (int j = 0; j < sessions; ++j) {
      const int d = (s + j) % n_dom;
      Eigen::VectorXd x = mean + chans[d].shift + chans[d].mixing * gaussian(spec.dim, 1.0, rng);
      out.push_back({s, j, d, std::move(x)});
    }
  }
  return out;
}

}  // namespace

void GenSpec::check() const {
  if (dim < 1) throw ConfigError("gen: dim must be >= 1");
  for (const auto* pop : {&source, &target}) {
    if (pop->speakers < 1 || pop->sessions_per_speaker < 1)
      throw ConfigError("gen: speaker and session counts must be >= 1");
    if (pop->domains.empty()) throw ConfigError("gen: each population needs at least one domain");
  }
  if (eval_speakers < 1) throw ConfigError("gen: eval_speakers must be >= 1");
  if (eval_sessions < 2)
    throw ConfigError("gen: eval_sessions must be >= 2 to split enroll and test");
  if (!(sigma_between >= 0) || !(sigma_within > 0)) throw ConfigError("gen: invalid sigma");
  std::set<std::string> names;
  for (const auto* pop : {&source, &target})
    for (const auto& d : pop->domains) {
      if (!names.insert(d.name).second) throw ConfigError("gen: duplicate domain name '" + d.name + "'");
      if (d.shift.size() != dim) throw ConfigError("gen: shift of domain '" + d.name + "' has wrong length");
      if (!(d.scale > 0)) throw ConfigError("gen: scale of domain '" + d.name + "' must be > 0");
    }
}

Eigen::MatrixXd random_rotation(int dim, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd a(dim, dim);
  std::normal_distribution<double> n;
  for (int j = 0; j < dim; ++j)
    for (int i = 0; i < dim; ++i) a(i, j) = n(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ();
  // Sign fix makes the distribution uniform over O(dim).
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < dim; ++j)
    if (r(j, j) < 0) q.col(j) *= -1;
  return q;
}

GenSpec default_spec(int source_domains, int target_domains, double shift, std::uint64_t seed, int dim,
                     double shared) {
  if (source_domains < 1 || target_domains < 1) throw ConfigError("gen: domain counts must be >= 1");
  if (dim < 1) throw ConfigError("gen: dim must be >= 1");
  if (!(shared >= 0 && shared <= 1)) throw ConfigError("gen: shift sharing must lie in [0, 1]");
  GenSpec spec;
  spec.dim = dim;
  spec.seed = seed;
  auto direction = [&](const std::string& stage) {
    Rng rng(derive_seed(seed, stage));
    return Eigen::VectorXd(gaussian(dim, 1.0, rng).normalized());
  };
  auto make = [&](const char* prefix, int i, const Eigen::VectorXd& common) {
    DomainSpec d;
    d.name = std::string(prefix) + std::to_string(i + 1);
    const Eigen::VectorXd own = direction("shift/" + d.name);
    d.shift = shift * (std::sqrt(shared) * common + std::sqrt(1 - shared) * own).normalized();
    return d;
  };
  const Eigen::VectorXd src_common = direction("shift/source");
  const Eigen::VectorXd tgt_common = direction("shift/target");
  for (int i = 0; i < source_domains; ++i) spec.source.domains.push_back(make("S", i, src_common));
  for (int i = 0; i < target_domains; ++i) spec.target.domains.push_back(make("T", i, tgt_common));
  return spec;
}

SyntheticData generate(const GenSpec& spec) {
  spec.check();
  SyntheticData out;
  out.source.dim = out.target.dim = out.enroll.dim = out.test.dim = spec.dim;

  for (auto& d : draw_population(spec.source, spec.source.sessions_per_speaker, spec.source.speakers, spec,
                                 derive_seed(spec.seed, "source"))) {
    VectorRecord r;
    r.id = make_id("src", d.speaker, d.session);
    r.speaker = make_speaker("src", d.speaker);
    r.code = spec.source.domains[d.domain].name;
    r.vector = std::move(d.vector);
    out.source.records.push_back(std::move(r));
  }
  for (auto& d : draw_population(spec.target, spec.target.sessions_per_speaker, spec.target.speakers, spec,
                                 derive_seed(spec.seed, "target"))) {
    VectorRecord r;
    r.id = make_id("tgt", d.speaker, d.session);
    if (spec.reveal_speakers) r.speaker = make_speaker("tgt", d.speaker);
    r.code = spec.target.domains[d.domain].name;
    r.vector = std::move(d.vector);
    out.target.records.push_back(std::move(r));
  }

  std::vector<std::string> enroll_spk, test_spk;
  for (auto& d : draw_population(spec.target, spec.eval_sessions, spec.eval_speakers, spec,
                                 derive_seed(spec.seed, "eval"))) {
    VectorRecord r;
    r.id = make_id("evl", d.speaker, d.session);
    const std::string spk = make_speaker("evl", d.speaker);
    if (spec.reveal_speakers) r.speaker = spk;
    r.code = spec.target.domains[d.domain].name;
    r.vector = std::move(d.vector);
    if (d.session == 0) {
      enroll_spk.push_back(spk);
      out.enroll.records.push_back(std::move(r));
    } else {
      test_spk.push_back(spk);
      out.test.records.push_back(std::move(r));
    }
  }
  out.trials.reserve(out.enroll.size() * out.test.size());
  for (std::size_t e = 0; e < out.enroll.size(); ++e)
    for (std::size_t t = 0; t < out.test.size(); ++t)
      out.trials.push_back({out.enroll.records[e].id, out.test.records[t].id,
                            enroll_spk[e] == test_spk[t] ? TrialKey::Target : TrialKey::Nontarget});
  return out;
}

}  // namespace mdat
