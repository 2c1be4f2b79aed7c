#include "doctest.h"

#include <cmath>
#include <map>
#include <set>

#include "mdat/datagen.hpp"
#include "mdat/pipeline.hpp"

using namespace mdat;

namespace {

Eigen::VectorXd mean_of(const LabeledVectorSet& s, const std::string& code = "") {
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(s.dim);
  int n = 0;
  for (const auto& r : s.records)
    if (code.empty() || r.code == code) {
      sum += r.vector;
      ++n;
    }
  return sum / n;
}

}  // namespace

TEST_CASE("generation is deterministic per seed") {
  const auto spec = default_spec(2, 2, 3.0, 5, 10);
  const auto a = generate(spec);
  const auto b = generate(spec);
  CHECK(a.source == b.source);
  CHECK(a.target == b.target);
  CHECK(a.enroll == b.enroll);
  CHECK(a.test == b.test);
  CHECK(a.trials == b.trials);
  CHECK_FALSE(generate(default_spec(2, 2, 3.0, 6, 10)).source == a.source);
}

TEST_CASE("population sizes, labels and trials") {
  auto spec = default_spec(3, 2, 3.0, 1, 8);
  spec.source = {12, 4, spec.source.domains};
  spec.target = {9, 3, spec.target.domains};
  spec.eval_speakers = 7;
  spec.eval_sessions = 4;
  const auto d = generate(spec);
  CHECK(d.source.size() == 48);
  CHECK(d.target.size() == 27);
  CHECK(d.enroll.size() == 7);
  CHECK(d.test.size() == 21);
  CHECK(d.trials.size() == 7 * 21);
  int targets = 0;
  for (const auto& t : d.trials) targets += t.key == TrialKey::Target;
  CHECK(targets == 21);
  CHECK_NOTHROW(d.source.validate());
  CHECK_NOTHROW(d.target.validate());

  for (const auto& r : d.source.records) {
    CHECK(r.speaker);
    CHECK(r.code);
    CHECK_FALSE(r.domain);
  }
  for (const auto* s : {&d.target, &d.enroll, &d.test})
    for (const auto& r : s->records) CHECK_FALSE(r.speaker);

  // Session j of speaker s lands in domain (s + j) mod D.
  CHECK(d.source.records[0].code == "S1");
  CHECK(d.source.records[1].code == "S2");
  CHECK(d.source.records[4].code == "S2");
  CHECK(d.target.records[3].code == "T2");
}

TEST_CASE("source and target speakers are disjoint") {
  auto spec = default_spec(2, 2, 3.0, 3, 6);
  spec.reveal_speakers = true;
  const auto d = generate(spec);
  std::set<std::string> src, other;
  for (const auto& r : d.source.records) src.insert(*r.speaker);
  for (const auto* s : {&d.target, &d.enroll, &d.test})
    for (const auto& r : s->records) {
      REQUIRE(r.speaker);
      other.insert(*r.speaker);
    }
  for (const auto& s : other) CHECK(src.count(s) == 0);
}

TEST_CASE("zero shift and one domain gives matching source and target distributions") {
  auto spec = default_spec(1, 1, 0.0, 2, 10);
  spec.source = {400, 4, spec.source.domains};
  spec.target = {400, 4, spec.target.domains};
  const auto d = generate(spec);
  // Session means share the speaker factor, so the standard error uses speaker counts.
  const double var = spec.sigma_between * spec.sigma_between + spec.sigma_within * spec.sigma_within / 4;
  const double se = std::sqrt(2 * var / 400);
  const Eigen::VectorXd diff = mean_of(d.source) - mean_of(d.target);
  for (Eigen::Index i = 0; i < diff.size(); ++i) CHECK(std::abs(diff(i)) < 3 * se);
}

TEST_CASE("per-domain means sit at the configured shift") {
  auto spec = default_spec(2, 1, 4.0, 9, 6);
  spec.source = {600, 2, spec.source.domains};
  const auto d = generate(spec);
  const double se = std::sqrt((spec.sigma_between * spec.sigma_between + spec.sigma_within * spec.sigma_within) / 600);
  for (const auto& dom : spec.source.domains) {
    CHECK(dom.shift.norm() == doctest::Approx(4.0));
    const Eigen::VectorXd err = mean_of(d.source, dom.name) - dom.shift;
    for (Eigen::Index i = 0; i < err.size(); ++i) CHECK(std::abs(err(i)) < 3.5 * se);
  }
}

TEST_CASE("opposite shifts are linearly separable") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto spec = default_spec(2, 1, 5.0, seed, 10);
    spec.source.domains[0].shift = 5 * Eigen::VectorXd::Unit(10, 0);
    spec.source.domains[1].shift = -5 * Eigen::VectorXd::Unit(10, 0);
    auto d = generate(spec);
    for (auto& r : d.source.records) r.domain = r.code == "S1" ? 0 : 1;
    const auto p = linear_domain_probe(d.source, seed);
    CHECK(p.accuracy > 0.95);
  }
}

TEST_CASE("shift sharing") {
  const auto own = default_spec(3, 2, 2.0, 4, 20, 0.0);
  const auto all = default_spec(3, 2, 2.0, 4, 20, 1.0);
  CHECK((all.source.domains[0].shift - all.source.domains[2].shift).norm() < 1e-12);
  CHECK((own.source.domains[0].shift - own.source.domains[2].shift).norm() > 0.5);
  CHECK_THROWS_AS(default_spec(2, 2, 1.0, 1, 10, 1.5), ConfigError);
  CHECK_THROWS_AS(default_spec(0, 2, 1.0, 1), ConfigError);
}

TEST_CASE("rotated channel noise changes the covariance shape") {
  auto spec = default_spec(1, 1, 0.0, 8, 4);
  spec.target.domains[0].rotation_seed = 77;
  spec.source = {2000, 2, spec.source.domains};
  spec.target = {2000, 2, spec.target.domains};
  spec.sigma_between = 0;
  const auto d = generate(spec);
  auto cov = [](const LabeledVectorSet& s) {
    const Eigen::MatrixXd m = s.matrix();
    const Eigen::MatrixXd c = m.colwise() - m.rowwise().mean();
    return Eigen::MatrixXd(c * c.transpose() / static_cast<double>(m.cols()));
  };
  const Eigen::MatrixXd src = cov(d.source), tgt = cov(d.target);
  CHECK(std::abs(src.trace() - tgt.trace()) / src.trace() < 0.1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(tgt);
  CHECK(es.eigenvalues().maxCoeff() / es.eigenvalues().minCoeff() > 4.0);
}

TEST_CASE("random_rotation is orthogonal and seeded") {
  const Eigen::MatrixXd q = random_rotation(6, 3);
  CHECK((q.transpose() * q - Eigen::MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(q == random_rotation(6, 3));
  CHECK_FALSE(q == random_rotation(6, 4));
}

TEST_CASE("spec validation") {
  auto spec = default_spec(2, 2, 1.0, 1, 5);
  spec.eval_sessions = 1;
  CHECK_THROWS_AS(generate(spec), ConfigError);
  spec = default_spec(2, 2, 1.0, 1, 5);
  spec.target.domains[1].name = "S1";
  CHECK_THROWS_AS(generate(spec), ConfigError);
  spec = default_spec(2, 2, 1.0, 1, 5);
  spec.source.domains[0].shift = Eigen::VectorXd::Zero(4);
  CHECK_THROWS_AS(generate(spec), ConfigError);
  spec = default_spec(2, 2, 1.0, 1, 5);
  spec.source.domains[0].scale = 0;
  CHECK_THROWS_AS(generate(spec), ConfigError);
  spec = default_spec(2, 2, 1.0, 1, 5);
  spec.source.speakers = 0;
  CHECK_THROWS_AS(generate(spec), ConfigError);
}
