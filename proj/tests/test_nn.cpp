#include "doctest.h"

#include <cmath>
#include <random>

#include "mdat/nn.hpp"
#include "oracles.hpp"

using namespace mdat;
using nn::Activation;
using Layer = nn::DenseLayer<double>;

namespace {

Layer layer_of(Eigen::MatrixXd w, Eigen::VectorXd b, Activation a) { return {std::move(w), std::move(b), a}; }

Eigen::MatrixXd random_matrix(int r, int c, Rng& rng) {
  std::normal_distribution<double> n;
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Scalar loss 0.5 * sum(y .* y) with y the layer output; upstream is y.
double half_sq(const Layer& l, const Eigen::MatrixXd& x) {
  return 0.5 * nn::dense_forward<double>(l, x).output.squaredNorm();
}

}  // namespace

TEST_CASE("dense_forward examples") {
  const auto id = layer_of(Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Zero(2), Activation::Linear);
  Eigen::VectorXd x(2);
  x << 3, -1;
  CHECK(nn::dense_forward<double>(id, x).output == Eigen::MatrixXd(x));

  Eigen::MatrixXd w(1, 2);
  w << 1, 1;
  const auto relu = layer_of(w, Eigen::VectorXd::Constant(1, 0.5), Activation::ReLU);
  x << -2, 1;
  const auto c = nn::dense_forward<double>(relu, x);
  CHECK(c.output(0, 0) == 0.0);
  CHECK(c.pre_activation(0, 0) == doctest::Approx(-0.5));
  CHECK(c.input == Eigen::MatrixXd(x));

  const auto th = layer_of(2 * Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Ones(2), Activation::Tanh);
  x << 0.1, 0.2;
  const auto y = nn::dense_forward<double>(th, x).output;
  CHECK(y(0, 0) == doctest::Approx(std::tanh(1.2)).epsilon(1e-15));
  CHECK(y(1, 0) == doctest::Approx(std::tanh(1.4)).epsilon(1e-15));
}

TEST_CASE("dense_forward rejects a wrong input length") {
  const auto l = layer_of(Eigen::MatrixXd::Ones(2, 3), Eigen::VectorXd::Zero(2), Activation::Linear);
  CHECK_THROWS_AS(nn::dense_forward<double>(l, Eigen::VectorXd::Ones(2)), ShapeError);
}

TEST_CASE("dense_forward is pure") {
  Rng rng(3);
  const auto l = layer_of(random_matrix(3, 4, rng), random_matrix(3, 1, rng).col(0), Activation::Tanh);
  const Eigen::MatrixXd x = random_matrix(4, 5, rng);
  CHECK(nn::dense_forward<double>(l, x).output == nn::dense_forward<double>(l, x).output);
}

TEST_CASE("dense_backward through a linear identity layer") {
  const auto id = layer_of(Eigen::MatrixXd::Identity(3, 3), Eigen::VectorXd::Zero(3), Activation::Linear);
  Eigen::VectorXd x(3), g(3);
  x << 1, -2, 0.5;
  g << 0.3, 0.1, -0.7;
  const auto cache = nn::dense_forward<double>(id, x);
  const auto r = nn::dense_backward<double>(id, cache, g);
  CHECK(r.downstream == Eigen::MatrixXd(g));
  CHECK(r.gradient.weights.isApprox(g * x.transpose(), 1e-15));
  CHECK(r.gradient.bias == g);
}

TEST_CASE("dense_backward of a dead ReLU is zero") {
  const auto l = layer_of(Eigen::MatrixXd::Ones(2, 2), Eigen::VectorXd::Constant(2, -10), Activation::ReLU);
  Eigen::VectorXd x(2);
  x << 1, 2;
  const auto cache = nn::dense_forward<double>(l, x);
  const auto r = nn::dense_backward<double>(l, cache, Eigen::VectorXd::Ones(2));
  CHECK(r.gradient.weights.isZero(0));
  CHECK(r.gradient.bias.isZero(0));
  CHECK(r.downstream.isZero(0));
}

TEST_CASE("dense_backward rejects a wrong upstream shape") {
  const auto l = layer_of(Eigen::MatrixXd::Ones(2, 3), Eigen::VectorXd::Zero(2), Activation::Linear);
  const auto cache = nn::dense_forward<double>(l, Eigen::VectorXd::Ones(3));
  CHECK_THROWS_AS(nn::dense_backward<double>(l, cache, Eigen::VectorXd::Ones(3)), ShapeError);
}

TEST_CASE("dense_backward matches central finite differences") {
  const double h = 1e-5;
  for (Activation act : {Activation::Linear, Activation::Tanh, Activation::ReLU}) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      CAPTURE(seed);
      Rng rng(seed);
      auto l = layer_of(random_matrix(3, 2, rng), random_matrix(3, 1, rng).col(0), act);
      const Eigen::MatrixXd x = random_matrix(2, 4, rng);
      const auto cache = nn::dense_forward<double>(l, x);
      const auto r = nn::dense_backward<double>(l, cache, cache.output);
      double worst = 0;
      for (Eigen::Index i = 0; i < l.weights.size(); ++i) {
        double& p = l.weights.data()[i];
        const double keep = p;
        p = keep + h;
        const double up = half_sq(l, x);
        p = keep - h;
        const double down = half_sq(l, x);
        p = keep;
        worst = std::max(worst, oracle::rel_err((up - down) / (2 * h), r.gradient.weights.data()[i]));
      }
      for (Eigen::Index i = 0; i < l.bias.size(); ++i) {
        double& p = l.bias(i);
        const double keep = p;
        p = keep + h;
        const double up = half_sq(l, x);
        p = keep - h;
        const double down = half_sq(l, x);
        p = keep;
        worst = std::max(worst, oracle::rel_err((up - down) / (2 * h), r.gradient.bias(i)));
      }
      Eigen::MatrixXd xp = x;
      for (Eigen::Index i = 0; i < xp.size(); ++i) {
        const double keep = xp.data()[i];
        xp.data()[i] = keep + h;
        const double up = half_sq(l, xp);
        xp.data()[i] = keep - h;
        const double down = half_sq(l, xp);
        xp.data()[i] = keep;
        worst = std::max(worst, oracle::rel_err((up - down) / (2 * h), r.downstream.data()[i]));
      }
      CHECK(worst < 1e-6);
    }
  }
}

TEST_CASE("softmax_cross_entropy examples") {
  auto [loss, grad] = nn::softmax_cross_entropy<double>(Eigen::VectorXd::Zero(4), 2);
  CHECK(loss == doctest::Approx(std::log(4.0)).epsilon(1e-15));
  CHECK(grad(2) == doctest::Approx(-0.75));
  CHECK(grad(0) == doctest::Approx(0.25));

  Eigen::VectorXd logits(2);
  logits << 10, -10;
  std::tie(loss, grad) = nn::softmax_cross_entropy<double>(logits, 0);
  const double tail = std::exp(-20.0) / (1 + std::exp(-20.0));
  CHECK(loss == doctest::Approx(std::log1p(std::exp(-20.0))).epsilon(1e-9));
  CHECK(loss == doctest::Approx(2.06e-9).epsilon(1e-2));
  // grad[0] = softmax[0] - 1 is the negative one.
  CHECK(grad(0) == doctest::Approx(-tail).epsilon(1e-6));
  CHECK(grad(1) == doctest::Approx(tail).epsilon(1e-6));
}

TEST_CASE("softmax_cross_entropy is stable and well formed") {
  Eigen::VectorXd big(3);
  big << 1000, 999, -1000;
  const auto [loss, grad] = nn::softmax_cross_entropy<double>(big, 1);
  CHECK(std::isfinite(loss));
  CHECK(loss == doctest::Approx(std::log1p(std::exp(1.0)) ).epsilon(1e-12));

  Rng rng(9);
  for (int t = 0; t < 50; ++t) {
    const Eigen::VectorXd z = 5 * random_matrix(6, 1, rng).col(0);
    const auto [l, g] = nn::softmax_cross_entropy<double>(z, t % 6);
    CHECK(l >= 0);
    CHECK(std::abs(g.sum()) < 1e-12);
  }
}

TEST_CASE("softmax_cross_entropy gradient matches finite differences") {
  Rng rng(4);
  Eigen::VectorXd z = random_matrix(5, 1, rng).col(0);
  const auto [l, g] = nn::softmax_cross_entropy<double>(z, 3);
  const double h = 1e-5;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    Eigen::VectorXd up = z, down = z;
    up(i) += h;
    down(i) -= h;
    const double fd = (nn::softmax_cross_entropy<double>(up, 3).first -
                       nn::softmax_cross_entropy<double>(down, 3).first) / (2 * h);
    CHECK(oracle::rel_err(fd, g(i)) < 1e-6);
  }
}

TEST_CASE("softmax_cross_entropy label errors") {
  CHECK_THROWS_AS(nn::softmax_cross_entropy<double>(Eigen::VectorXd::Zero(3), 3), IndexError);
  CHECK_THROWS_AS(nn::softmax_cross_entropy<double>(Eigen::VectorXd::Zero(3), -1), IndexError);
  const int labels[2] = {0, 1};
  CHECK_THROWS_AS(nn::softmax_cross_entropy<double>(Eigen::MatrixXd::Zero(3, 3), labels), ShapeError);
}

TEST_CASE("grl_backward examples") {
  Eigen::VectorXd g(2);
  g << 1, 2;
  const Eigen::VectorXd r = nn::grl_backward(g, 0.5);
  CHECK(r(0) == -0.5);
  CHECK(r(1) == -1.0);
  CHECK(nn::grl_backward(g, 0.0).isZero(0));
  CHECK(nn::grl_backward(Eigen::VectorXd::Constant(1, -3.0), 1.0)(0) == 3.0);

  Rng rng(2);
  const Eigen::MatrixXd m = random_matrix(4, 3, rng);
  CHECK(nn::grl_backward(m, 1.0) == Eigen::MatrixXd(-m));
  CHECK_THROWS_AS(nn::grl_backward(m, -0.1), ConfigError);
}

TEST_CASE("sgd_step examples") {
  Eigen::VectorXd theta(2), g(2);
  theta << 1, 1;
  g << 1, -1;
  nn::sgd_step(theta, g, 0.1);
  CHECK(theta(0) == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(theta(1) == doctest::Approx(1.1).epsilon(1e-15));

  const Eigen::VectorXd keep = theta;
  nn::sgd_step(theta, Eigen::VectorXd::Zero(2), 0.1);
  CHECK(theta == keep);

  Eigen::VectorXd twice = keep, once = keep;
  nn::sgd_step(twice, g, 0.25);
  nn::sgd_step(twice, g, 0.25);
  nn::sgd_step(once, g, 0.5);
  CHECK(twice.isApprox(once, 1e-15));

  CHECK_THROWS_AS(nn::sgd_step(theta, Eigen::VectorXd::Zero(3), 0.1), ShapeError);
  CHECK_THROWS_AS(nn::sgd_step(theta, g, 0.0), ConfigError);
}

TEST_CASE("make_layer initializes within the scaled-uniform bound") {
  Rng a(7), b(7);
  const auto l = nn::make_layer<double>(30, 20, Activation::ReLU, a);
  CHECK(l.weights.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 50));
  CHECK(l.bias.isZero(0));
  CHECK(l == nn::make_layer<double>(30, 20, Activation::ReLU, b));
  CHECK_THROWS_AS(nn::make_layer<double>(0, 2, Activation::Linear, a), ConfigError);
}

TEST_CASE("single precision instantiation") {
  nn::DenseLayer<float> l{Eigen::MatrixXf::Identity(2, 2), Eigen::VectorXf::Zero(2), Activation::Tanh};
  const auto c = nn::dense_forward<float>(l, Eigen::VectorXf::Constant(2, 0.5f));
  CHECK(c.output(0, 0) == doctest::Approx(std::tanh(0.5f)));
}
