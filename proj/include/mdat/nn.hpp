#pragma once

// Dense feed-forward building blocks with hand-written backpropagation.
//
// Batches are matrices whose columns are samples; a single vector is a
// one-column batch. Every routine is a pure function of its arguments except
// sgd_step, which updates parameters in place.

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "mdat/error.hpp"
#include "mdat/rng.hpp"

namespace mdat::nn {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Non-deduced so any Eigen expression binds once Scalar is known.
template <typename Scalar>
using ConstRef = std::type_identity_t<Eigen::Ref<const Matrix<Scalar>>>;

enum class Activation { Linear, Tanh, ReLU };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::Linear: return "linear";
    case Activation::Tanh: return "tanh";
    case Activation::ReLU: return "relu";
  }
  return "?";
}

inline Activation parse_activation(std::string_view s) {
  if (s == "linear") return Activation::Linear;
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::ReLU;
  throw ConfigError("unknown activation '" + std::string(s) + "'");
}

/// y = act(W x + b), W is out x in.
template <typename Scalar>
struct DenseLayer {
  Matrix<Scalar> weights;
  Vector<Scalar> bias;
  Activation activation = Activation::Linear;

  Eigen::Index in_dim() const { return weights.cols(); }
  Eigen::Index out_dim() const { return weights.rows(); }

  bool operator==(const DenseLayer&) const = default;
};

/// Backprop intermediates for one layer; columns are samples.
template <typename Scalar>
struct LayerCache {
  Matrix<Scalar> input;
  Matrix<Scalar> pre_activation;
  Matrix<Scalar> output;
};

template <typename Scalar>
struct LayerGradient {
  Matrix<Scalar> weights;
  Vector<Scalar> bias;
};

template <typename Scalar>
using Network = std::vector<DenseLayer<Scalar>>;

/// Per-layer gradients, shape-matched to a Network.
template <typename Scalar>
using GradientSet = std::vector<LayerGradient<Scalar>>;

template <typename Scalar>
struct BackwardResult {
  LayerGradient<Scalar> gradient;
  Matrix<Scalar> downstream;
};

template <typename Derived>
auto activate(Activation a, const Eigen::MatrixBase<Derived>& z) {
  using Scalar = typename Derived::Scalar;
  Matrix<Scalar> out = z;
  switch (a) {
    case Activation::Linear: break;
    case Activation::Tanh: out = z.array().tanh().matrix(); break;
    case Activation::ReLU: out = z.array().max(Scalar(0)).matrix(); break;
  }
  return out;
}

template <typename Scalar>
LayerCache<Scalar> dense_forward(const DenseLayer<Scalar>& layer,
                                 const ConstRef<Scalar>& x) {
  if (x.rows() != layer.in_dim())
    throw ShapeError("dense_forward: input has " + std::to_string(x.rows()) +
                     " rows, layer expects " + std::to_string(layer.in_dim()));
  LayerCache<Scalar> cache;
  cache.input = x;
  cache.pre_activation = (layer.weights * x).colwise() + layer.bias;
  cache.output = activate(layer.activation, cache.pre_activation);
  return cache;
}

/// Gradients are summed over the batch columns; callers pre-scale `upstream`
/// (e.g. by 1/n) to obtain a batch mean.
template <typename Scalar>
BackwardResult<Scalar> dense_backward(const DenseLayer<Scalar>& layer,
                                      const LayerCache<Scalar>& cache,
                                      const ConstRef<Scalar>& upstream) {
  if (upstream.rows() != layer.out_dim() || upstream.cols() != cache.output.cols())
    throw ShapeError("dense_backward: upstream is " + std::to_string(upstream.rows()) + "x" +
                     std::to_string(upstream.cols()) + ", expected " +
                     std::to_string(layer.out_dim()) + "x" +
                     std::to_string(cache.output.cols()));
  Matrix<Scalar> delta;
  switch (layer.activation) {
    case Activation::Linear:
      delta = upstream;
      break;
    case Activation::Tanh:
      delta = upstream.cwiseProduct(
          (Scalar(1) - cache.output.array().square()).matrix());
      break;
    case Activation::ReLU:
      delta = (cache.pre_activation.array() > Scalar(0))
                  .select(upstream, Matrix<Scalar>::Zero(upstream.rows(), upstream.cols()));
      break;
  }
  BackwardResult<Scalar> r;
  r.gradient.weights = delta * cache.input.transpose();
  r.gradient.bias = delta.rowwise().sum();
  r.downstream = layer.weights.transpose() * delta;
  return r;
}

template <typename Scalar>
struct CrossEntropyResult {
  Vector<Scalar> loss;         // one entry per column
  Matrix<Scalar> grad_logits;  // softmax - one_hot
  std::vector<int> predicted;  // argmax per column
};

/// Softmax cross-entropy per column, with max-subtraction for stability.
template <typename Scalar>
CrossEntropyResult<Scalar> softmax_cross_entropy(const ConstRef<Scalar>& logits,
                                                 std::span<const int> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != logits.cols())
    throw ShapeError("softmax_cross_entropy: label count does not match batch size");
  const Eigen::Index classes = logits.rows();
  CrossEntropyResult<Scalar> r;
  r.loss.resize(logits.cols());
  r.grad_logits.resize(classes, logits.cols());
  r.predicted.resize(labels.size());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const int label = labels[j];
    if (label < 0 || label >= classes)
      throw IndexError("softmax_cross_entropy: label " + std::to_string(label) +
                       " outside [0, " + std::to_string(classes) + ")");
    Eigen::Index argmax = 0;
    const Scalar peak = logits.col(j).maxCoeff(&argmax);
    Vector<Scalar> e = (logits.col(j).array() - peak).exp().matrix();
    const Scalar z = e.sum();
    r.loss(j) = std::log(z) - (logits(label, j) - peak);
    r.grad_logits.col(j) = e / z;
    r.grad_logits(label, j) -= Scalar(1);
    r.predicted[j] = static_cast<int>(argmax);
  }
  return r;
}

template <typename Scalar>
std::pair<Scalar, Vector<Scalar>> softmax_cross_entropy(const Vector<Scalar>& logits, int label) {
  const int labels[1] = {label};
  auto r = softmax_cross_entropy<Scalar>(logits, labels);
  return {r.loss(0), r.grad_logits.col(0)};
}

/// Gradient reversal: identity forward, -lambda * upstream backward.
template <typename Derived>
auto grl_backward(const Eigen::MatrixBase<Derived>& upstream, typename Derived::Scalar lambda) {
  if (lambda < 0) throw ConfigError("grl_backward: lambda must be >= 0");
  return Matrix<typename Derived::Scalar>(-lambda * upstream);
}

template <typename DerivedP, typename DerivedG>
void sgd_step(Eigen::MatrixBase<DerivedP>& params, const Eigen::MatrixBase<DerivedG>& grads,
              typename DerivedP::Scalar mu) {
  if (params.rows() != grads.rows() || params.cols() != grads.cols())
    throw ShapeError("sgd_step: gradient shape does not match parameters");
  if (!(mu > 0)) throw ConfigError("sgd_step: learning rate must be > 0");
  params -= mu * grads;
}

template <typename Scalar>
void sgd_step(Network<Scalar>& net, const GradientSet<Scalar>& grads, Scalar mu) {
  if (net.size() != grads.size()) throw ShapeError("sgd_step: layer count mismatch");
  for (std::size_t i = 0; i < net.size(); ++i) {
    sgd_step(net[i].weights, grads[i].weights, mu);
    sgd_step(net[i].bias, grads[i].bias, mu);
  }
}

template <typename Scalar>
std::vector<LayerCache<Scalar>> network_forward(const Network<Scalar>& net,
                                                const ConstRef<Scalar>& x) {
  std::vector<LayerCache<Scalar>> caches;
  caches.reserve(net.size());
  for (std::size_t i = 0; i < net.size(); ++i)
    caches.push_back(dense_forward<Scalar>(net[i], i == 0 ? Matrix<Scalar>(x) : caches.back().output));
  return caches;
}

template <typename Scalar>
struct NetworkBackward {
  GradientSet<Scalar> gradients;
  Matrix<Scalar> downstream;
};

template <typename Scalar>
NetworkBackward<Scalar> network_backward(const Network<Scalar>& net,
                                         const std::vector<LayerCache<Scalar>>& caches,
                                         Matrix<Scalar> upstream) {
  if (caches.size() != net.size()) throw ShapeError("network_backward: cache count mismatch");
  NetworkBackward<Scalar> r;
  r.gradients.resize(net.size());
  for (std::size_t i = net.size(); i-- > 0;) {
    auto b = dense_backward<Scalar>(net[i], caches[i], upstream);
    r.gradients[i] = std::move(b.gradient);
    upstream = std::move(b.downstream);
  }
  r.downstream = std::move(upstream);
  return r;
}

/// Scaled-uniform (Glorot) weights from the given generator, zero bias.
template <typename Scalar>
DenseLayer<Scalar> make_layer(Eigen::Index in, Eigen::Index out, Activation act, Rng& rng) {
  if (in < 1 || out < 1) throw ConfigError("make_layer: dimensions must be >= 1");
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  DenseLayer<Scalar> layer;
  layer.weights.resize(out, in);
  for (Eigen::Index r = 0; r < out; ++r)
    for (Eigen::Index c = 0; c < in; ++c) layer.weights(r, c) = static_cast<Scalar>(dist(rng));
  layer.bias = Vector<Scalar>::Zero(out);
  layer.activation = act;
  return layer;
}

template <typename Scalar>
GradientSet<Scalar> zero_gradients(const Network<Scalar>& net) {
  GradientSet<Scalar> g(net.size());
  for (std::size_t i = 0; i < net.size(); ++i) {
    g[i].weights = Matrix<Scalar>::Zero(net[i].out_dim(), net[i].in_dim());
    g[i].bias = Vector<Scalar>::Zero(net[i].out_dim());
  }
  return g;
}

}  // namespace mdat::nn
