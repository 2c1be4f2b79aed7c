#pragma once

// Multi-domain adversarial network: feature generator G, speaker classifier C
// and an (N+M)-way domain discriminator D attached to G through a gradient
// reversal layer.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mdat/nn.hpp"
#include "mdat/vectors.hpp"

namespace mdat {

using Layer = nn::DenseLayer<double>;
using Network = nn::Network<double>;
using GradientSet = nn::GradientSet<double>;

/// Hidden layer widths per sub-network; C and D get an extra logit layer.
struct Architecture {
  std::vector<int> generator{512, 512};
  std::vector<int> classifier{300, 300};
  std::vector<int> discriminator{512, 512};
  // Hidden-layer activations; logit layers are always linear.
  nn::Activation generator_act = nn::Activation::ReLU;
  nn::Activation classifier_act = nn::Activation::ReLU;
  nn::Activation discriminator_act = nn::Activation::ReLU;
};

struct MdannModel {
  Network generator;
  Network classifier;
  Network discriminator;
  int input_dim = 0;
  int num_speakers = 0;
  int num_domains = 0;

  int feature_dim() const { return static_cast<int>(generator.back().out_dim()); }
  /// Throws ShapeError if the layer chains do not compose.
  void check() const;

  bool operator==(const MdannModel&) const = default;
};

MdannModel build_model(int input_dim, int num_speakers, int num_domains,
                       const Architecture& arch, std::uint64_t seed);

struct LambdaSchedule {
  enum class Kind { Constant, Ramp };
  Kind kind = Kind::Constant;
  std::size_t total_steps = 0;  // Ramp only; 0 means "all steps of train()"

  /// Ramp: lambda * (2 / (1 + exp(-10 p)) - 1), p = step / total_steps.
  double at(double lambda, std::size_t step) const;
};

/// Which loss terms contribute gradients. ClassifierOnly is the plain
/// speaker-classifier baseline; AdversarialOnly isolates the domain branch.
enum class LossTerms { Both, ClassifierOnly, AdversarialOnly };

struct TrainConfig {
  double lambda = 1.0;
  double mu = 0.05;
  int epochs = 30;
  int batch_size = 32;
  std::uint64_t seed = 0;
  LambdaSchedule schedule;
  LossTerms terms = LossTerms::Both;
  /// Weight each sample's adversarial loss by inverse domain frequency.
  bool balance_domains = false;

  void check() const;
};

/// A minibatch: columns of `inputs` are samples.
struct Batch {
  Eigen::MatrixXd inputs;
  std::vector<std::optional<int>> speakers;  // present iff source sample
  std::vector<int> domains;
  std::vector<double> domain_weights;  // empty means all 1

  Eigen::Index size() const { return inputs.cols(); }
};

struct ForwardLosses {
  std::optional<double> cls;
  double adv = 0;
  std::vector<nn::LayerCache<double>> generator;
  std::vector<nn::LayerCache<double>> classifier;
  std::vector<nn::LayerCache<double>> discriminator;
};

/// Single-sample losses. `target_domain_start` is N: domain labels >= N are
/// target samples and must not carry a speaker label.
ForwardLosses forward_losses(const MdannModel& model, const Eigen::VectorXd& x,
                             std::optional<int> speaker, int domain, int target_domain_start);

struct MdannGradients {
  GradientSet generator;
  GradientSet classifier;
  GradientSet discriminator;
};

struct StepStats {
  double cls_loss_sum = 0;  // unweighted sums over the batch
  double adv_loss_sum = 0;
  int sources = 0;
  int samples = 0;
  int speaker_correct = 0;
  int domain_correct = 0;
};

/// Batch-mean gradients of L_cls (source members) and L_adv (all members).
/// The generator receives dL_cls/dG plus the discriminator gradient passed
/// through grl_backward, i.e. dL_cls/dG - lambda dL_adv/dG.
MdannGradients compute_gradients(const MdannModel& model, const Batch& batch, double lambda,
                                 LossTerms terms, StepStats* stats = nullptr);

/// One SGD update of all three sub-networks from the same pre-update parameters.
StepStats train_step(MdannModel& model, const Batch& batch, const TrainConfig& cfg,
                     std::size_t step, std::size_t total_steps = 0);

struct EpochStats {
  double cls_loss = 0;
  double adv_loss = 0;
  double objective = 0;  // cls - lambda * adv
  double speaker_accuracy = 0;
  double domain_accuracy = 0;
};

struct TrainStats {
  std::vector<EpochStats> epochs;
};

/// Sorted distinct speaker labels of a source set mapped to class indices.
std::map<std::string, int> speaker_index(const LabeledVectorSet& source);

/// Source records need speaker and domain labels in [0, N); target records
/// need domain labels in [N, N+M) and no speaker labels.
TrainStats train(MdannModel& model, const LabeledVectorSet& source,
                 const LabeledVectorSet& target, const TrainConfig& cfg);

enum class EmbeddingLayer { FirstHiddenOfG, LastOfG };

EmbeddingSet extract_embeddings(const MdannModel& model, const LabeledVectorSet& data,
                                EmbeddingLayer layer = EmbeddingLayer::FirstHiddenOfG);

void save_model(const MdannModel& model, std::ostream& out);
MdannModel load_model(std::istream& in);
void save_model(const MdannModel& model, const std::filesystem::path& path);
MdannModel load_model(const std::filesystem::path& path);

}  // namespace mdat
