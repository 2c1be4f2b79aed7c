#pragma once

// Synthetic multi-domain i-vector-like data: speaker factor plus per-domain
// offset, noise scaling and optional rotation of anisotropic channel noise.

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mdat/trials.hpp"
#include "mdat/vectors.hpp"

namespace mdat {

struct DomainSpec {
  std::string name;
  Eigen::VectorXd shift;  // additive offset, length = dim
  double scale = 1.0;     // channel noise multiplier
  /// When set, channel noise gets a fixed anisotropic spectrum rotated by a
  /// random orthogonal matrix drawn from this seed.
  std::optional<std::uint64_t> rotation_seed;
};

struct PopulationSpec {
  int speakers = 0;
  int sessions_per_speaker = 0;
  std::vector<DomainSpec> domains;
};

struct GenSpec {
  int dim = 50;
  PopulationSpec source{100, 8, {}};
  PopulationSpec target{60, 6, {}};
  /// Held-out speakers from the target domains, split into enroll/test.
  int eval_speakers = 200;
  int eval_sessions = 6;
  double sigma_between = 1.0;
  double sigma_within = 0.7;
  std::uint64_t seed = 0;
  /// Keep target/eval speaker labels in the emitted sets (oracle use only).
  bool reveal_speakers = false;

  void check() const;
};

/// Defaults with `source_domains` + `target_domains` domains whose shifts have
/// length `shift`. Each direction mixes a per-population direction (weight
/// `shared`, in variance terms) with a per-domain one, so `shared` = 0 gives
/// independent random directions and 1 puts a whole population on one offset.
GenSpec default_spec(int source_domains, int target_domains, double shift, std::uint64_t seed,
                     int dim = 50, double shared = 0);

struct SyntheticData {
  LabeledVectorSet source;  // speaker + subset code
  LabeledVectorSet target;  // subset code only
  LabeledVectorSet enroll;  // first session of each eval speaker
  LabeledVectorSet test;    // remaining eval sessions
  TrialList trials;         // every enroll x test pair with keys
};

/// Session j of speaker s is drawn in domain (s + j) mod #domains. Deterministic per seed.
SyntheticData generate(const GenSpec& spec);

/// Haar-distributed orthogonal matrix.
Eigen::MatrixXd random_rotation(int dim, std::uint64_t seed);

}  // namespace mdat
