#pragma once

// Detection metrics over scored trials: the empirical miss/false-alarm
// trade-off, equal error rate and normalized minimum detection cost.

#include <span>
#include <string>
#include <vector>

#include "mdat/trials.hpp"

namespace mdat {

struct DetPoint {
  double threshold;  // accept when score >= threshold; +inf rejects everything
  double p_miss;
  double p_fa;
};

/// Points ordered by rising threshold: one per distinct score plus a final
/// reject-all point at +inf.
struct DetCurve {
  std::vector<DetPoint> points;
  std::size_t targets = 0;
  std::size_t nontargets = 0;
};

struct CostParams {
  double p_target = 0.01;
  double c_miss = 1;
  double c_fa = 1;

  void check() const;

  /// NIST SRE 2010 core operating point.
  static constexpr CostParams dcf10() { return {0.001, 1, 1}; }
  /// NIST SRE 2008 operating point.
  static constexpr CostParams dcf08() { return {0.01, 10, 1}; }
};

DetCurve compute_det(std::span<const double> target_scores, std::span<const double> nontarget_scores);
/// Throws DataError when a key is unknown or either class is empty.
DetCurve compute_det(const TrialScoreSet& scores);

/// Equal error rate in percent, read off the convex hull of the curve with
/// linear interpolation between adjacent hull vertices.
double eer(const DetCurve& curve);

/// Minimum over thresholds of the detection cost, divided by the cost of the
/// best trivial (accept-all or reject-all) system.
double min_dcf(const DetCurve& curve, const CostParams& params);

struct MetricSummary {
  double eer = 0;  // percent
  double dcf10 = 0;
  double dcf08 = 0;
};

MetricSummary evaluate(const TrialScoreSet& scores, const CostParams& dcf10 = CostParams::dcf10(),
                       const CostParams& dcf08 = CostParams::dcf08());

}  // namespace mdat
