#include "mdat/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mdat/error.hpp"

namespace mdat {

void CostParams::check() const {
  if (!(p_target > 0 && p_target < 1)) throw ConfigError("p_target must lie in (0, 1)");
  if (!(c_miss > 0) || !(c_fa > 0)) throw ConfigError("detection costs must be > 0");
}

DetCurve compute_det(std::span<const double> target_scores, std::span<const double> nontarget_scores) {
  if (target_scores.empty() || nontarget_scores.empty())
    throw DataError("compute_det: need at least one target and one nontarget trial");
  std::vector<double> tar(target_scores.begin(), target_scores.end());
  std::vector<double> non(nontarget_scores.begin(), nontarget_scores.end());
  for (double s : tar)
    if (!std::isfinite(s)) throw DataError("compute_det: non-finite score");
  for (double s : non)
    if (!std::isfinite(s)) throw DataError("compute_det: non-finite score");
  std::sort(tar.begin(), tar.end());
  std::sort(non.begin(), non.end());

  std::vector<double> thresholds;
  thresholds.reserve(tar.size() + non.size());
  std::merge(tar.begin(), tar.end(), non.begin(), non.end(), std::back_inserter(thresholds));
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  DetCurve c;
  c.targets = tar.size();
  c.nontargets = non.size();
  const double nt = static_cast<double>(tar.size());
  const double nn = static_cast<double>(non.size());
  std::size_t misses = 0;     // targets below threshold
  std::size_t rejected = 0;   // nontargets below threshold
  c.points.reserve(thresholds.size() + 1);
  for (double t : thresholds) {
    while (misses < tar.size() && tar[misses] < t) ++misses;
    while (rejected < non.size() && non[rejected] < t) ++rejected;
    c.points.push_back({t, static_cast<double>(misses) / nt,
                        static_cast<double>(non.size() - rejected) / nn});
  }
  c.points.push_back({std::numeric_limits<double>::infinity(), 1.0, 0.0});
  return c;
}

DetCurve compute_det(const TrialScoreSet& scores) {
  std::vector<double> tar, non;
  for (const auto& s : scores) {
    switch (s.key) {
      case TrialKey::Target: tar.push_back(s.score); break;
      case TrialKey::Nontarget: non.push_back(s.score); break;
      case TrialKey::Unknown:
        throw DataError("compute_det: trial " + s.enroll + " / " + s.test + " has no key");
    }
  }
  return compute_det(tar, non);
}

double eer(const DetCurve& curve) {
  if (curve.points.empty()) throw DataError("eer: empty curve");
  struct P {
    double x, y;  // p_miss, p_fa
  };
  std::vector<P> pts;
  pts.reserve(curve.points.size());
  for (const auto& p : curve.points) pts.push_back({p.p_miss, p.p_fa});
  std::sort(pts.begin(), pts.end(), [](P a, P b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });

  // Lower convex hull (Andrew's monotone chain).
  std::vector<P> hull;
  for (const P& p : pts) {
    while (hull.size() >= 2) {
      const P& o = hull[hull.size() - 2];
      const P& a = hull.back();
      const double cross = (a.x - o.x) * (p.y - o.y) - (a.y - o.y) * (p.x - o.x);
      if (cross > 0) break;
      hull.pop_back();
    }
    hull.push_back(p);
  }

  for (std::size_t i = 0; i < hull.size(); ++i) {
    if (hull[i].x - hull[i].y < 0) continue;
    if (i == 0) return 100.0 * hull[0].y;
    const P a = hull[i - 1];
    const P b = hull[i];
    const double t = (a.y - a.x) / ((b.x - a.x) - (b.y - a.y));
    return 100.0 * (a.x + t * (b.x - a.x));
  }
  return 100.0 * hull.back().x;
}

double min_dcf(const DetCurve& curve, const CostParams& params) {
  params.check();
  if (curve.points.empty()) throw DataError("min_dcf: empty curve");
  const double miss_w = params.c_miss * params.p_target;
  const double fa_w = params.c_fa * (1 - params.p_target);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : curve.points) best = std::min(best, miss_w * p.p_miss + fa_w * p.p_fa);
  return best / std::min(miss_w, fa_w);
}

MetricSummary evaluate(const TrialScoreSet& scores, const CostParams& dcf10, const CostParams& dcf08) {
  const auto curve = compute_det(scores);
  return {eer(curve), min_dcf(curve, dcf10), min_dcf(curve, dcf08)};
}

}  // namespace mdat
