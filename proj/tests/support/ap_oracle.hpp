#pragma once

// Exhaustive average-precision reference: recomputes the greedy matching and
// the precision/recall point from scratch at every cutoff, then integrates
// the monotone envelope explicitly. O(D^2 * G), double precision throughout.

#include "cpshield/sim.hpp"

#include <algorithm>
#include <vector>

namespace cpshield::testing {

struct RefDetection {
  sim::Box box;
  double score = 0;
};

inline std::pair<double, double> ref_pr_at_cutoff(std::vector<RefDetection> dets,
                                                  const std::vector<sim::Box>& gt,
                                                  double iou_threshold, std::size_t cutoff) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const RefDetection& a, const RefDetection& b) { return a.score > b.score; });
  dets.resize(std::min(cutoff, dets.size()));
  std::vector<bool> taken(gt.size(), false);
  std::size_t tp = 0;
  for (const auto& d : dets) {
    double best = 0;
    std::size_t best_g = gt.size();
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if (taken[g]) continue;
      const double v = sim::iou(d.box, gt[g]);
      if (v > best) {
        best = v;
        best_g = g;
      }
    }
    if (best_g < gt.size() && best >= iou_threshold) {
      taken[best_g] = true;
      ++tp;
    }
  }
  const double precision = dets.empty() ? 0.0 : static_cast<double>(tp) / static_cast<double>(dets.size());
  const double recall = gt.empty() ? 0.0 : static_cast<double>(tp) / static_cast<double>(gt.size());
  return {precision, recall};
}

inline double ref_average_precision(const std::vector<RefDetection>& dets,
                                    const std::vector<sim::Box>& gt, double iou_threshold) {
  if (gt.empty()) return 0.0;
  const std::size_t n = dets.size();
  std::vector<double> precision(n), recall(n);
  for (std::size_t k = 1; k <= n; ++k) {
    auto [p, r] = ref_pr_at_cutoff(dets, gt, iou_threshold, k);
    precision[k - 1] = p;
    recall[k - 1] = r;
  }
  double ap = 0, prev = 0;
  for (std::size_t k = 0; k < n; ++k) {
    double envelope = 0;
    for (std::size_t j = k; j < n; ++j) envelope = std::max(envelope, precision[j]);
    ap += (recall[k] - prev) * envelope;
    prev = recall[k];
  }
  return ap;
}

}  // namespace cpshield::testing
