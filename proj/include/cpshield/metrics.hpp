#pragma once

#include "cpshield/sim.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace cpshield::eval {

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::uint64_t total() const { return tp + fp + tn + fn; }
};

/// Rates with zero denominators are absent, never defaulted to zero.
struct DerivedMetrics {
  std::optional<double> accuracy, tpr, fpr, precision, f1;
};

/// Malicious (1) is the positive class.
ConfusionCounts confusion(const std::vector<int>& predictions, const std::vector<int>& labels);
DerivedMetrics derive(const ConfusionCounts& c);

struct Detection {
  sim::Box box;
  float score = 0;
};

/// Greedy matching in descending confidence; each ground-truth box matches
/// at most once at IoU >= threshold. AP integrates the monotone precision
/// envelope over all operating points. No ground truth yields 0.
double average_precision(std::vector<Detection> detections, const std::vector<sim::Box>& ground_truth,
                         double iou_threshold);

/// Detections (grid-local boxes scored by objectness) from thresholded
/// proposals.
std::vector<Detection> to_detections(const std::vector<sim::Proposal>& proposals,
                                     const sim::PipelineConfig& config);

/// Wall-clock frames per second of `frame_fn`, single-threaded: `warmup`
/// calls are discarded, `frames` calls are timed, and the median over five
/// repetitions is returned. Requires frames >= 30 and warmup >= 5; throws
/// std::runtime_error when the clock measures zero elapsed time.
double fps_benchmark(const std::function<void(int)>& frame_fn, int frames, int warmup);

}  // namespace cpshield::eval
