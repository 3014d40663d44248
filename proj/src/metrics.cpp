#include "cpshield/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <stdexcept>

namespace cpshield::eval {

ConfusionCounts confusion(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size()) {
    throw std::invalid_argument("confusion: prediction/label length mismatch");
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const bool pred = predictions[i] != 0;
    const bool truth = labels[i] != 0;
    if (pred && truth) ++c.tp;
    else if (pred && !truth) ++c.fp;
    else if (!pred && truth) ++c.fn;
    else ++c.tn;
  }
  return c;
}

DerivedMetrics derive(const ConfusionCounts& c) {
  DerivedMetrics m;
  const auto ratio = [](std::uint64_t num, std::uint64_t den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  m.accuracy = ratio(c.tp + c.tn, c.total());
  m.tpr = ratio(c.tp, c.tp + c.fn);
  m.fpr = ratio(c.fp, c.fp + c.tn);
  m.precision = ratio(c.tp, c.tp + c.fp);
  if (m.precision && m.tpr && (*m.precision + *m.tpr) > 0) {
    m.f1 = 2.0 * (*m.precision) * (*m.tpr) / (*m.precision + *m.tpr);
  } else if (m.precision && m.tpr) {
    m.f1 = 0.0;
  }
  return m;
}

double average_precision(std::vector<Detection> detections, const std::vector<sim::Box>& ground_truth,
                         double iou_threshold) {
  if (ground_truth.empty()) return 0.0;
  std::stable_sort(detections.begin(), detections.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<bool> taken(ground_truth.size(), false);
  std::vector<int> is_tp(detections.size(), 0);
  for (std::size_t d = 0; d < detections.size(); ++d) {
    double best_iou = 0;
    std::size_t best_gt = ground_truth.size();
    for (std::size_t g = 0; g < ground_truth.size(); ++g) {
      if (taken[g]) continue;
      const double v = sim::iou(detections[d].box, ground_truth[g]);
      if (v > best_iou) {
        best_iou = v;
        best_gt = g;
      }
    }
    if (best_gt < ground_truth.size() && best_iou >= iou_threshold) {
      taken[best_gt] = true;
      is_tp[d] = 1;
    }
  }
  // Precision over the monotone envelope, integrated across recall steps.
  const double gt_count = static_cast<double>(ground_truth.size());
  std::vector<double> precision(detections.size()), recall(detections.size());
  double tp = 0;
  for (std::size_t d = 0; d < detections.size(); ++d) {
    tp += is_tp[d];
    precision[d] = tp / static_cast<double>(d + 1);
    recall[d] = tp / gt_count;
  }
  for (std::size_t d = detections.size(); d-- > 1;) {
    precision[d - 1] = std::max(precision[d - 1], precision[d]);
  }
  double ap = 0, prev_recall = 0;
  for (std::size_t d = 0; d < detections.size(); ++d) {
    ap += (recall[d] - prev_recall) * precision[d];
    prev_recall = recall[d];
  }
  return ap;
}

std::vector<Detection> to_detections(const std::vector<sim::Proposal>& proposals,
                                     const sim::PipelineConfig& config) {
  std::vector<Detection> out;
  for (const auto& p : proposals) {
    if (p.p_object > config.score_threshold) out.push_back({p.box, p.p_object});
  }
  return out;
}

double fps_benchmark(const std::function<void(int)>& frame_fn, int frames, int warmup) {
  if (frames < 30) throw std::invalid_argument("fps_benchmark: need at least 30 timed frames");
  if (warmup < 5) throw std::invalid_argument("fps_benchmark: need at least 5 warmup frames");
  using clock = std::chrono::steady_clock;
  std::vector<double> reps;
  for (int rep = 0; rep < 5; ++rep) {
    for (int i = 0; i < warmup; ++i) frame_fn(i);
    const auto start = clock::now();
    for (int i = 0; i < frames; ++i) frame_fn(warmup + i);
    const auto stop = clock::now();
    const double seconds = std::chrono::duration<double>(stop - start).count();
    if (seconds <= 0) throw std::runtime_error("fps_benchmark: clock resolution too coarse for this workload");
    reps.push_back(static_cast<double>(frames) / seconds);
  }
  std::sort(reps.begin(), reps.end());
  return reps[2];
}

}  // namespace cpshield::eval
