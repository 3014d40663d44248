#pragma once

#include "cpshield/baseline.hpp"
#include "cpshield/dataset.hpp"
#include "cpshield/guard.hpp"
#include "cpshield/metrics.hpp"

#include <string>
#include <vector>

namespace cpshield::eval {

/// AP over several frames with a single pooled precision-recall curve;
/// detections only match ground truth from their own frame.
struct FrameDetections {
  std::vector<Detection> detections;
  std::vector<sim::Box> ground_truth;
};
double pooled_average_precision(const std::vector<FrameDetections>& frames, double iou_threshold);

// ---------------------------------------------------------------------------
// Guard evaluation over dataset slices
// ---------------------------------------------------------------------------

struct GuardEval {
  ConfusionCounts counts;
  DerivedMetrics metrics;
  // Benign records plus one malicious type at a time (the per-attack rows).
  std::vector<std::pair<std::string, DerivedMetrics>> per_attack;
  // Same split by perturbation budget.
  std::vector<std::pair<std::string, DerivedMetrics>> per_budget;
};

GuardEval evaluate_guard(const std::vector<const data::SampleRecord*>& records,
                         const guard::GuardModel& model, float threshold);

/// Mean positive-pair and negative-pair cosine distances (1 - cosine
/// similarity) of the guard's embeddings over the given records.
struct EmbeddingMargins {
  double mean_positive_distance = 0;  // same-class pairs
  double mean_negative_distance = 0;  // cross-class pairs
  std::vector<double> negative_distances;  // for histograms
};
EmbeddingMargins embedding_margins(const std::vector<const data::SampleRecord*>& records,
                                   const guard::GuardModel& model);

// ---------------------------------------------------------------------------
// Leave-one-out generalization
// ---------------------------------------------------------------------------

/// Train-split records with one attack type withheld (benign records stay).
std::vector<const data::SampleRecord*> loo_train_subset(const data::Dataset& dataset,
                                                        attack::AttackType held_out);

/// Test-split records restricted to benign + one attack type.
std::vector<const data::SampleRecord*> type_eval_subset(const data::Dataset& dataset,
                                                        attack::AttackType type);

struct LeaveOneOutRow {
  std::string held_out;  // attack name, or "upper-bound"
  DerivedMetrics metrics;
};

/// One guard per held-out attack type plus the all-types upper bound.
/// Requires every attack type to appear in the dataset.
std::vector<LeaveOneOutRow> leave_one_out(const data::Dataset& dataset,
                                          const guard::GuardConfig& config, std::uint64_t seed);

// ---------------------------------------------------------------------------
// End-to-end perception quality under attack
// ---------------------------------------------------------------------------

struct PerceptionFrame {
  sim::Scene scene;
  std::vector<std::pair<float, float>> poses;
  sim::FeatureMap ego_feature;
  std::vector<sim::FeatureMap> collaborator_features;  // clean, ego frame
  std::vector<sim::Box> ground_truth;                  // team-visible, ego-local
};

/// Deterministic evaluation frames (seed = base + index).
std::vector<PerceptionFrame> make_perception_frames(const sim::DetectorModel& detector, int count,
                                                    int agent_count, std::uint64_t seed);

/// AP of the undefended pipeline with every collaborator fused.
double clean_ap(const sim::DetectorModel& detector, const std::vector<PerceptionFrame>& frames,
                double iou_threshold);

/// AP of the undefended pipeline with `attackers` perturbed collaborators.
double attacked_ap(const sim::DetectorModel& detector, const std::vector<PerceptionFrame>& frames,
                   const attack::AttackConfig& config, int attackers, double iou_threshold,
                   std::uint64_t seed);

/// AP with guard-filtered fusion under the same attack.
double defended_ap(const sim::DetectorModel& detector, const guard::GuardModel& model,
                   const std::vector<PerceptionFrame>& frames, const attack::AttackConfig& config,
                   int attackers, float threshold, double iou_threshold, std::uint64_t seed);

/// Applies the configured attack to `attackers` collaborators of one frame.
std::vector<sim::FeatureMap> attack_frame(const sim::DetectorModel& detector,
                                          const PerceptionFrame& frame,
                                          const attack::AttackConfig& config, int attackers,
                                          std::uint64_t seed);

}  // namespace cpshield::eval
