#pragma once

#include "cpshield/sim.hpp"

#include <functional>
#include <optional>
#include <string>

namespace cpshield::attack {

enum class AttackType : std::uint8_t {
  None = 0,
  PGD = 1,
  BIM = 2,
  CW = 3,
  FGSM = 4,
  GN = 5,
};

const char* attack_name(AttackType type);
std::optional<AttackType> attack_from_name(const std::string& name);

struct AttackConfig {
  AttackType type = AttackType::PGD;
  float budget = 0.5f;      // infinity-norm bound on delta
  int steps = 15;
  float step_size = 0.1f;
  float tau1 = 0.7f;        // foreground confidence threshold
  float tau2 = 0.9f;        // background confidence threshold
  float lambda_bg = 1.0f;   // background term weight
  int background_class = 1;
  float cw_penalty = 0.01f; // L2 penalty weight of the penalized variant
  // The piecewise objective is ascended as printed when false; true ascends
  // its negation (the orientation that actually degrades perception).
  bool sign_flip = false;

  /// Throws std::invalid_argument on inconsistent settings
  /// (budget < 0, steps < 1, or 0 < step_size <= budget violated for
  /// PGD/BIM at nonzero budget).
  void validate() const;
};

struct Perturbation {
  ad::Tensor delta;
  float best_loss = 0;        // highest effective objective value observed
  int iterations = 0;
  bool zero_gradient = false; // no gradient signal anywhere during the run
};

/// A differentiable adversarial objective: given a tape and the delta leaf,
/// builds the scalar to ascend.
using Objective = std::function<ad::Tensor(ad::Tape&, const ad::Tensor& delta)>;

/// Aggregate class-specific adversarial loss over all cell proposals.
/// Per cell, with c the argmax class of the CLEAN proposal and p'_c the
/// perturbed probability of that class (clamped to [1e-6, 1 - 1e-6]):
///   c != background and p_c > tau1:  -log(1 - p'_c) * eta
///   c == background and p_c > tau2:  -lambda * p'_c * log(1 - p'_c)
///   otherwise 0
/// where eta is the IoU between the perturbed and clean boxes of the cell.
/// `clean` must be cell-aligned with the decode output.
ad::Tensor adv_loss(const sim::DecodeOut& perturbed, const std::vector<sim::Proposal>& clean,
                    const sim::PipelineConfig& pipeline, const AttackConfig& config);

/// Differentiable IoU between a decoded box graph and a fixed clean box.
ad::Tensor iou_graph(const sim::BoxGraph& a, const sim::Box& b);

/// Frozen victim pipeline (fuse -> decode) around one collaborator's
/// transmitted feature map.
struct VictimPipeline {
  sim::PipelineConfig pipeline;
  sim::DetectorTensors params;           // constants: the model is frozen
  ad::Tensor ego_feature;                // constant
  std::vector<ad::Tensor> other_features;  // constants, excluding the target
  ad::Tensor target_feature;             // clean transmitted feature under attack
  std::vector<sim::Proposal> clean_proposals;  // decode at delta = 0, detached

  /// The ascent objective for this pipeline under `config`.
  Objective objective(const AttackConfig& config) const;
};

/// Builds the frozen pipeline context; `target_index` selects the attacked
/// collaborator among `collaborators` (all post-transmit, ego frame).
VictimPipeline make_victim(const sim::DetectorModel& model, const ad::Tensor& ego_feature,
                           const std::vector<ad::Tensor>& collaborators, std::size_t target_index);

// Perturbation generators. All clip so that max|delta| <= budget exactly.
Perturbation fgsm(const Objective& objective, const ad::Shape& shape, const AttackConfig& config);
Perturbation pgd(const Objective& objective, const ad::Shape& shape, const AttackConfig& config,
                 std::uint64_t seed);
Perturbation bim(const Objective& objective, const ad::Shape& shape, const AttackConfig& config);
Perturbation cw(const Objective& objective, const ad::Shape& shape, const AttackConfig& config);
Perturbation gn(const ad::Shape& shape, const AttackConfig& config, std::uint64_t seed);

/// Dispatch on config.type.
Perturbation run_attack(const Objective& objective, const ad::Shape& shape,
                        const AttackConfig& config, std::uint64_t seed);

struct AttackOutcome {
  sim::FeatureMap perturbed;
  Perturbation perturbation;
};

/// Applies the configured attack to one collaborator's transmitted feature.
/// The ego pipeline and the clean feature map are never modified;
/// AttackType::None passes the feature through unchanged.
AttackOutcome attack_agent(const sim::DetectorModel& model, const sim::FeatureMap& ego,
                           const std::vector<sim::FeatureMap>& collaborators,
                           std::size_t malicious_index, const AttackConfig& config,
                           std::uint64_t seed);

}  // namespace cpshield::attack
