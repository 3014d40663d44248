#pragma once

#include "cpshield/dataset.hpp"
#include "cpshield/sim.hpp"

#include <optional>
#include <string>
#include <vector>

namespace cpshield::guard {

/// F_ego - F_collaborator, elementwise. Shapes must match.
ad::Tensor residual(const ad::Tensor& ego, const ad::Tensor& collaborator);

/// How the per-pair denominator sums partners: over all other samples
/// (`AllPairs`) or restricted to same-class partners as the printed
/// indicator has it (`PositiveOnly`).
enum class DenominatorMode { AllPairs, PositiveOnly };

/// Which unordered pairs enter the batch average: same-class pairs as the
/// prose says (`PositivePairs`) or the complement selected by the printed
/// (1 - indicator) factor (`NegativePairs`).
enum class SelectorMode { PositivePairs, NegativePairs };

struct GuardConfig {
  float contrastive_weight = 0.1f;  // alpha in the mixed objective
  float temperature = 0.1f;
  DenominatorMode denominator = DenominatorMode::AllPairs;
  SelectorMode selector = SelectorMode::PositivePairs;
  float threshold = 0.5f;  // malicious softmax probability cut
  int epochs = 50;
  int batch_size = 10;
  float learning_rate = 1e-3f;
  int embed_dim = 64;
  bool balance_classes = true;  // oversample the minority class per epoch
  bool adaptive = true;         // Adam-style moments instead of plain SGD
};

/// Residual classifier: three strided conv blocks, one fully connected
/// layer whose output is the penultimate embedding V, and a 2-logit head.
struct GuardModel {
  int channels = 0;   // input feature dims
  int feat_hw = 0;
  int embed_dim = 64;
  std::vector<float> c1_w, c1_b;  // C  -> 8,  k2 s2
  std::vector<float> c2_w, c2_b;  // 8  -> 16, k2 s2
  std::vector<float> c3_w, c3_b;  // 16 -> 16, k2 s2
  std::vector<float> fc1_w, fc1_b;  // flatten -> D (V lives here)
  std::vector<float> fc2_w, fc2_b;  // D -> 2

  static GuardModel init(int channels, int feat_hw, int embed_dim, std::uint64_t seed);
  std::vector<ad::ParamRef> params();
  std::vector<ad::ParamRef> params() const;
  int flatten_dim() const;
};

struct GuardTensors {
  ad::Tensor c1_w, c1_b, c2_w, c2_b, c3_w, c3_b, fc1_w, fc1_b, fc2_w, fc2_b;
};
GuardTensors guard_constants(const GuardModel& model);
GuardTensors guard_leaves(const GuardModel& model, ad::Tape& tape);

struct EmbeddingOut {
  ad::Tensor embedding;  // V, [D]
  ad::Tensor logits;     // [2]; index 1 = malicious
};
EmbeddingOut embed_and_classify(const GuardTensors& p, const ad::Tensor& residual_map,
                                const GuardModel& model);

/// Per-class arithmetic means of the embeddings. A class with no members
/// yields an absent center (flagged, not an error).
struct ClassCenters {
  std::optional<ad::Tensor> benign, malicious;
  int n_benign = 0, n_malicious = 0;
};
ClassCenters compute_centers(const std::vector<ad::Tensor>& embeddings,
                             const std::vector<int>& labels);

/// Contrastive term of the pair (m, n) on center-shifted embeddings:
///   l(m, n) = -log( exp(sim(m,n)/tau) / Z_m )
/// with sim the cosine similarity of (V - own-class center) vectors and Z_m
/// summing exp(sim(m,o)/tau) over partners per `denominator`. Pairs whose
/// denominator has no terms are skipped (flagged via the optional).
std::optional<ad::Tensor> pair_contrastive_loss(std::size_t m, std::size_t n,
                                                const std::vector<ad::Tensor>& embeddings,
                                                const std::vector<int>& labels,
                                                const ClassCenters& centers,
                                                const GuardConfig& config);

/// Batch average of the selected pairs' losses, normalized by C(N,2)
/// regardless of how many pairs the selector keeps. Requires a present
/// center for every class in the batch and N >= 2.
ad::Tensor centered_contrastive_loss(const std::vector<ad::Tensor>& embeddings,
                                     const std::vector<int>& labels, const ClassCenters& centers,
                                     const GuardConfig& config);

/// cross-entropy + alpha * contrastive. With alpha = 0 this is exactly the
/// cross-entropy term.
ad::Tensor mixed_loss(const ad::Tensor& logits_batch, const std::vector<int>& labels,
                      const std::optional<ad::Tensor>& contrastive, const GuardConfig& config);

/// Trains on the dataset's train split. Batches lacking one class skip the
/// contrastive term. Deterministic per seed; throws on a single-class train
/// split or divergence.
GuardModel train_guard(const data::Dataset& dataset, const GuardConfig& config, std::uint64_t seed);

/// Same training loop over an explicit record subset (used by the
/// leave-one-out harness).
GuardModel train_guard_records(const std::vector<const data::SampleRecord*>& train, int channels,
                               int feat_hw, const GuardConfig& config, std::uint64_t seed);

struct Verdict {
  int collaborator_index = 0;
  float malicious_probability = 0;
  bool flagged = false;
};

/// One classifier forward pass per collaborator; no fusion or decoding.
std::vector<Verdict> detect(const sim::FeatureMap& ego,
                            const std::vector<sim::FeatureMap>& collaborators,
                            const GuardModel& model, float threshold);

struct DefendOutcome {
  std::vector<Verdict> verdicts;
  std::vector<sim::Proposal> proposals;
  bool ego_only_fallback = false;
};

/// detect, then fuse the ego feature with the unflagged collaborators and
/// decode once. Falls back to ego-only perception when everything is
/// flagged. The ego feature itself is never dropped.
DefendOutcome defend(const sim::FeatureMap& ego, const std::vector<sim::FeatureMap>& collaborators,
                     const GuardModel& model, const sim::DetectorModel& detector, float threshold);

void save_guard(const std::string& path, const GuardModel& model);
GuardModel load_guard(const std::string& path);

}  // namespace cpshield::guard
