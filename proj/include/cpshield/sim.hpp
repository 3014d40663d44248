#pragma once

#include "cpshield/ops.hpp"
#include "cpshield/optim.hpp"
#include "cpshield/rng.hpp"

#include <atomic>
#include <cstdint>
#include <vector>

namespace cpshield::sim {

// ---------------------------------------------------------------------------
// World geometry
// ---------------------------------------------------------------------------

struct Box {
  float cx = 0, cy = 0, w = 0, h = 0;
  int class_id = 0;
};

/// Axis-aligned intersection over union.
float iou(const Box& a, const Box& b);

struct SceneConfig {
  float world_w = 64.0f;
  float world_h = 64.0f;
  int min_objects = 3;
  int max_objects = 6;
  float min_size = 4.0f;
  float max_size = 8.0f;
};

struct Scene {
  float world_w = 0, world_h = 0;
  std::vector<Box> objects;
  std::uint64_t seed = 0;
};

/// Deterministic per seed. Boxes are pairwise non-overlapping and lie fully
/// inside the world; placement rejection-samples at most 1000 tries per box.
Scene generate_scene(const SceneConfig& config, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Agents and observations
// ---------------------------------------------------------------------------

struct PipelineConfig {
  int grid = 32;          // occupancy cells per side (power of two)
  int channels = 16;      // feature channels C
  int feat_hw = 16;       // feature map side H = W = grid / 2
  float world = 64.0f;    // grid span in world units
  float fov_radius = 28.0f;
  float noise_sigma = 0.05f;
  float anchor = 6.0f;            // box size prior in world units
  float score_threshold = 0.5f;   // objectness cut for detections
  float pose_range = 8.0f;        // max |pose offset| from world center

  float cell() const { return world / static_cast<float>(grid); }
  float feat_cell() const { return world / static_cast<float>(feat_hw); }
};

/// One agent's ego-centric occupancy snapshot. The grid spans
/// [pose - world/2, pose + world/2) on each axis; cells outside the
/// field-of-view radius are exactly zero.
struct AgentView {
  int agent_id = 0;
  float pose_x = 0, pose_y = 0;
  float fov_radius = 0;
  ad::Tensor grid;  // [1, G, G]
};

/// Cell-region occupancy AND'ed with the field-of-view disc (cell centers
/// within `fov_radius` of the pose), plus clamped Gaussian noise inside the
/// field of view.
AgentView observe(const Scene& scene, const PipelineConfig& config, int agent_id,
                  float pose_x, float pose_y, std::uint64_t agent_seed,
                  float sigma_override = -1.0f);  // < 0 uses config.noise_sigma

/// Agent poses snapped to feature-cell multiples near the world center.
/// Index 0 is the ego agent.
std::vector<std::pair<float, float>> sample_poses(int agent_count, const PipelineConfig& config,
                                                  Rng& rng);

// ---------------------------------------------------------------------------
// Detector
// ---------------------------------------------------------------------------

struct FeatureMap {
  int owner = -1;
  ad::Tensor data;  // [C, H, W]
};

/// Encoder (occupancy -> feature), decoder and two-branch prediction head
/// (2-class cell scores + 4 box regression values per cell).
struct DetectorModel {
  PipelineConfig config;
  std::vector<float> enc_w1, enc_b1;   // 1  -> 8,  k3 s1 p1
  std::vector<float> enc_w2, enc_b2;   // 8  -> C,  k4 s2 p1
  std::vector<float> dec_w, dec_b;     // C  -> C,  k3 s1 p1
  std::vector<float> dec2_w, dec2_b;   // C  -> C,  k3 s1 p1
  std::vector<float> cls_w, cls_b;     // C  -> 2,  k1
  std::vector<float> box_w, box_b;     // C  -> 4,  k1

  static DetectorModel init(const PipelineConfig& config, std::uint64_t seed);
  std::vector<ad::ParamRef> params();
  std::vector<ad::ParamRef> params() const;
};

/// Parameter tensors for one forward pass: constants for inference and
/// attacks, tape leaves for training.
struct DetectorTensors {
  ad::Tensor enc_w1, enc_b1, enc_w2, enc_b2, dec_w, dec_b, dec2_w, dec2_b, cls_w, cls_b, box_w, box_b;
};
DetectorTensors detector_constants(const DetectorModel& model);
DetectorTensors detector_leaves(const DetectorModel& model, ad::Tape& tape);

/// F = encoder(O). Output shape [C, H, W].
ad::Tensor encode(const DetectorTensors& p, const ad::Tensor& grid, const PipelineConfig& config);
FeatureMap encode(const DetectorModel& model, const AgentView& view);

/// Integer-cell offset that carries a map from `from_pose` into `to_pose`
/// frame coordinates, in feature cells.
std::pair<int, int> transmit_offset(float from_x, float from_y, float to_x, float to_y,
                                    const PipelineConfig& config);

/// Spatially align a transmitted feature map with the receiver's frame by an
/// integer cell shift; vacated cells are zero. When the offset exceeds the
/// map extent the result is all-zero and *out_of_range is set.
FeatureMap transmit(const FeatureMap& feature, float from_x, float from_y, float to_x, float to_y,
                    const PipelineConfig& config, bool* out_of_range = nullptr);

/// Elementwise mean over {ego} + others. Differentiable in every input.
ad::Tensor fuse_mean(const ad::Tensor& ego, const std::vector<ad::Tensor>& others);

/// Raw decoded head outputs, kept as tensors so attack losses can
/// differentiate through them.
struct DecodeOut {
  ad::Tensor cls_logits;  // [2, H, W]; channel 0 = object, 1 = background
  ad::Tensor box_raw;     // [4, H, W]; dx, dy, log w, log h
  int h = 0, w = 0;
};
DecodeOut decode(const DetectorTensors& p, const ad::Tensor& fused, const PipelineConfig& config);

struct Proposal {
  int cell = 0;              // r * W + c
  float p_object = 0;        // softmax scores; sum to 1
  float p_background = 0;
  Box box;                   // grid-local world units
  float confidence = 0;      // max class score
};

/// One proposal per cell, in grid-local coordinates (origin at the map
/// corner). Nothing is thresholded here.
std::vector<Proposal> extract_proposals(const DecodeOut& out, const PipelineConfig& config);

/// Proposals with p_object above the configured threshold.
std::vector<Proposal> detections(const std::vector<Proposal>& proposals,
                                 const PipelineConfig& config);

/// Differentiable box decode for one cell: raw (dx, dy, logw, logh) scalars
/// to a grid-local box. Log sizes are clamped to [-4, 4].
struct BoxGraph {
  ad::Tensor cx, cy, w, h;
};
BoxGraph decode_box_graph(const DecodeOut& out, int r, int c, const PipelineConfig& config);

/// Ground truth as the dense head sees it.
struct CellTargets {
  std::vector<int> labels;        // per cell: 0 object, 1 background
  std::vector<float> box_targets; // [4, H, W], zero off the positive cells
  std::vector<float> box_mask;    // [4, H, W], one on positive cells
  int positives = 0;
};

/// Boxes visible to the team (center within any participating agent's field
/// of view), in the ego's grid-local frame.
std::vector<Box> visible_boxes(const Scene& scene,
                               const std::vector<std::pair<float, float>>& poses,
                               const PipelineConfig& config);

CellTargets cell_targets(const std::vector<Box>& local_boxes, const PipelineConfig& config);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct DetectorTrainConfig {
  int epochs = 30;
  int batch_size = 1;        // scenes per optimizer step
  float learning_rate = 1e-3f;
  int agent_count = 4;       // ego + collaborators per scene
  float positive_weight = 8.0f;
  float box_loss_weight = 1.0f;
  bool adaptive = true;
  // Noise augmentation on transmitted features: each collaborator map gets
  // uniform noise with a random amplitude up to this bound. Hardens the
  // detector against crude magnitude perturbations.
  float feature_noise = 0.3f;
  // Single-step sign hardening: one random collaborator per scene is
  // perturbed by amp * sign(d loss / d feature) before the training step,
  // with amp drawn up to this bound. Off by default; it suppresses every
  // gradient-sign attack family at once, not just the one-shot ones.
  float sign_hardening = 0.0f;
};

/// Trains on collaboratively fused benign features. Deterministic per seed;
/// throws std::runtime_error with a diagnostic if the loss turns non-finite.
/// `epoch_losses`, when given, receives the mean training loss per epoch.
DetectorModel train_detector(const std::vector<Scene>& scenes, const PipelineConfig& pipeline,
                             const DetectorTrainConfig& config, std::uint64_t seed,
                             std::vector<double>* epoch_losses = nullptr);

/// Mean detection loss of one fused feature map against cell targets.
ad::Tensor detection_loss(const DecodeOut& out, const CellTargets& targets,
                          const DetectorTrainConfig& config);

void save_detector(const std::string& path, const DetectorModel& model);
DetectorModel load_detector(const std::string& path);

// ---------------------------------------------------------------------------
// Instrumentation
// ---------------------------------------------------------------------------

/// Call counters used by the efficiency benchmarks to show how many fusion /
/// decode passes each defense paradigm spends.
struct PipelineCounters {
  std::atomic<std::uint64_t> fuse{0};
  std::atomic<std::uint64_t> decode{0};
  void reset() {
    fuse = 0;
    decode = 0;
  }
};
PipelineCounters& counters();

}  // namespace cpshield::sim
