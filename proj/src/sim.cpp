#include "cpshield/sim.hpp"

#include "cpshield/checkpoint.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>

namespace cpshield::sim {

float iou(const Box& a, const Box& b) {
  const float ix = std::min(a.cx + a.w / 2, b.cx + b.w / 2) - std::max(a.cx - a.w / 2, b.cx - b.w / 2);
  const float iy = std::min(a.cy + a.h / 2, b.cy + b.h / 2) - std::max(a.cy - a.h / 2, b.cy - b.h / 2);
  if (ix <= 0 || iy <= 0) return 0.0f;
  const float inter = ix * iy;
  const float uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0 ? inter / uni : 0.0f;
}

namespace {

bool boxes_overlap(const Box& a, const Box& b) {
  return std::fabs(a.cx - b.cx) < (a.w + b.w) / 2 && std::fabs(a.cy - b.cy) < (a.h + b.h) / 2;
}

}  // namespace

Scene generate_scene(const SceneConfig& config, std::uint64_t seed) {
  if (config.min_objects < 0 || config.max_objects < config.min_objects) {
    throw std::invalid_argument("generate_scene: bad object count range");
  }
  Rng rng(seed);
  Scene scene;
  scene.world_w = config.world_w;
  scene.world_h = config.world_h;
  scene.seed = seed;
  const int count = rng.uniform_int(config.min_objects, config.max_objects);
  for (int i = 0; i < count; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      Box box;
      box.w = rng.uniform_f(config.min_size, config.max_size);
      box.h = rng.uniform_f(config.min_size, config.max_size);
      box.cx = rng.uniform_f(box.w / 2, config.world_w - box.w / 2);
      box.cy = rng.uniform_f(box.h / 2, config.world_h - box.h / 2);
      bool clash = false;
      for (const Box& other : scene.objects) {
        if (boxes_overlap(box, other)) {
          clash = true;
          break;
        }
      }
      if (!clash) {
        scene.objects.push_back(box);
        placed = true;
      }
    }
    if (!placed) {
      throw std::runtime_error("generate_scene: could not place object " + std::to_string(i) +
                               " after 1000 tries; world too crowded");
    }
  }
  return scene;
}

AgentView observe(const Scene& scene, const PipelineConfig& config, int agent_id,
                  float pose_x, float pose_y, std::uint64_t agent_seed,
                  float sigma_override) {
  Rng rng(agent_seed);
  const float sigma = sigma_override >= 0 ? sigma_override : config.noise_sigma;
  const int g = config.grid;
  const float cell = config.cell();
  const float x_origin = pose_x - config.world / 2;
  const float y_origin = pose_y - config.world / 2;
  std::vector<float> grid(static_cast<std::size_t>(g) * g, 0.0f);
  for (int r = 0; r < g; ++r) {
    for (int c = 0; c < g; ++c) {
      // Noise is drawn for every cell so the stream does not depend on the
      // field-of-view pattern.
      const float noise = static_cast<float>(rng.normal(0.0, sigma));
      const float x0 = x_origin + static_cast<float>(c) * cell;
      const float y0 = y_origin + static_cast<float>(r) * cell;
      const float mx = x0 + cell / 2 - pose_x;
      const float my = y0 + cell / 2 - pose_y;
      if (mx * mx + my * my > config.fov_radius * config.fov_radius) continue;
      bool occupied = false;
      for (const Box& box : scene.objects) {
        if (box.cx - box.w / 2 < x0 + cell && box.cx + box.w / 2 > x0 &&
            box.cy - box.h / 2 < y0 + cell && box.cy + box.h / 2 > y0) {
          occupied = true;
          break;
        }
      }
      const float v = (occupied ? 1.0f : 0.0f) + noise;
      grid[static_cast<std::size_t>(r) * g + c] = std::min(std::max(v, 0.0f), 1.0f);
    }
  }
  AgentView view;
  view.agent_id = agent_id;
  view.pose_x = pose_x;
  view.pose_y = pose_y;
  view.fov_radius = config.fov_radius;
  view.grid = ad::Tensor({1, g, g}, std::move(grid));
  return view;
}

std::vector<std::pair<float, float>> sample_poses(int agent_count, const PipelineConfig& config,
                                                  Rng& rng) {
  std::vector<std::pair<float, float>> poses;
  poses.reserve(static_cast<std::size_t>(agent_count));
  const float fc = config.feat_cell();
  const float center_x = config.world / 2;
  const float center_y = config.world / 2;
  for (int a = 0; a < agent_count; ++a) {
    const float ox = std::round(rng.uniform_f(-config.pose_range, config.pose_range) / fc) * fc;
    const float oy = std::round(rng.uniform_f(-config.pose_range, config.pose_range) / fc) * fc;
    poses.emplace_back(center_x + ox, center_y + oy);
  }
  return poses;
}

DetectorModel DetectorModel::init(const PipelineConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  auto fill = [&rng](std::vector<float>& v, std::size_t n, int fan_in) {
    const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
    v.resize(n);
    for (auto& x : v) x = rng.uniform_f(-bound, bound);
  };
  DetectorModel m;
  m.config = config;
  const int c = config.channels;
  fill(m.enc_w1, 8ul * 1 * 3 * 3, 9);
  fill(m.enc_b1, 8, 9);
  fill(m.enc_w2, static_cast<std::size_t>(c) * 8 * 4 * 4, 8 * 16);
  fill(m.enc_b2, static_cast<std::size_t>(c), 8 * 16);
  fill(m.dec_w, static_cast<std::size_t>(c) * c * 3 * 3, c * 9);
  fill(m.dec_b, static_cast<std::size_t>(c), c * 9);
  fill(m.dec2_w, static_cast<std::size_t>(c) * c * 3 * 3, c * 9);
  fill(m.dec2_b, static_cast<std::size_t>(c), c * 9);
  fill(m.cls_w, 2ul * c, c);
  fill(m.cls_b, 2, c);
  fill(m.box_w, 4ul * c, c);
  fill(m.box_b, 4, c);
  return m;
}

std::vector<ad::ParamRef> DetectorModel::params() {
  const int c = config.channels;
  return {
      {"enc_w1", {8, 1, 3, 3}, &enc_w1},   {"enc_b1", {8}, &enc_b1},
      {"enc_w2", {c, 8, 4, 4}, &enc_w2},   {"enc_b2", {c}, &enc_b2},
      {"dec_w", {c, c, 3, 3}, &dec_w},     {"dec_b", {c}, &dec_b},
      {"dec2_w", {c, c, 3, 3}, &dec2_w},   {"dec2_b", {c}, &dec2_b},
      {"cls_w", {2, c, 1, 1}, &cls_w},     {"cls_b", {2}, &cls_b},
      {"box_w", {4, c, 1, 1}, &box_w},     {"box_b", {4}, &box_b},
  };
}

std::vector<ad::ParamRef> DetectorModel::params() const {
  return const_cast<DetectorModel*>(this)->params();
}

namespace {

DetectorTensors pack_detector(const DetectorModel& m,
                              const std::function<ad::Tensor(ad::Shape, const std::vector<float>&)>& wrap) {
  const int c = m.config.channels;
  DetectorTensors t;
  t.enc_w1 = wrap({8, 1, 3, 3}, m.enc_w1);
  t.enc_b1 = wrap({8}, m.enc_b1);
  t.enc_w2 = wrap({c, 8, 4, 4}, m.enc_w2);
  t.enc_b2 = wrap({c}, m.enc_b2);
  t.dec_w = wrap({c, c, 3, 3}, m.dec_w);
  t.dec_b = wrap({c}, m.dec_b);
  t.dec2_w = wrap({c, c, 3, 3}, m.dec2_w);
  t.dec2_b = wrap({c}, m.dec2_b);
  t.cls_w = wrap({2, c, 1, 1}, m.cls_w);
  t.cls_b = wrap({2}, m.cls_b);
  t.box_w = wrap({4, c, 1, 1}, m.box_w);
  t.box_b = wrap({4}, m.box_b);
  return t;
}

}  // namespace

DetectorTensors detector_constants(const DetectorModel& model) {
  return pack_detector(model, [](ad::Shape s, const std::vector<float>& v) {
    return ad::Tensor(std::move(s), v);
  });
}

DetectorTensors detector_leaves(const DetectorModel& model, ad::Tape& tape) {
  return pack_detector(model, [&tape](ad::Shape s, const std::vector<float>& v) {
    return tape.leaf(std::move(s), v);
  });
}

ad::Tensor encode(const DetectorTensors& p, const ad::Tensor& grid, const PipelineConfig& config) {
  if (grid.shape() != ad::Shape{1, config.grid, config.grid}) {
    throw std::invalid_argument("encode: grid shape does not match the pipeline configuration");
  }
  auto h1 = ad::relu(ad::conv2d(grid, p.enc_w1, p.enc_b1, 1, 1));
  auto pre = ad::relu(ad::conv2d(h1, p.enc_w2, p.enc_b2, 2, 1));
  // Bounded tanh-shaped activation: transmitted features live in [0, 1), so
  // the perturbation budgets are a meaningful fraction of the feature range.
  // Zero input with zero biases still maps to exactly zero.
  auto squashed = ad::sigmoid(ad::mul(pre, ad::Tensor::scalar(2.0f)));
  return ad::mul(ad::sub(squashed, ad::Tensor::scalar(0.5f)), ad::Tensor::scalar(2.0f));
}

FeatureMap encode(const DetectorModel& model, const AgentView& view) {
  FeatureMap f;
  f.owner = view.agent_id;
  f.data = encode(detector_constants(model), view.grid, model.config);
  return f;
}

std::pair<int, int> transmit_offset(float from_x, float from_y, float to_x, float to_y,
                                    const PipelineConfig& config) {
  const float fc = config.feat_cell();
  return {static_cast<int>(std::lround((from_y - to_y) / fc)),
          static_cast<int>(std::lround((from_x - to_x) / fc))};
}

FeatureMap transmit(const FeatureMap& feature, float from_x, float from_y, float to_x, float to_y,
                    const PipelineConfig& config, bool* out_of_range) {
  const auto [dr, dc] = transmit_offset(from_x, from_y, to_x, to_y, config);
  const int h = feature.data.shape()[1];
  const int w = feature.data.shape()[2];
  FeatureMap out;
  out.owner = feature.owner;
  if (std::abs(dr) >= h || std::abs(dc) >= w) {
    if (out_of_range) *out_of_range = true;
    out.data = ad::Tensor::zeros(feature.data.shape());
    return out;
  }
  if (out_of_range) *out_of_range = false;
  out.data = (dr == 0 && dc == 0) ? feature.data : ad::shift2d(feature.data, dr, dc);
  return out;
}

ad::Tensor fuse_mean(const ad::Tensor& ego, const std::vector<ad::Tensor>& others) {
  if (!ego.defined()) throw std::invalid_argument("fuse_mean: empty input");
  counters().fuse.fetch_add(1, std::memory_order_relaxed);
  ad::Tensor total = ego;
  for (const auto& o : others) total = ad::add(total, o);
  if (others.empty()) return total;
  return ad::mul(total, ad::Tensor::scalar(1.0f / static_cast<float>(others.size() + 1)));
}

DecodeOut decode(const DetectorTensors& p, const ad::Tensor& fused, const PipelineConfig& config) {
  if (fused.shape() != ad::Shape{config.channels, config.feat_hw, config.feat_hw}) {
    throw std::invalid_argument("decode: fused feature shape does not match the pipeline configuration");
  }
  counters().decode.fetch_add(1, std::memory_order_relaxed);
  auto h1 = ad::relu(ad::conv2d(fused, p.dec_w, p.dec_b, 1, 1));
  auto hidden = ad::relu(ad::conv2d(h1, p.dec2_w, p.dec2_b, 1, 1));
  DecodeOut out;
  out.cls_logits = ad::conv2d(hidden, p.cls_w, p.cls_b, 1, 0);
  out.box_raw = ad::conv2d(hidden, p.box_w, p.box_b, 1, 0);
  out.h = config.feat_hw;
  out.w = config.feat_hw;
  return out;
}

std::vector<Proposal> extract_proposals(const DecodeOut& out, const PipelineConfig& config) {
  const auto& cls = out.cls_logits.values();
  const auto& box = out.box_raw.values();
  const int h = out.h, w = out.w;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const float fc = config.feat_cell();
  std::vector<Proposal> proposals;
  proposals.reserve(plane);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const std::size_t idx = static_cast<std::size_t>(r) * w + c;
      const float l0 = cls[idx], l1 = cls[plane + idx];
      const float m = std::max(l0, l1);
      const float e0 = std::exp(l0 - m), e1 = std::exp(l1 - m);
      Proposal p;
      p.cell = static_cast<int>(idx);
      p.p_object = e0 / (e0 + e1);
      p.p_background = e1 / (e0 + e1);
      p.confidence = std::max(p.p_object, p.p_background);
      const float dx = box[idx];
      const float dy = box[plane + idx];
      const float lw = std::min(std::max(box[2 * plane + idx], -4.0f), 4.0f);
      const float lh = std::min(std::max(box[3 * plane + idx], -4.0f), 4.0f);
      p.box.cx = (static_cast<float>(c) + 0.5f + dx) * fc;
      p.box.cy = (static_cast<float>(r) + 0.5f + dy) * fc;
      p.box.w = config.anchor * std::exp(lw);
      p.box.h = config.anchor * std::exp(lh);
      proposals.push_back(p);
    }
  }
  return proposals;
}

std::vector<Proposal> detections(const std::vector<Proposal>& proposals,
                                 const PipelineConfig& config) {
  std::vector<Proposal> kept;
  for (const auto& p : proposals) {
    if (p.p_object > config.score_threshold) kept.push_back(p);
  }
  return kept;
}

BoxGraph decode_box_graph(const DecodeOut& out, int r, int c, const PipelineConfig& config) {
  const std::int64_t plane = static_cast<std::int64_t>(out.h) * out.w;
  const std::int64_t idx = static_cast<std::int64_t>(r) * out.w + c;
  const float fc = config.feat_cell();
  BoxGraph g;
  auto dx = ad::at(out.box_raw, idx);
  auto dy = ad::at(out.box_raw, plane + idx);
  auto lw = ad::clamp(ad::at(out.box_raw, 2 * plane + idx), -4.0f, 4.0f);
  auto lh = ad::clamp(ad::at(out.box_raw, 3 * plane + idx), -4.0f, 4.0f);
  g.cx = ad::mul(ad::add(dx, ad::Tensor::scalar(static_cast<float>(c) + 0.5f)), ad::Tensor::scalar(fc));
  g.cy = ad::mul(ad::add(dy, ad::Tensor::scalar(static_cast<float>(r) + 0.5f)), ad::Tensor::scalar(fc));
  g.w = ad::mul(ad::exp(lw), ad::Tensor::scalar(config.anchor));
  g.h = ad::mul(ad::exp(lh), ad::Tensor::scalar(config.anchor));
  return g;
}

std::vector<Box> visible_boxes(const Scene& scene,
                               const std::vector<std::pair<float, float>>& poses,
                               const PipelineConfig& config) {
  std::vector<Box> local;
  if (poses.empty()) return local;
  const float ego_x = poses[0].first, ego_y = poses[0].second;
  for (const Box& b : scene.objects) {
    bool seen = false;
    for (const auto& [px, py] : poses) {
      const float dx = b.cx - px, dy = b.cy - py;
      if (dx * dx + dy * dy <= config.fov_radius * config.fov_radius) {
        seen = true;
        break;
      }
    }
    if (!seen) continue;
    Box lb = b;
    lb.cx = b.cx - (ego_x - config.world / 2);
    lb.cy = b.cy - (ego_y - config.world / 2);
    local.push_back(lb);
  }
  return local;
}

CellTargets cell_targets(const std::vector<Box>& local_boxes, const PipelineConfig& config) {
  const int hw = config.feat_hw;
  const float fc = config.feat_cell();
  const std::size_t plane = static_cast<std::size_t>(hw) * hw;
  CellTargets t;
  t.labels.assign(plane, 1);  // background
  t.box_targets.assign(4 * plane, 0.0f);
  t.box_mask.assign(4 * plane, 0.0f);
  for (const Box& b : local_boxes) {
    const int c = static_cast<int>(std::floor(b.cx / fc));
    const int r = static_cast<int>(std::floor(b.cy / fc));
    if (r < 0 || r >= hw || c < 0 || c >= hw) continue;
    const std::size_t idx = static_cast<std::size_t>(r) * hw + c;
    t.labels[idx] = 0;
    t.box_targets[idx] = b.cx / fc - (static_cast<float>(c) + 0.5f);
    t.box_targets[plane + idx] = b.cy / fc - (static_cast<float>(r) + 0.5f);
    t.box_targets[2 * plane + idx] = std::log(b.w / config.anchor);
    t.box_targets[3 * plane + idx] = std::log(b.h / config.anchor);
    for (int ch = 0; ch < 4; ++ch) t.box_mask[static_cast<std::size_t>(ch) * plane + idx] = 1.0f;
    ++t.positives;
  }
  return t;
}

ad::Tensor detection_loss(const DecodeOut& out, const CellTargets& targets,
                          const DetectorTrainConfig& config) {
  const std::size_t plane = static_cast<std::size_t>(out.h) * out.w;
  auto rows = ad::channels_last(out.cls_logits);  // [HW, 2]
  std::vector<float> weights(plane, 1.0f);
  for (std::size_t i = 0; i < plane; ++i) {
    if (targets.labels[i] == 0) weights[i] = config.positive_weight;
  }
  auto ce = ad::softmax_cross_entropy(rows, targets.labels, weights);
  if (targets.positives == 0) return ce;

  ad::Tensor mask({4, out.h, out.w}, targets.box_mask);
  ad::Tensor tgt({4, out.h, out.w}, targets.box_targets);
  auto masked_pred = ad::mul(out.box_raw, mask);
  auto box_sum = ad::sum(ad::smooth_l1(masked_pred, tgt));
  auto box_term = ad::mul(box_sum, ad::Tensor::scalar(config.box_loss_weight /
                                                      (4.0f * static_cast<float>(targets.positives))));
  return ad::add(ce, box_term);
}

DetectorModel train_detector(const std::vector<Scene>& scenes, const PipelineConfig& pipeline,
                             const DetectorTrainConfig& config, std::uint64_t seed,
                             std::vector<double>* epoch_losses) {
  if (scenes.empty()) throw std::invalid_argument("train_detector: need at least one scene");
  if (epoch_losses) epoch_losses->clear();
  if (config.agent_count < 1) throw std::invalid_argument("train_detector: agent_count must be >= 1");
  DetectorModel model = DetectorModel::init(pipeline, mix_seed(seed, 0xd1));
  ad::Optimizer opt({.learning_rate = config.learning_rate, .adaptive = config.adaptive});
  auto params = model.params();

  Rng order_rng(mix_seed(seed, 0x0d));
  std::vector<std::size_t> order(scenes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<std::vector<float>> grad_acc(params.size());
  int acc_count = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    order_rng.shuffle(order);
    double epoch_loss = 0;
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      const Scene& scene = scenes[order[pos]];
      Rng frame_rng(mix_seed(seed, 0xf0 + static_cast<std::uint64_t>(epoch) * scenes.size() + order[pos]));
      auto poses = sample_poses(config.agent_count, pipeline, frame_rng);
      auto targets = cell_targets(visible_boxes(scene, poses, pipeline), pipeline);

      std::vector<AgentView> views;
      for (int a = 0; a < config.agent_count; ++a) {
        views.push_back(observe(scene, pipeline, a, poses[static_cast<std::size_t>(a)].first,
                                poses[static_cast<std::size_t>(a)].second,
                                mix_seed(scene.seed, 0xa0 + static_cast<std::uint64_t>(epoch) * 64 + a)));
      }
      auto shift_of = [&](int a) {
        return transmit_offset(poses[static_cast<std::size_t>(a)].first,
                               poses[static_cast<std::size_t>(a)].second, poses[0].first,
                               poses[0].second, pipeline);
      };

      // Per-collaborator additive perturbations for this step: uniform noise
      // at a random amplitude plus, for one random victim, a single
      // gradient-sign step against the current model.
      std::vector<std::vector<float>> extra(static_cast<std::size_t>(config.agent_count));
      for (int a = 1; a < config.agent_count; ++a) {
        if (config.feature_noise <= 0) continue;
        const float amp = frame_rng.uniform_f(0.0f, config.feature_noise);
        auto& noise = extra[static_cast<std::size_t>(a)];
        noise.resize(static_cast<std::size_t>(pipeline.channels) * pipeline.feat_hw * pipeline.feat_hw);
        for (auto& v : noise) v = frame_rng.uniform_f(-amp, amp);
      }
      if (config.sign_hardening > 0 && config.agent_count >= 2) {
        const int victim = 1 + static_cast<int>(frame_rng.uniform_index(
                                   static_cast<std::uint64_t>(config.agent_count - 1)));
        const float amp = frame_rng.uniform_f(0.0f, config.sign_hardening);
        ad::Tape probe;
        auto frozen = detector_constants(model);
        ad::Tensor ego_c;
        std::vector<ad::Tensor> others_c;
        ad::Tensor victim_leaf;
        for (int a = 0; a < config.agent_count; ++a) {
          auto feat = encode(frozen, views[static_cast<std::size_t>(a)].grid, pipeline);
          if (a == 0) {
            ego_c = feat;
            continue;
          }
          const auto [dr, dc] = shift_of(a);
          auto sent = ad::shift2d(feat, dr, dc);
          if (a == victim) {
            victim_leaf = probe.leaf(sent);
            others_c.push_back(victim_leaf);
          } else {
            others_c.push_back(sent);
          }
        }
        auto probe_loss = detection_loss(decode(frozen, fuse_mean(ego_c, others_c), pipeline),
                                         targets, config);
        probe.backward(probe_loss);
        const auto& g = probe.grad(victim_leaf);
        auto& delta = extra[static_cast<std::size_t>(victim)];
        if (delta.empty()) delta.assign(g.size(), 0.0f);
        for (std::size_t i = 0; i < g.size(); ++i) {
          delta[i] += g[i] > 0 ? amp : (g[i] < 0 ? -amp : 0.0f);
        }
      }

      ad::Tape tape;
      auto leaves = detector_leaves(model, tape);
      std::vector<ad::Tensor> leaf_list{leaves.enc_w1, leaves.enc_b1, leaves.enc_w2, leaves.enc_b2,
                                        leaves.dec_w,  leaves.dec_b,  leaves.dec2_w, leaves.dec2_b,
                                        leaves.cls_w,  leaves.cls_b,  leaves.box_w,  leaves.box_b};

      ad::Tensor ego_feat;
      std::vector<ad::Tensor> other_feats;
      for (int a = 0; a < config.agent_count; ++a) {
        auto feat = encode(leaves, views[static_cast<std::size_t>(a)].grid, pipeline);
        if (a == 0) {
          ego_feat = feat;
        } else {
          const auto [dr, dc] = shift_of(a);
          auto sent = ad::shift2d(feat, dr, dc);
          if (!extra[static_cast<std::size_t>(a)].empty()) {
            sent = ad::add(sent, ad::Tensor(sent.shape(), extra[static_cast<std::size_t>(a)]));
          }
          other_feats.push_back(sent);
        }
      }
      auto fused = fuse_mean(ego_feat, other_feats);
      auto out = decode(leaves, fused, pipeline);
      auto loss = detection_loss(out, targets, config);
      if (!std::isfinite(loss.item())) {
        throw std::runtime_error("train_detector: loss diverged (non-finite) at epoch " +
                                 std::to_string(epoch));
      }
      epoch_loss += loss.item();
      tape.backward(loss);

      for (std::size_t p = 0; p < params.size(); ++p) {
        const auto& g = tape.grad(leaf_list[p]);
        if (grad_acc[p].empty()) grad_acc[p].assign(params[p].data->size(), 0.0f);
        for (std::size_t i = 0; i < g.size(); ++i) grad_acc[p][i] += g[i];
      }
      ++acc_count;
      if (acc_count == config.batch_size || pos + 1 == order.size()) {
        for (auto& g : grad_acc)
          for (auto& v : g) v /= static_cast<float>(acc_count);
        opt.step(params, grad_acc);
        for (auto& g : grad_acc) g.clear();
        acc_count = 0;
      }
    }
    if (epoch_losses) epoch_losses->push_back(epoch_loss / static_cast<double>(order.size()));
  }
  return model;
}

namespace {

std::vector<std::pair<std::string, std::string>> pipeline_config_kv(const PipelineConfig& c) {
  auto f = [](float v) {
    std::ostringstream os;
    os << v;
    return os.str();
  };
  return {{"grid", std::to_string(c.grid)},
          {"channels", std::to_string(c.channels)},
          {"feat_hw", std::to_string(c.feat_hw)},
          {"world", f(c.world)},
          {"fov_radius", f(c.fov_radius)},
          {"noise_sigma", f(c.noise_sigma)},
          {"anchor", f(c.anchor)},
          {"score_threshold", f(c.score_threshold)},
          {"pose_range", f(c.pose_range)}};
}

PipelineConfig pipeline_config_from_kv(const std::vector<std::pair<std::string, std::string>>& kv) {
  PipelineConfig c;
  for (const auto& [k, v] : kv) {
    if (k == "grid") c.grid = std::stoi(v);
    else if (k == "channels") c.channels = std::stoi(v);
    else if (k == "feat_hw") c.feat_hw = std::stoi(v);
    else if (k == "world") c.world = std::stof(v);
    else if (k == "fov_radius") c.fov_radius = std::stof(v);
    else if (k == "noise_sigma") c.noise_sigma = std::stof(v);
    else if (k == "anchor") c.anchor = std::stof(v);
    else if (k == "score_threshold") c.score_threshold = std::stof(v);
    else if (k == "pose_range") c.pose_range = std::stof(v);
  }
  return c;
}

}  // namespace

void save_detector(const std::string& path, const DetectorModel& model) {
  ckpt::save(path, "detector", pipeline_config_kv(model.config), model.params());
}

DetectorModel load_detector(const std::string& path) {
  const auto header = ckpt::peek(path);
  DetectorModel model;
  model.config = pipeline_config_from_kv(header.config);
  ckpt::load(path, "detector", model.params());
  return model;
}

PipelineCounters& counters() {
  static PipelineCounters instance;
  return instance;
}

}  // namespace cpshield::sim
