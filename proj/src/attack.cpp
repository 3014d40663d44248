#include "cpshield/attack.hpp"

#include "cpshield/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cpshield::attack {

const char* attack_name(AttackType type) {
  switch (type) {
    case AttackType::None: return "none";
    case AttackType::PGD: return "pgd";
    case AttackType::BIM: return "bim";
    case AttackType::CW: return "cw";
    case AttackType::FGSM: return "fgsm";
    case AttackType::GN: return "gn";
  }
  return "unknown";
}

std::optional<AttackType> attack_from_name(const std::string& name) {
  for (AttackType t : {AttackType::None, AttackType::PGD, AttackType::BIM, AttackType::CW,
                       AttackType::FGSM, AttackType::GN}) {
    if (name == attack_name(t)) return t;
  }
  return std::nullopt;
}

void AttackConfig::validate() const {
  if (budget < 0) throw std::invalid_argument("attack: budget must be non-negative");
  if (steps < 1) throw std::invalid_argument("attack: steps must be positive");
  if (!(tau1 > 0 && tau1 < 1 && tau2 > 0 && tau2 < 1)) {
    throw std::invalid_argument("attack: confidence thresholds must lie in (0,1)");
  }
  if ((type == AttackType::PGD || type == AttackType::BIM) && budget > 0) {
    if (!(step_size > 0 && step_size <= budget)) {
      throw std::invalid_argument("attack: PGD/BIM require 0 < step_size <= budget");
    }
  }
}

ad::Tensor iou_graph(const sim::BoxGraph& a, const sim::Box& b) {
  const auto half = ad::Tensor::scalar(0.5f);
  auto ax1 = ad::sub(a.cx, ad::mul(a.w, half));
  auto ax2 = ad::add(a.cx, ad::mul(a.w, half));
  auto ay1 = ad::sub(a.cy, ad::mul(a.h, half));
  auto ay2 = ad::add(a.cy, ad::mul(a.h, half));
  const auto bx1 = ad::Tensor::scalar(b.cx - b.w / 2);
  const auto bx2 = ad::Tensor::scalar(b.cx + b.w / 2);
  const auto by1 = ad::Tensor::scalar(b.cy - b.h / 2);
  const auto by2 = ad::Tensor::scalar(b.cy + b.h / 2);
  auto ix = ad::relu(ad::sub(ad::minimum(ax2, bx2), ad::maximum(ax1, bx1)));
  auto iy = ad::relu(ad::sub(ad::minimum(ay2, by2), ad::maximum(ay1, by1)));
  auto inter = ad::mul(ix, iy);
  auto area_a = ad::mul(a.w, a.h);
  const auto area_b = ad::Tensor::scalar(b.w * b.h);
  auto uni = ad::sub(ad::add(area_a, area_b), inter);
  return ad::div(inter, uni);
}

ad::Tensor adv_loss(const sim::DecodeOut& perturbed, const std::vector<sim::Proposal>& clean,
                    const sim::PipelineConfig& pipeline, const AttackConfig& config) {
  const std::size_t cells = static_cast<std::size_t>(perturbed.h) * perturbed.w;
  if (clean.size() != cells) throw std::invalid_argument("adv_loss: proposal lists are misaligned");
  constexpr float kEps = 1e-6f;
  const std::int64_t plane = static_cast<std::int64_t>(cells);

  ad::Tensor total;
  bool any = false;
  for (std::size_t i = 0; i < cells; ++i) {
    const sim::Proposal& p = clean[i];
    if (p.cell != static_cast<int>(i)) throw std::invalid_argument("adv_loss: proposal lists are misaligned");
    const int r = static_cast<int>(i) / perturbed.w;
    const int c = static_cast<int>(i) % perturbed.w;
    const int clean_class = p.p_object >= p.p_background ? 0 : 1;
    const float clean_conf = clean_class == 0 ? p.p_object : p.p_background;

    ad::Tensor term;
    if (clean_class != config.background_class && clean_conf > config.tau1) {
      // Perturbed probability of the clean class via the two-class softmax.
      auto l_same = ad::at(perturbed.cls_logits, static_cast<std::int64_t>(clean_class) * plane + static_cast<std::int64_t>(i));
      auto l_other = ad::at(perturbed.cls_logits, static_cast<std::int64_t>(1 - clean_class) * plane + static_cast<std::int64_t>(i));
      auto prob = ad::clamp(ad::sigmoid(ad::sub(l_same, l_other)), kEps, 1.0f - kEps);
      auto eta = iou_graph(sim::decode_box_graph(perturbed, r, c, pipeline), p.box);
      term = ad::mul(ad::neg(ad::log(ad::sub(ad::Tensor::scalar(1.0f), prob))), eta);
    } else if (clean_class == config.background_class && clean_conf > config.tau2) {
      auto l_same = ad::at(perturbed.cls_logits, static_cast<std::int64_t>(clean_class) * plane + static_cast<std::int64_t>(i));
      auto l_other = ad::at(perturbed.cls_logits, static_cast<std::int64_t>(1 - clean_class) * plane + static_cast<std::int64_t>(i));
      auto prob = ad::clamp(ad::sigmoid(ad::sub(l_same, l_other)), kEps, 1.0f - kEps);
      auto log1m = ad::log(ad::sub(ad::Tensor::scalar(1.0f), prob));
      term = ad::mul(ad::Tensor::scalar(-config.lambda_bg), ad::mul(prob, log1m));
    } else {
      continue;
    }
    total = any ? ad::add(total, term) : term;
    any = true;
  }
  if (!any) {
    // No contributing cell: a zero that stays on the tape so backward still
    // runs (with zero gradients everywhere).
    return ad::mul(ad::at(perturbed.cls_logits, 0), ad::Tensor::scalar(0.0f));
  }
  return total;
}

Objective VictimPipeline::objective(const AttackConfig& config) const {
  return [this, config](ad::Tape&, const ad::Tensor& delta) {
    auto perturbed = ad::add(target_feature, delta);
    std::vector<ad::Tensor> others = other_features;
    others.push_back(perturbed);
    auto fused = sim::fuse_mean(ego_feature, others);
    auto out = sim::decode(params, fused, pipeline);
    auto loss = adv_loss(out, clean_proposals, pipeline, config);
    return config.sign_flip ? ad::neg(loss) : loss;
  };
}

VictimPipeline make_victim(const sim::DetectorModel& model, const ad::Tensor& ego_feature,
                           const std::vector<ad::Tensor>& collaborators, std::size_t target_index) {
  if (target_index >= collaborators.size()) throw std::invalid_argument("make_victim: bad target index");
  VictimPipeline v;
  v.pipeline = model.config;
  v.params = sim::detector_constants(model);
  v.ego_feature = ego_feature.detach();
  for (std::size_t i = 0; i < collaborators.size(); ++i) {
    if (i == target_index) {
      v.target_feature = collaborators[i].detach();
    } else {
      v.other_features.push_back(collaborators[i].detach());
    }
  }
  std::vector<ad::Tensor> all;
  all.reserve(collaborators.size());
  for (const auto& t : collaborators) all.push_back(t.detach());
  auto clean_out = sim::decode(v.params, sim::fuse_mean(v.ego_feature, all), v.pipeline);
  v.clean_proposals = sim::extract_proposals(clean_out, v.pipeline);
  return v;
}

namespace {

std::vector<float> clip_abs(std::vector<float> v, float bound) {
  for (auto& x : v) x = std::min(std::max(x, -bound), bound);
  return v;
}

/// Gradient of the objective at delta; returns false when it vanishes
/// everywhere.
bool objective_grad(const Objective& objective, const ad::Shape& shape,
                    const std::vector<float>& delta, std::vector<float>& grad, float& value) {
  ad::Tape tape;
  auto leaf = tape.leaf(shape, delta);
  auto loss = objective(tape, leaf);
  value = loss.item();
  tape.backward(loss);
  grad = tape.grad(leaf);
  if (grad.empty()) grad.assign(delta.size(), 0.0f);
  for (float g : grad) {
    if (g != 0.0f) return true;
  }
  return false;
}

float objective_value(const Objective& objective, const ad::Shape& shape,
                      const std::vector<float>& delta) {
  ad::Tape tape;
  auto leaf = tape.leaf(shape, delta);
  return objective(tape, leaf).item();
}

Perturbation iterative_signed(const Objective& objective, const ad::Shape& shape,
                              const AttackConfig& config, std::vector<float> delta) {
  Perturbation out;
  bool saw_gradient = false;
  float best = -std::numeric_limits<float>::infinity();
  for (int step = 0; step < config.steps; ++step) {
    std::vector<float> grad;
    float value = 0;
    saw_gradient = objective_grad(objective, shape, delta, grad, value) || saw_gradient;
    best = std::max(best, value);
    for (std::size_t i = 0; i < delta.size(); ++i) {
      const float s = grad[i] > 0 ? 1.0f : (grad[i] < 0 ? -1.0f : 0.0f);
      delta[i] += config.step_size * s;
    }
    delta = clip_abs(std::move(delta), config.budget);
  }
  best = std::max(best, objective_value(objective, shape, delta));
  out.delta = ad::Tensor(shape, std::move(delta));
  out.best_loss = best;
  out.iterations = config.steps;
  out.zero_gradient = !saw_gradient;
  return out;
}

}  // namespace

Perturbation fgsm(const Objective& objective, const ad::Shape& shape, const AttackConfig& config) {
  config.validate();
  const std::size_t n = static_cast<std::size_t>(ad::shape_numel(shape));
  std::vector<float> delta(n, 0.0f);
  std::vector<float> grad;
  float value = 0;
  const bool has_grad = objective_grad(objective, shape, delta, grad, value);
  for (std::size_t i = 0; i < n; ++i) {
    const float s = grad[i] > 0 ? 1.0f : (grad[i] < 0 ? -1.0f : 0.0f);
    delta[i] = config.budget * s;
  }
  Perturbation out;
  out.best_loss = std::max(value, objective_value(objective, shape, delta));
  out.delta = ad::Tensor(shape, std::move(delta));
  out.iterations = 1;
  out.zero_gradient = !has_grad;
  return out;
}

Perturbation pgd(const Objective& objective, const ad::Shape& shape, const AttackConfig& config,
                 std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const std::size_t n = static_cast<std::size_t>(ad::shape_numel(shape));
  std::vector<float> delta(n);
  for (auto& d : delta) d = rng.uniform_f(-config.budget, config.budget);
  return iterative_signed(objective, shape, config, std::move(delta));
}

Perturbation bim(const Objective& objective, const ad::Shape& shape, const AttackConfig& config) {
  config.validate();
  const std::size_t n = static_cast<std::size_t>(ad::shape_numel(shape));
  return iterative_signed(objective, shape, config, std::vector<float>(n, 0.0f));
}

Perturbation cw(const Objective& objective, const ad::Shape& shape, const AttackConfig& config) {
  config.validate();
  const std::size_t n = static_cast<std::size_t>(ad::shape_numel(shape));
  std::vector<float> delta(n, 0.0f);
  // Ascends objective - c * ||delta||_2^2 with raw (unsigned) gradients.
  // The quadratic penalty is applied as an exact proximal shrinkage so the
  // update stays stable for arbitrarily large c; an explicit step would
  // oscillate once step_size * 2c exceeds one.
  const float shrink = 1.0f / (1.0f + 2.0f * config.step_size * config.cw_penalty);
  bool saw_gradient = false;
  for (int step = 0; step < config.steps; ++step) {
    std::vector<float> grad;
    float value = 0;
    saw_gradient = objective_grad(objective, shape, delta, grad, value) || saw_gradient;
    for (std::size_t i = 0; i < n; ++i) delta[i] = (delta[i] + config.step_size * grad[i]) * shrink;
  }
  delta = clip_abs(std::move(delta), config.budget);
  Perturbation out;
  out.best_loss = objective_value(objective, shape, delta);
  out.delta = ad::Tensor(shape, std::move(delta));
  out.iterations = config.steps;
  out.zero_gradient = !saw_gradient;
  return out;
}

Perturbation gn(const ad::Shape& shape, const AttackConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t n = static_cast<std::size_t>(ad::shape_numel(shape));
  std::vector<float> delta(n);
  const double sigma = config.budget / 2.0;
  for (auto& d : delta) d = static_cast<float>(rng.normal(0.0, sigma));
  delta = clip_abs(std::move(delta), config.budget);
  Perturbation out;
  out.delta = ad::Tensor(shape, std::move(delta));
  out.iterations = 0;
  return out;
}

Perturbation run_attack(const Objective& objective, const ad::Shape& shape,
                        const AttackConfig& config, std::uint64_t seed) {
  switch (config.type) {
    case AttackType::PGD: return pgd(objective, shape, config, seed);
    case AttackType::BIM: return bim(objective, shape, config);
    case AttackType::CW: return cw(objective, shape, config);
    case AttackType::FGSM: {
      AttackConfig one_step = config;
      one_step.steps = 1;  // forced for FGSM
      return fgsm(objective, shape, one_step);
    }
    case AttackType::GN: {
      Perturbation p = gn(shape, config, seed);
      p.best_loss = objective ? objective_value(objective, shape, p.delta.values()) : 0.0f;
      return p;
    }
    case AttackType::None: break;
  }
  throw std::invalid_argument("run_attack: unknown attack type");
}

AttackOutcome attack_agent(const sim::DetectorModel& model, const sim::FeatureMap& ego,
                           const std::vector<sim::FeatureMap>& collaborators,
                           std::size_t malicious_index, const AttackConfig& config,
                           std::uint64_t seed) {
  if (malicious_index >= collaborators.size()) {
    throw std::invalid_argument("attack_agent: malicious index out of range");
  }
  if (collaborators[malicious_index].owner == ego.owner) {
    throw std::invalid_argument("attack_agent: the malicious agent must not be the ego agent");
  }
  AttackOutcome outcome;
  outcome.perturbed.owner = collaborators[malicious_index].owner;
  if (config.type == AttackType::None) {
    outcome.perturbed.data = collaborators[malicious_index].data.detach();
    outcome.perturbation.delta = ad::Tensor::zeros(collaborators[malicious_index].data.shape());
    return outcome;
  }
  std::vector<ad::Tensor> features;
  features.reserve(collaborators.size());
  for (const auto& c : collaborators) features.push_back(c.data);
  VictimPipeline victim = make_victim(model, ego.data, features, malicious_index);
  const ad::Shape& shape = victim.target_feature.shape();
  outcome.perturbation = run_attack(victim.objective(config), shape, config, seed);
  outcome.perturbed.data = ad::add(victim.target_feature, outcome.perturbation.delta);
  return outcome;
}

}  // namespace cpshield::attack
