#include "cpshield/guard.hpp"

#include "cpshield/checkpoint.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

namespace cpshield::guard {

ad::Tensor residual(const ad::Tensor& ego, const ad::Tensor& collaborator) {
  if (!ad::same_shape(ego.shape(), collaborator.shape())) {
    throw std::invalid_argument("residual: feature shapes differ");
  }
  return ad::sub(ego, collaborator);
}

GuardModel GuardModel::init(int channels, int feat_hw, int embed_dim, std::uint64_t seed) {
  if (feat_hw % 8 != 0) throw std::invalid_argument("guard: feature side must be divisible by 8");
  Rng rng(seed);
  auto fill = [&rng](std::vector<float>& v, std::size_t n, int fan_in) {
    const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
    v.resize(n);
    for (auto& x : v) x = rng.uniform_f(-bound, bound);
  };
  GuardModel m;
  m.channels = channels;
  m.feat_hw = feat_hw;
  m.embed_dim = embed_dim;
  fill(m.c1_w, 8ul * static_cast<std::size_t>(channels) * 4, channels * 4);
  fill(m.c1_b, 8, channels * 4);
  fill(m.c2_w, 16ul * 8 * 4, 8 * 4);
  fill(m.c2_b, 16, 8 * 4);
  fill(m.c3_w, 16ul * 16 * 4, 16 * 4);
  fill(m.c3_b, 16, 16 * 4);
  const int flat = m.flatten_dim();
  fill(m.fc1_w, static_cast<std::size_t>(embed_dim) * static_cast<std::size_t>(flat), flat);
  fill(m.fc1_b, static_cast<std::size_t>(embed_dim), flat);
  fill(m.fc2_w, 2ul * static_cast<std::size_t>(embed_dim), embed_dim);
  fill(m.fc2_b, 2, embed_dim);
  return m;
}

int GuardModel::flatten_dim() const {
  const int side = feat_hw / 8;
  return 16 * side * side;
}

std::vector<ad::ParamRef> GuardModel::params() {
  const int flat = flatten_dim();
  return {
      {"c1_w", {8, channels, 2, 2}, &c1_w},      {"c1_b", {8}, &c1_b},
      {"c2_w", {16, 8, 2, 2}, &c2_w},            {"c2_b", {16}, &c2_b},
      {"c3_w", {16, 16, 2, 2}, &c3_w},           {"c3_b", {16}, &c3_b},
      {"fc1_w", {embed_dim, flat}, &fc1_w},      {"fc1_b", {embed_dim}, &fc1_b},
      {"fc2_w", {2, embed_dim}, &fc2_w},         {"fc2_b", {2}, &fc2_b},
  };
}

std::vector<ad::ParamRef> GuardModel::params() const {
  return const_cast<GuardModel*>(this)->params();
}

namespace {

GuardTensors pack_guard(const GuardModel& m,
                        const std::function<ad::Tensor(ad::Shape, const std::vector<float>&)>& wrap) {
  GuardTensors t;
  t.c1_w = wrap({8, m.channels, 2, 2}, m.c1_w);
  t.c1_b = wrap({8}, m.c1_b);
  t.c2_w = wrap({16, 8, 2, 2}, m.c2_w);
  t.c2_b = wrap({16}, m.c2_b);
  t.c3_w = wrap({16, 16, 2, 2}, m.c3_w);
  t.c3_b = wrap({16}, m.c3_b);
  t.fc1_w = wrap({m.embed_dim, m.flatten_dim()}, m.fc1_w);
  t.fc1_b = wrap({m.embed_dim}, m.fc1_b);
  t.fc2_w = wrap({2, m.embed_dim}, m.fc2_w);
  t.fc2_b = wrap({2}, m.fc2_b);
  return t;
}

}  // namespace

GuardTensors guard_constants(const GuardModel& model) {
  return pack_guard(model, [](ad::Shape s, const std::vector<float>& v) {
    return ad::Tensor(std::move(s), v);
  });
}

GuardTensors guard_leaves(const GuardModel& model, ad::Tape& tape) {
  return pack_guard(model, [&tape](ad::Shape s, const std::vector<float>& v) {
    return tape.leaf(std::move(s), v);
  });
}

EmbeddingOut embed_and_classify(const GuardTensors& p, const ad::Tensor& residual_map,
                                const GuardModel& model) {
  if (residual_map.shape() != ad::Shape{model.channels, model.feat_hw, model.feat_hw}) {
    throw std::invalid_argument("guard: residual shape does not match the model");
  }
  auto h1 = ad::relu(ad::conv2d(residual_map, p.c1_w, p.c1_b, 2, 0));
  auto h2 = ad::relu(ad::conv2d(h1, p.c2_w, p.c2_b, 2, 0));
  auto h3 = ad::relu(ad::conv2d(h2, p.c3_w, p.c3_b, 2, 0));
  auto flat = ad::reshape(h3, {model.flatten_dim()});
  EmbeddingOut out;
  out.embedding = ad::relu(ad::linear(flat, p.fc1_w, p.fc1_b));
  out.logits = ad::linear(out.embedding, p.fc2_w, p.fc2_b);
  return out;
}

ClassCenters compute_centers(const std::vector<ad::Tensor>& embeddings,
                             const std::vector<int>& labels) {
  if (embeddings.empty() || embeddings.size() != labels.size()) {
    throw std::invalid_argument("compute_centers: empty or mismatched inputs");
  }
  ClassCenters centers;
  ad::Tensor sums[2];
  int counts[2] = {0, 0};
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    const int y = labels[i];
    if (y != 0 && y != 1) throw std::invalid_argument("compute_centers: labels must be 0 or 1");
    sums[y] = counts[y] == 0 ? embeddings[i] : ad::add(sums[y], embeddings[i]);
    ++counts[y];
  }
  if (counts[0] > 0) {
    centers.benign = counts[0] == 1 ? sums[0]
                                    : ad::mul(sums[0], ad::Tensor::scalar(1.0f / static_cast<float>(counts[0])));
  }
  if (counts[1] > 0) {
    centers.malicious = counts[1] == 1
                            ? sums[1]
                            : ad::mul(sums[1], ad::Tensor::scalar(1.0f / static_cast<float>(counts[1])));
  }
  centers.n_benign = counts[0];
  centers.n_malicious = counts[1];
  return centers;
}

namespace {

struct CenteredBatch {
  std::vector<ad::Tensor> shifted;              // V_i - own-class center
  std::vector<std::vector<ad::Tensor>> sim;     // cosine similarities, full matrix
};

CenteredBatch center_and_sims(const std::vector<ad::Tensor>& embeddings,
                              const std::vector<int>& labels, const ClassCenters& centers) {
  CenteredBatch b;
  const std::size_t n = embeddings.size();
  b.shifted.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& center = labels[i] == 0 ? centers.benign : centers.malicious;
    if (!center) throw std::invalid_argument("contrastive: a batch class has no center");
    b.shifted.push_back(ad::sub(embeddings[i], *center));
  }
  b.sim.assign(n, std::vector<ad::Tensor>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      auto s = ad::cosine_similarity(b.shifted[i], b.shifted[j]);
      b.sim[i][j] = s;
      b.sim[j][i] = s;
    }
  }
  return b;
}

std::optional<ad::Tensor> pair_loss_from_sims(std::size_t m, std::size_t n,
                                              const CenteredBatch& batch,
                                              const std::vector<int>& labels,
                                              const GuardConfig& config) {
  const std::size_t count = labels.size();
  const auto inv_tau = ad::Tensor::scalar(1.0f / config.temperature);
  ad::Tensor denom;
  bool any = false;
  for (std::size_t o = 0; o < count; ++o) {
    if (o == m) continue;
    if (config.denominator == DenominatorMode::PositiveOnly && labels[o] != labels[m]) continue;
    auto term = ad::exp(ad::mul(batch.sim[m][o], inv_tau));
    denom = any ? ad::add(denom, term) : term;
    any = true;
  }
  if (!any) return std::nullopt;  // no admissible partner: pair skipped
  auto numer = ad::exp(ad::mul(batch.sim[m][n], inv_tau));
  return ad::neg(ad::log(ad::div(numer, denom)));
}

}  // namespace

std::optional<ad::Tensor> pair_contrastive_loss(std::size_t m, std::size_t n,
                                                const std::vector<ad::Tensor>& embeddings,
                                                const std::vector<int>& labels,
                                                const ClassCenters& centers,
                                                const GuardConfig& config) {
  if (embeddings.size() < 2) throw std::invalid_argument("contrastive: need at least two samples");
  if (m == n || m >= embeddings.size() || n >= embeddings.size()) {
    throw std::invalid_argument("contrastive: bad pair indices");
  }
  if (config.temperature <= 0) throw std::invalid_argument("contrastive: temperature must be positive");
  auto batch = center_and_sims(embeddings, labels, centers);
  return pair_loss_from_sims(m, n, batch, labels, config);
}

ad::Tensor centered_contrastive_loss(const std::vector<ad::Tensor>& embeddings,
                                     const std::vector<int>& labels, const ClassCenters& centers,
                                     const GuardConfig& config) {
  const std::size_t n = embeddings.size();
  if (n < 2) throw std::invalid_argument("contrastive: need at least two samples");
  if (labels.size() != n) throw std::invalid_argument("contrastive: label count mismatch");
  if (config.temperature <= 0) throw std::invalid_argument("contrastive: temperature must be positive");

  auto batch = center_and_sims(embeddings, labels, centers);
  ad::Tensor total;
  bool any = false;
  for (std::size_t m = 0; m < n; ++m) {
    for (std::size_t k = m + 1; k < n; ++k) {
      const bool positive = labels[m] == labels[k];
      const bool selected =
          config.selector == SelectorMode::PositivePairs ? positive : !positive;
      if (!selected) continue;
      auto term = pair_loss_from_sims(m, k, batch, labels, config);
      if (!term) continue;
      total = any ? ad::add(total, *term) : *term;
      any = true;
    }
  }
  const float pairs = static_cast<float>(n) * static_cast<float>(n - 1) / 2.0f;
  if (!any) {
    // Selector kept nothing: the average over C(N,2) pairs is zero, kept on
    // the tape so callers can still differentiate the mixed objective.
    return ad::mul(ad::sum(ad::sub(embeddings[0], embeddings[0])), ad::Tensor::scalar(0.0f));
  }
  return ad::mul(total, ad::Tensor::scalar(1.0f / pairs));
}

ad::Tensor mixed_loss(const ad::Tensor& logits_batch, const std::vector<int>& labels,
                      const std::optional<ad::Tensor>& contrastive, const GuardConfig& config) {
  if (config.contrastive_weight < 0) throw std::invalid_argument("mixed_loss: alpha must be >= 0");
  auto ce = ad::softmax_cross_entropy(logits_batch, labels);
  if (!contrastive || config.contrastive_weight == 0.0f) return ce;
  return ad::add(ce, ad::mul(*contrastive, ad::Tensor::scalar(config.contrastive_weight)));
}

GuardModel train_guard(const data::Dataset& dataset, const GuardConfig& config, std::uint64_t seed) {
  return train_guard_records(dataset.train(), dataset.manifest.channels, dataset.manifest.height,
                             config, seed);
}

GuardModel train_guard_records(const std::vector<const data::SampleRecord*>& train, int channels,
                               int feat_hw, const GuardConfig& config, std::uint64_t seed) {
  if (train.empty()) throw std::invalid_argument("train_guard: empty train split");
  std::vector<std::size_t> benign_idx, malicious_idx;
  for (std::size_t i = 0; i < train.size(); ++i) {
    (train[i]->label == 0 ? benign_idx : malicious_idx).push_back(i);
  }
  if (benign_idx.empty() || malicious_idx.empty()) {
    throw std::invalid_argument("train_guard: train split must contain both classes");
  }

  GuardModel model = GuardModel::init(channels, feat_hw, config.embed_dim, mix_seed(seed, 0x6d));
  ad::Optimizer opt({.learning_rate = config.learning_rate, .adaptive = config.adaptive});
  auto params = model.params();
  Rng epoch_rng(mix_seed(seed, 0xe0));

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    // Epoch ordering; optionally oversample the minority class to parity.
    std::vector<std::size_t> order;
    if (config.balance_classes && benign_idx.size() != malicious_idx.size()) {
      const auto& majority = benign_idx.size() > malicious_idx.size() ? benign_idx : malicious_idx;
      const auto& minority = benign_idx.size() > malicious_idx.size() ? malicious_idx : benign_idx;
      order = majority;
      for (std::size_t i = 0; i < majority.size(); ++i) order.push_back(minority[i % minority.size()]);
    } else {
      order.reserve(train.size());
      for (std::size_t i = 0; i < train.size(); ++i) order.push_back(i);
    }
    epoch_rng.shuffle(order);

    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      if (stop - start < 2) continue;  // a single sample cannot form a batch objective

      ad::Tape tape;
      auto leaves = guard_leaves(model, tape);
      std::vector<ad::Tensor> leaf_list{leaves.c1_w, leaves.c1_b, leaves.c2_w, leaves.c2_b,
                                        leaves.c3_w, leaves.c3_b, leaves.fc1_w, leaves.fc1_b,
                                        leaves.fc2_w, leaves.fc2_b};
      std::vector<ad::Tensor> embeddings, logit_rows;
      std::vector<int> labels;
      for (std::size_t i = start; i < stop; ++i) {
        const data::SampleRecord& rec = *train[order[i]];
        auto res = residual(rec.ego_feature, rec.collaborator_feature);
        auto out = embed_and_classify(leaves, res, model);
        embeddings.push_back(out.embedding);
        logit_rows.push_back(out.logits);
        labels.push_back(rec.label);
      }
      auto logits = ad::stack(logit_rows);

      std::optional<ad::Tensor> contrastive;
      const bool both_classes =
          std::count(labels.begin(), labels.end(), 0) > 0 &&
          std::count(labels.begin(), labels.end(), 1) > 0;
      if (both_classes && config.contrastive_weight > 0) {
        auto centers = compute_centers(embeddings, labels);
        contrastive = centered_contrastive_loss(embeddings, labels, centers, config);
      }
      auto loss = mixed_loss(logits, labels, contrastive, config);
      if (!std::isfinite(loss.item())) {
        throw std::runtime_error("train_guard: loss diverged (non-finite) at epoch " +
                                 std::to_string(epoch));
      }
      tape.backward(loss);
      std::vector<std::vector<float>> grads;
      grads.reserve(params.size());
      for (const auto& leaf : leaf_list) {
        auto g = tape.grad(leaf);
        if (g.empty()) g.assign(static_cast<std::size_t>(leaf.size()), 0.0f);
        grads.push_back(std::move(g));
      }
      opt.step(params, grads);
    }
  }
  return model;
}

std::vector<Verdict> detect(const sim::FeatureMap& ego,
                            const std::vector<sim::FeatureMap>& collaborators,
                            const GuardModel& model, float threshold) {
  auto params = guard_constants(model);
  std::vector<Verdict> verdicts;
  verdicts.reserve(collaborators.size());
  for (std::size_t i = 0; i < collaborators.size(); ++i) {
    auto res = residual(ego.data, collaborators[i].data);
    auto out = embed_and_classify(params, res, model);
    const float l0 = out.logits.values()[0];
    const float l1 = out.logits.values()[1];
    const float m = std::max(l0, l1);
    const float e0 = std::exp(l0 - m), e1 = std::exp(l1 - m);
    Verdict v;
    v.collaborator_index = static_cast<int>(i);
    v.malicious_probability = e1 / (e0 + e1);
    v.flagged = v.malicious_probability > threshold;
    verdicts.push_back(v);
  }
  return verdicts;
}

DefendOutcome defend(const sim::FeatureMap& ego, const std::vector<sim::FeatureMap>& collaborators,
                     const GuardModel& model, const sim::DetectorModel& detector, float threshold) {
  DefendOutcome outcome;
  outcome.verdicts = detect(ego, collaborators, model, threshold);
  std::vector<ad::Tensor> kept;
  for (std::size_t i = 0; i < collaborators.size(); ++i) {
    if (!outcome.verdicts[i].flagged) kept.push_back(collaborators[i].data);
  }
  outcome.ego_only_fallback = kept.empty() && !collaborators.empty();
  auto fused = sim::fuse_mean(ego.data, kept);
  auto params = sim::detector_constants(detector);
  auto out = sim::decode(params, fused, detector.config);
  outcome.proposals = sim::extract_proposals(out, detector.config);
  return outcome;
}

namespace {

std::vector<std::pair<std::string, std::string>> guard_config_kv(const GuardModel& m) {
  return {{"channels", std::to_string(m.channels)},
          {"feat_hw", std::to_string(m.feat_hw)},
          {"embed_dim", std::to_string(m.embed_dim)}};
}

}  // namespace

void save_guard(const std::string& path, const GuardModel& model) {
  ckpt::save(path, "guard", guard_config_kv(model), model.params());
}

GuardModel load_guard(const std::string& path) {
  const auto header = ckpt::peek(path);
  int channels = 0, feat_hw = 0, embed_dim = 0;
  for (const auto& [k, v] : header.config) {
    if (k == "channels") channels = std::stoi(v);
    else if (k == "feat_hw") feat_hw = std::stoi(v);
    else if (k == "embed_dim") embed_dim = std::stoi(v);
  }
  GuardModel model = GuardModel::init(channels, feat_hw, embed_dim, 0);
  ckpt::load(path, "guard", model.params());
  return model;
}

}  // namespace cpshield::guard
