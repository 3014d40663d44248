#include "cpshield/evalrun.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace cpshield::eval {

double pooled_average_precision(const std::vector<FrameDetections>& frames, double iou_threshold) {
  struct Tagged {
    std::size_t frame;
    Detection det;
  };
  std::vector<Tagged> all;
  std::size_t gt_total = 0;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    gt_total += frames[f].ground_truth.size();
    for (const auto& d : frames[f].detections) all.push_back({f, d});
  }
  if (gt_total == 0) return 0.0;
  std::stable_sort(all.begin(), all.end(),
                   [](const Tagged& a, const Tagged& b) { return a.det.score > b.det.score; });
  std::vector<std::vector<bool>> taken(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) taken[f].assign(frames[f].ground_truth.size(), false);

  std::vector<double> precision(all.size()), recall(all.size());
  double tp = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    const auto& gt = frames[all[i].frame].ground_truth;
    double best = 0;
    std::size_t best_g = gt.size();
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if (taken[all[i].frame][g]) continue;
      const double v = sim::iou(all[i].det.box, gt[g]);
      if (v > best) {
        best = v;
        best_g = g;
      }
    }
    if (best_g < gt.size() && best >= iou_threshold) {
      taken[all[i].frame][best_g] = true;
      tp += 1;
    }
    precision[i] = tp / static_cast<double>(i + 1);
    recall[i] = tp / static_cast<double>(gt_total);
  }
  for (std::size_t i = all.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0, prev = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    ap += (recall[i] - prev) * precision[i];
    prev = recall[i];
  }
  return ap;
}

GuardEval evaluate_guard(const std::vector<const data::SampleRecord*>& records,
                         const guard::GuardModel& model, float threshold) {
  auto params = guard::guard_constants(model);
  std::vector<int> predictions, labels;
  std::vector<std::uint8_t> types;
  std::vector<float> budgets;
  predictions.reserve(records.size());
  for (const auto* rec : records) {
    auto res = guard::residual(rec->ego_feature, rec->collaborator_feature);
    auto out = guard::embed_and_classify(params, res, model);
    const float l0 = out.logits.values()[0], l1 = out.logits.values()[1];
    const float m = std::max(l0, l1);
    const float p_mal = std::exp(l1 - m) / (std::exp(l0 - m) + std::exp(l1 - m));
    predictions.push_back(p_mal > threshold ? 1 : 0);
    labels.push_back(rec->label);
    types.push_back(rec->attack_type);
    budgets.push_back(rec->budget);
  }
  GuardEval result;
  result.counts = confusion(predictions, labels);
  result.metrics = derive(result.counts);

  auto subset_metrics = [&](auto keep) {
    std::vector<int> p, l;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
      if (!keep(i)) continue;
      p.push_back(predictions[i]);
      l.push_back(labels[i]);
    }
    return derive(confusion(p, l));
  };
  for (std::uint8_t t = 1; t <= 5; ++t) {
    bool any = false;
    for (std::size_t i = 0; i < types.size(); ++i) any = any || types[i] == t;
    if (!any) continue;
    result.per_attack.emplace_back(
        attack::attack_name(static_cast<attack::AttackType>(t)),
        subset_metrics([&](std::size_t i) { return types[i] == 0 || types[i] == t; }));
  }
  std::vector<float> budget_values;
  for (std::size_t i = 0; i < budgets.size(); ++i) {
    if (labels[i] == 1 && std::find(budget_values.begin(), budget_values.end(), budgets[i]) ==
                              budget_values.end()) {
      budget_values.push_back(budgets[i]);
    }
  }
  std::sort(budget_values.begin(), budget_values.end());
  for (float b : budget_values) {
    char name[32];
    std::snprintf(name, sizeof name, "budget_%g", static_cast<double>(b));
    result.per_budget.emplace_back(name, subset_metrics([&](std::size_t i) {
      return labels[i] == 0 || budgets[i] == b;
    }));
  }
  return result;
}

EmbeddingMargins embedding_margins(const std::vector<const data::SampleRecord*>& records,
                                   const guard::GuardModel& model) {
  auto params = guard::guard_constants(model);
  std::vector<std::vector<float>> embeddings;
  std::vector<int> labels;
  for (const auto* rec : records) {
    auto res = guard::residual(rec->ego_feature, rec->collaborator_feature);
    auto out = guard::embed_and_classify(params, res, model);
    embeddings.push_back(out.embedding.values());
    labels.push_back(rec->label);
  }
  auto cosine = [](const std::vector<float>& u, const std::vector<float>& v) {
    double dot = 0, nu = 0, nv = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
      dot += static_cast<double>(u[i]) * v[i];
      nu += static_cast<double>(u[i]) * u[i];
      nv += static_cast<double>(v[i]) * v[i];
    }
    nu = std::sqrt(nu);
    nv = std::sqrt(nv);
    if (nu < 1e-8 || nv < 1e-8) return 0.0;
    return dot / (nu * nv + 1e-8);
  };
  EmbeddingMargins m;
  double pos_sum = 0, neg_sum = 0;
  std::size_t pos_n = 0, neg_n = 0;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    for (std::size_t j = i + 1; j < embeddings.size(); ++j) {
      const double dist = 1.0 - cosine(embeddings[i], embeddings[j]);
      if (labels[i] == labels[j]) {
        pos_sum += dist;
        ++pos_n;
      } else {
        neg_sum += dist;
        ++neg_n;
        m.negative_distances.push_back(dist);
      }
    }
  }
  if (pos_n) m.mean_positive_distance = pos_sum / static_cast<double>(pos_n);
  if (neg_n) m.mean_negative_distance = neg_sum / static_cast<double>(neg_n);
  return m;
}

std::vector<const data::SampleRecord*> loo_train_subset(const data::Dataset& dataset,
                                                        attack::AttackType held_out) {
  std::vector<const data::SampleRecord*> out;
  for (const auto* rec : dataset.train()) {
    if (rec->attack_type == static_cast<std::uint8_t>(held_out)) continue;
    out.push_back(rec);
  }
  return out;
}

std::vector<const data::SampleRecord*> type_eval_subset(const data::Dataset& dataset,
                                                        attack::AttackType type) {
  std::vector<const data::SampleRecord*> out;
  for (const auto* rec : dataset.test()) {
    if (rec->attack_type == 0 || rec->attack_type == static_cast<std::uint8_t>(type)) {
      out.push_back(rec);
    }
  }
  return out;
}

std::vector<LeaveOneOutRow> leave_one_out(const data::Dataset& dataset,
                                          const guard::GuardConfig& config, std::uint64_t seed) {
  std::array<bool, 6> present{};
  for (const auto& rec : dataset.records) present[rec.attack_type] = true;
  for (std::uint8_t t = 1; t <= 5; ++t) {
    if (!present[t]) {
      throw std::invalid_argument(std::string("leave_one_out: dataset lacks attack type ") +
                                  attack::attack_name(static_cast<attack::AttackType>(t)));
    }
  }
  std::vector<LeaveOneOutRow> rows;
  {
    auto model = guard::train_guard(dataset, config, seed);
    auto eval = evaluate_guard(dataset.test(), model, config.threshold);
    rows.push_back({"upper-bound", eval.metrics});
  }
  for (std::uint8_t t = 1; t <= 5; ++t) {
    const auto type = static_cast<attack::AttackType>(t);
    auto train = loo_train_subset(dataset, type);
    auto model = guard::train_guard_records(train, dataset.manifest.channels,
                                            dataset.manifest.height, config, mix_seed(seed, t));
    auto eval = evaluate_guard(type_eval_subset(dataset, type), model, config.threshold);
    rows.push_back({attack::attack_name(type), eval.metrics});
  }
  return rows;
}

std::vector<PerceptionFrame> make_perception_frames(const sim::DetectorModel& detector, int count,
                                                    int agent_count, std::uint64_t seed) {
  const auto& pipe = detector.config;
  std::vector<PerceptionFrame> frames;
  frames.reserve(static_cast<std::size_t>(count));
  for (int f = 0; f < count; ++f) {
    const std::uint64_t frame_seed = mix_seed(seed, 7000 + static_cast<std::uint64_t>(f));
    PerceptionFrame frame;
    frame.scene = sim::generate_scene({pipe.world, pipe.world, 3, 6, 4.0f, 7.0f},
                                      mix_seed(frame_seed, 0x5c));
    Rng rng(frame_seed);
    frame.poses = sim::sample_poses(agent_count, pipe, rng);
    for (int a = 0; a < agent_count; ++a) {
      auto view = sim::observe(frame.scene, pipe, a, frame.poses[static_cast<std::size_t>(a)].first,
                               frame.poses[static_cast<std::size_t>(a)].second,
                               mix_seed(frame_seed, 0xb0 + a));
      auto feat = sim::encode(detector, view);
      if (a == 0) {
        frame.ego_feature = feat;
      } else {
        frame.collaborator_features.push_back(sim::transmit(
            feat, frame.poses[static_cast<std::size_t>(a)].first,
            frame.poses[static_cast<std::size_t>(a)].second, frame.poses[0].first,
            frame.poses[0].second, pipe));
      }
    }
    frame.ground_truth = sim::visible_boxes(frame.scene, frame.poses, pipe);
    frames.push_back(std::move(frame));
  }
  return frames;
}

namespace {

FrameDetections frame_detections(const sim::DetectorModel& detector, const PerceptionFrame& frame,
                                 const std::vector<sim::FeatureMap>& collaborators) {
  auto params = sim::detector_constants(detector);
  std::vector<ad::Tensor> features;
  for (const auto& c : collaborators) features.push_back(c.data);
  auto out = sim::decode(params, sim::fuse_mean(frame.ego_feature.data, features), detector.config);
  FrameDetections fd;
  fd.detections = to_detections(sim::extract_proposals(out, detector.config), detector.config);
  fd.ground_truth = frame.ground_truth;
  return fd;
}

}  // namespace

std::vector<sim::FeatureMap> attack_frame(const sim::DetectorModel& detector,
                                          const PerceptionFrame& frame,
                                          const attack::AttackConfig& config, int attackers,
                                          std::uint64_t seed) {
  std::vector<sim::FeatureMap> features = frame.collaborator_features;
  Rng rng(mix_seed(seed, 0xbad));
  std::vector<std::size_t> order(features.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  const int n = std::min<int>(attackers, static_cast<int>(features.size()));
  for (int k = 0; k < n; ++k) {
    const std::size_t victim = order[static_cast<std::size_t>(k)];
    auto outcome = attack::attack_agent(detector, frame.ego_feature, frame.collaborator_features,
                                        victim, config, mix_seed(seed, 0xc0 + victim));
    features[victim] = outcome.perturbed;
  }
  return features;
}

double clean_ap(const sim::DetectorModel& detector, const std::vector<PerceptionFrame>& frames,
                double iou_threshold) {
  std::vector<FrameDetections> fds;
  for (const auto& frame : frames) {
    fds.push_back(frame_detections(detector, frame, frame.collaborator_features));
  }
  return pooled_average_precision(fds, iou_threshold);
}

double attacked_ap(const sim::DetectorModel& detector, const std::vector<PerceptionFrame>& frames,
                   const attack::AttackConfig& config, int attackers, double iou_threshold,
                   std::uint64_t seed) {
  std::vector<FrameDetections> fds;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    auto features = attack_frame(detector, frames[f], config, attackers, mix_seed(seed, f));
    fds.push_back(frame_detections(detector, frames[f], features));
  }
  return pooled_average_precision(fds, iou_threshold);
}

double defended_ap(const sim::DetectorModel& detector, const guard::GuardModel& model,
                   const std::vector<PerceptionFrame>& frames, const attack::AttackConfig& config,
                   int attackers, float threshold, double iou_threshold, std::uint64_t seed) {
  std::vector<FrameDetections> fds;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    auto features = attack_frame(detector, frames[f], config, attackers, mix_seed(seed, f));
    auto outcome = guard::defend(frames[f].ego_feature, features, model, detector, threshold);
    FrameDetections fd;
    fd.detections = to_detections(outcome.proposals, detector.config);
    fd.ground_truth = frames[f].ground_truth;
    fds.push_back(std::move(fd));
  }
  return pooled_average_precision(fds, iou_threshold);
}

}  // namespace cpshield::eval
