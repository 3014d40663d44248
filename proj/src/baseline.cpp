#include "cpshield/baseline.hpp"

#include "cpshield/metrics.hpp"
#include "cpshield/rng.hpp"

#include <algorithm>
#include <stdexcept>

namespace cpshield::baseline {

namespace {

double consensus_score(const std::vector<eval::Detection>& candidate,
                       const std::vector<eval::Detection>& reference) {
  if (candidate.empty() && reference.empty()) return 1.0;
  if (candidate.empty() || reference.empty()) return 0.0;
  double total = 0;
  for (const auto& det : candidate) {
    double best = 0;
    for (const auto& ref : reference) best = std::max(best, static_cast<double>(sim::iou(det.box, ref.box)));
    total += best;
  }
  return total / static_cast<double>(candidate.size());
}

}  // namespace

BaselineOutcome consensus_baseline(const sim::FeatureMap& ego,
                                   const std::vector<sim::FeatureMap>& collaborators,
                                   const sim::DetectorModel& detector, const BaselineConfig& config,
                                   std::uint64_t seed) {
  if (config.subset_size < 1) throw std::invalid_argument("baseline: subset size must be positive");
  const auto& pipe = detector.config;
  auto params = sim::detector_constants(detector);
  Rng rng(seed);

  // Ego-only reference decode (one fuse+decode).
  auto ego_out = sim::decode(params, sim::fuse_mean(ego.data, {}), pipe);
  auto ego_dets = eval::to_detections(sim::extract_proposals(ego_out, pipe), pipe);

  BaselineOutcome outcome;
  outcome.flagged.assign(collaborators.size(), true);

  const std::size_t subset =
      std::min<std::size_t>(static_cast<std::size_t>(config.subset_size), collaborators.size());
  std::vector<std::size_t> indices(collaborators.size());
  for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;

  for (int attempt = 0; attempt < config.max_attempts && !collaborators.empty(); ++attempt) {
    ++outcome.attempts_used;
    rng.shuffle(indices);
    std::vector<ad::Tensor> hypothesis;
    for (std::size_t i = 0; i < subset; ++i) hypothesis.push_back(collaborators[indices[i]].data);
    auto out = sim::decode(params, sim::fuse_mean(ego.data, hypothesis), pipe);
    auto proposals = sim::extract_proposals(out, pipe);
    const double score = consensus_score(eval::to_detections(proposals, pipe), ego_dets);
    if (score >= config.consensus_iou) {
      for (std::size_t i = 0; i < subset; ++i) outcome.flagged[indices[i]] = false;
      outcome.proposals = std::move(proposals);
      return outcome;
    }
  }

  // Exhausted: ego-only perception, everything stays flagged.
  outcome.fallback = true;
  outcome.proposals = sim::extract_proposals(ego_out, pipe);
  return outcome;
}

}  // namespace cpshield::baseline
