#pragma once

#include "cpshield/sim.hpp"

#include <vector>

namespace cpshield::baseline {

struct BaselineConfig {
  int subset_size = 3;
  int max_attempts = 10;
  float consensus_iou = 0.3f;  // accept a subset whose score reaches this
};

struct BaselineOutcome {
  std::vector<bool> flagged;           // per collaborator
  std::vector<sim::Proposal> proposals;
  int attempts_used = 0;
  bool fallback = false;               // exhausted attempts, ego-only output
};

/// Hypothesize-and-verify: repeatedly sample a collaborator subset, fuse and
/// decode it, and score consensus as the mean best-match IoU of its
/// detections against the ego-only detections. The first subset at or above
/// `consensus_iou` is accepted and its complement flagged; running out of
/// attempts falls back to ego-only perception with everything flagged. Each
/// verification costs one fuse+decode, which the instrumentation counters in
/// sim expose.
BaselineOutcome consensus_baseline(const sim::FeatureMap& ego,
                                   const std::vector<sim::FeatureMap>& collaborators,
                                   const sim::DetectorModel& detector, const BaselineConfig& config,
                                   std::uint64_t seed);

}  // namespace cpshield::baseline
