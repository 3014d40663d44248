#pragma once

// Small shared pipeline fixtures for attack/guard/metrics tests.

#include "cpshield/sim.hpp"

#include <utility>
#include <vector>

namespace cpshield::testing {

inline sim::PipelineConfig tiny_pipeline() {
  sim::PipelineConfig c;
  c.grid = 16;
  c.channels = 4;
  c.feat_hw = 8;
  c.world = 32.0f;
  c.fov_radius = 14.0f;
  c.noise_sigma = 0.02f;
  c.anchor = 5.0f;
  c.pose_range = 4.0f;
  return c;
}

struct Frame {
  sim::Scene scene;
  std::vector<std::pair<float, float>> poses;
  sim::FeatureMap ego_feature;                  // ego frame
  std::vector<sim::FeatureMap> collaborator_features;  // post-transmit, ego frame
};

inline Frame make_frame(const sim::DetectorModel& model, int agent_count, std::uint64_t seed) {
  const auto& cfg = model.config;
  Frame f;
  f.scene = sim::generate_scene({cfg.world, cfg.world, 2, 4, 4.0f, 7.0f}, mix_seed(seed, 1));
  Rng rng(mix_seed(seed, 2));
  f.poses = sim::sample_poses(agent_count, cfg, rng);
  for (int a = 0; a < agent_count; ++a) {
    auto view = sim::observe(f.scene, cfg, a, f.poses[static_cast<std::size_t>(a)].first,
                             f.poses[static_cast<std::size_t>(a)].second, mix_seed(seed, 10 + a));
    auto feat = sim::encode(model, view);
    if (a == 0) {
      f.ego_feature = feat;
    } else {
      f.collaborator_features.push_back(
          sim::transmit(feat, f.poses[static_cast<std::size_t>(a)].first,
                        f.poses[static_cast<std::size_t>(a)].second, f.poses[0].first,
                        f.poses[0].second, cfg));
    }
  }
  return f;
}

}  // namespace cpshield::testing
