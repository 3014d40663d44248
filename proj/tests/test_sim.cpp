#include "cpshield/sim.hpp"

#include "doctest.h"
#include "support/gradcheck.hpp"

#include <cmath>
#include <cstdio>

using namespace cpshield;
using sim::Box;

namespace {

sim::PipelineConfig small_pipeline() {
  sim::PipelineConfig c;
  c.grid = 16;
  c.channels = 4;
  c.feat_hw = 8;
  c.world = 32.0f;
  c.fov_radius = 14.0f;
  c.noise_sigma = 0.0f;
  c.anchor = 5.0f;
  c.pose_range = 4.0f;
  return c;
}

bool overlap_1d(float c1, float s1, float c2, float s2) {
  return std::fabs(c1 - c2) < (s1 + s2) / 2;
}

}  // namespace

TEST_CASE("scene generation") {
  sim::SceneConfig cfg;

  SUBCASE("empty range gives an empty scene") {
    cfg.min_objects = 0;
    cfg.max_objects = 0;
    CHECK(sim::generate_scene(cfg, 7).objects.empty());
  }

  SUBCASE("same seed twice gives identical scenes") {
    auto a = sim::generate_scene(cfg, 42);
    auto b = sim::generate_scene(cfg, 42);
    REQUIRE(a.objects.size() == b.objects.size());
    for (std::size_t i = 0; i < a.objects.size(); ++i) {
      CHECK(a.objects[i].cx == b.objects[i].cx);
      CHECK(a.objects[i].cy == b.objects[i].cy);
      CHECK(a.objects[i].w == b.objects[i].w);
      CHECK(a.objects[i].h == b.objects[i].h);
    }
  }

  SUBCASE("boxes stay in bounds and never overlap") {
    // Pairwise interval test as the independent overlap oracle.
    cfg.min_objects = 5;
    cfg.max_objects = 5;
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      auto scene = sim::generate_scene(cfg, seed);
      REQUIRE(scene.objects.size() == 5);
      for (std::size_t i = 0; i < 5; ++i) {
        const Box& b = scene.objects[i];
        CHECK(b.cx - b.w / 2 >= 0.0f);
        CHECK(b.cx + b.w / 2 <= cfg.world_w);
        CHECK(b.cy - b.h / 2 >= 0.0f);
        CHECK(b.cy + b.h / 2 <= cfg.world_h);
        CHECK(b.w >= cfg.min_size);
        CHECK(b.w <= cfg.max_size);
        for (std::size_t j = i + 1; j < 5; ++j) {
          const Box& o = scene.objects[j];
          CHECK_FALSE((overlap_1d(b.cx, b.w, o.cx, o.w) && overlap_1d(b.cy, b.h, o.cy, o.h)));
        }
      }
    }
  }

  SUBCASE("overcrowded world raises") {
    cfg.world_w = 10;
    cfg.world_h = 10;
    cfg.min_objects = 12;
    cfg.max_objects = 12;
    cfg.min_size = 6;
    cfg.max_size = 8;
    CHECK_THROWS_AS(sim::generate_scene(cfg, 1), std::runtime_error);
  }
}

TEST_CASE("observe masks by field of view") {
  auto cfg = small_pipeline();
  sim::Scene scene;
  scene.world_w = cfg.world;
  scene.world_h = cfg.world;

  SUBCASE("object outside the radius leaves zero cells") {
    cfg.fov_radius = 4.0f;
    scene.objects.push_back({28.0f, 28.0f, 4.0f, 4.0f});
    auto view = sim::observe(scene, cfg, 0, 16.0f, 16.0f, 5);
    for (float v : view.grid.values()) CHECK(v == 0.0f);
  }

  SUBCASE("noise-free single-cell object marks exactly its cells") {
    // Cell size is 2; this box covers exactly cell (8, 8).
    scene.objects.push_back({17.0f, 17.0f, 1.9f, 1.9f});
    auto view = sim::observe(scene, cfg, 0, 16.0f, 16.0f, 5);
    const auto& g = view.grid.values();
    int ones = 0;
    for (int r = 0; r < cfg.grid; ++r)
      for (int c = 0; c < cfg.grid; ++c)
        if (g[static_cast<std::size_t>(r) * cfg.grid + c] == 1.0f) {
          ++ones;
          CHECK(r == 8);
          CHECK(c == 8);
        }
    CHECK(ones == 1);
  }

  SUBCASE("two poses differ exactly where occupancy or membership differs") {
    // Independent oracle: recompute each agent's expected grid from the cell
    // regions and the field-of-view disc.
    scene.objects.push_back({10.0f, 12.0f, 5.0f, 4.0f});
    scene.objects.push_back({22.0f, 20.0f, 4.0f, 6.0f});
    const float poses[2][2] = {{16.0f, 16.0f}, {20.0f, 12.0f}};
    for (int a = 0; a < 2; ++a) {
      auto view = sim::observe(scene, cfg, a, poses[a][0], poses[a][1], 99);
      const auto& g = view.grid.values();
      const float cell = cfg.cell();
      for (int r = 0; r < cfg.grid; ++r) {
        for (int c = 0; c < cfg.grid; ++c) {
          const float x0 = poses[a][0] - cfg.world / 2 + c * cell;
          const float y0 = poses[a][1] - cfg.world / 2 + r * cell;
          const float mx = x0 + cell / 2 - poses[a][0];
          const float my = y0 + cell / 2 - poses[a][1];
          bool in_fov = mx * mx + my * my <= cfg.fov_radius * cfg.fov_radius;
          bool occ = false;
          for (const Box& b : scene.objects) {
            occ = occ || (b.cx - b.w / 2 < x0 + cell && b.cx + b.w / 2 > x0 &&
                          b.cy - b.h / 2 < y0 + cell && b.cy + b.h / 2 > y0);
          }
          const float expected = (in_fov && occ) ? 1.0f : 0.0f;
          CHECK(g[static_cast<std::size_t>(r) * cfg.grid + c] == expected);
        }
      }
    }
  }
}

TEST_CASE("encode contract") {
  auto cfg = small_pipeline();
  auto model = sim::DetectorModel::init(cfg, 3);
  sim::Scene scene;
  scene.world_w = scene.world_h = cfg.world;
  scene.objects.push_back({14.0f, 14.0f, 5.0f, 5.0f});
  auto view = sim::observe(scene, cfg, 0, 16.0f, 16.0f, 1);

  auto feat = sim::encode(model, view);
  CHECK(feat.data.shape() == ad::Shape{cfg.channels, cfg.feat_hw, cfg.feat_hw});

  // Encoding is deterministic for fixed parameters.
  auto feat2 = sim::encode(model, view);
  CHECK(feat.data.values() == feat2.data.values());

  // Zero input with a zero-bias model maps to exactly zero.
  auto zero_model = model;
  std::fill(zero_model.enc_b1.begin(), zero_model.enc_b1.end(), 0.0f);
  std::fill(zero_model.enc_b2.begin(), zero_model.enc_b2.end(), 0.0f);
  sim::AgentView blank;
  blank.grid = ad::Tensor::zeros({1, cfg.grid, cfg.grid});
  auto zero_out = sim::encode(zero_model, blank);
  for (float v : zero_out.data.values()) CHECK(v == 0.0f);

  sim::AgentView bad;
  bad.grid = ad::Tensor::zeros({1, 4, 4});
  CHECK_THROWS_AS(sim::encode(model, bad), std::invalid_argument);
}

TEST_CASE("transmit shift semantics") {
  auto cfg = small_pipeline();
  const float fc = cfg.feat_cell();  // 4 world units
  sim::FeatureMap f;
  f.owner = 1;
  std::vector<float> data(static_cast<std::size_t>(cfg.channels) * cfg.feat_hw * cfg.feat_hw, 0.0f);
  data[2 * 8 + 3] = 1.0f;  // channel 0, row 2, col 3
  f.data = ad::Tensor({cfg.channels, cfg.feat_hw, cfg.feat_hw}, data);

  SUBCASE("identical poses are the identity") {
    auto out = sim::transmit(f, 16.0f, 16.0f, 16.0f, 16.0f, cfg);
    CHECK(out.data.values() == f.data.values());
  }

  SUBCASE("single cell moves by the pose offset") {
    // Sender one feature-cell right and two down relative to receiver.
    bool oob = true;
    auto out = sim::transmit(f, 16.0f + fc, 16.0f + 2 * fc, 16.0f, 16.0f, cfg, &oob);
    CHECK_FALSE(oob);
    const auto& v = out.data.values();
    CHECK(v[(2 + 2) * 8 + (3 + 1)] == 1.0f);
    float total = 0;
    for (float x : v) total += x;
    CHECK(total == 1.0f);
  }

  SUBCASE("round trip loses only boundary cells") {
    auto right = sim::transmit(f, 16.0f + fc, 16.0f, 16.0f, 16.0f, cfg);
    auto back = sim::transmit(right, 16.0f - fc, 16.0f, 16.0f, 16.0f, cfg);
    // Our nonzero cell sits away from the boundary, so it must survive.
    CHECK(back.data.values() == f.data.values());
  }

  SUBCASE("offset beyond the map extent flags and zeroes") {
    bool oob = false;
    auto out = sim::transmit(f, 16.0f + 9 * fc, 16.0f, 16.0f, 16.0f, cfg, &oob);
    CHECK(oob);
    for (float v : out.data.values()) CHECK(v == 0.0f);
  }

  SUBCASE("transmit is linear in the feature") {
    std::vector<float> d2(data.size(), 0.0f);
    d2[5 * 8 + 1] = 2.5f;
    sim::FeatureMap g;
    g.data = ad::Tensor({cfg.channels, cfg.feat_hw, cfg.feat_hw}, d2);
    auto sum_first = sim::transmit(
        {0, ad::add(f.data, g.data)}, 16.0f + fc, 16.0f, 16.0f, 16.0f, cfg);
    auto first = sim::transmit(f, 16.0f + fc, 16.0f, 16.0f, 16.0f, cfg);
    auto second = sim::transmit(g, 16.0f + fc, 16.0f, 16.0f, 16.0f, cfg);
    auto shifted_sum = ad::add(first.data, second.data);
    CHECK(sum_first.data.values() == shifted_sum.values());
  }
}

TEST_CASE("fuse_mean semantics") {
  auto a = ad::Tensor({2}, {0.0f, 4.0f});
  auto b = ad::Tensor({2}, {2.0f, 0.0f});

  CHECK(sim::fuse_mean(a, {}).values() == a.values());
  CHECK(sim::fuse_mean(a, {b}).values() == std::vector<float>{1.0f, 2.0f});
  CHECK(sim::fuse_mean(a, {a, a, a}).values() == a.values());

  // Permutation invariance in `others`.
  auto c = ad::Tensor({2}, {-1.0f, 7.0f});
  CHECK(sim::fuse_mean(a, {b, c}).values() == sim::fuse_mean(a, {c, b}).values());

  CHECK_THROWS_AS(sim::fuse_mean(a, {ad::Tensor({3}, {1.0f, 2.0f, 3.0f})}), std::invalid_argument);
}

TEST_CASE("decode produces a dense simplex head") {
  auto cfg = small_pipeline();
  auto model = sim::DetectorModel::init(cfg, 11);
  auto params = sim::detector_constants(model);
  sim::Scene scene;
  scene.world_w = scene.world_h = cfg.world;
  auto view = sim::observe(scene, cfg, 0, 16.0f, 16.0f, 2);
  auto fused = sim::fuse_mean(sim::encode(params, view.grid, cfg), {});
  auto out = sim::decode(params, fused, cfg);
  auto proposals = sim::extract_proposals(out, cfg);

  CHECK(proposals.size() == static_cast<std::size_t>(cfg.feat_hw * cfg.feat_hw));
  for (const auto& p : proposals) {
    CHECK(p.p_object + p.p_background == doctest::Approx(1.0f).epsilon(1e-5));
    CHECK(p.confidence == doctest::Approx(std::max(p.p_object, p.p_background)));
  }

  // Duplicating the ego feature never changes the decode output (up to f32
  // rounding of the 1/3 scale).
  auto dup = sim::fuse_mean(fused, {fused, fused});
  auto out_dup = sim::decode(params, dup, cfg);
  for (std::size_t i = 0; i < out.cls_logits.values().size(); ++i) {
    CHECK(out_dup.cls_logits.values()[i] ==
          doctest::Approx(out.cls_logits.values()[i]).epsilon(1e-5));
  }
  for (std::size_t i = 0; i < out.box_raw.values().size(); ++i) {
    CHECK(out_dup.box_raw.values()[i] == doctest::Approx(out.box_raw.values()[i]).epsilon(1e-5));
  }
}

TEST_CASE("gradient flows from detection loss to a collaborator feature") {
  // The channel the attacker exploits: d(loss)/d(collaborator map) is
  // nonzero and matches finite differences.
  auto cfg = small_pipeline();
  auto model = sim::DetectorModel::init(cfg, 21);
  sim::Scene scene = sim::generate_scene({cfg.world, cfg.world, 2, 2, 4.0f, 6.0f}, 17);
  Rng rng(3);
  auto poses = sim::sample_poses(2, cfg, rng);
  auto ego_view = sim::observe(scene, cfg, 0, poses[0].first, poses[0].second, 31);
  auto col_view = sim::observe(scene, cfg, 1, poses[1].first, poses[1].second, 32);
  auto params = sim::detector_constants(model);
  auto ego_feat = sim::encode(params, ego_view.grid, cfg).detach();
  auto col_feat = sim::encode(params, col_view.grid, cfg).detach();
  auto targets = sim::cell_targets(sim::visible_boxes(scene, poses, cfg), cfg);
  sim::DetectorTrainConfig tc;

  auto loss_fn = [&](ad::Tape&, const std::vector<ad::Tensor>& in) {
    auto fused = sim::fuse_mean(ego_feat, {in[0]});
    auto out = sim::decode(params, fused, cfg);
    return sim::detection_loss(out, targets, tc);
  };
  ad::Tape tape;
  auto leaf = tape.leaf(col_feat);
  tape.backward(loss_fn(tape, {leaf}));
  const auto& grad = tape.grad(leaf);
  double norm = 0;
  for (float g : grad) norm += std::fabs(g);
  CHECK(norm > 0.0);

  // Spot-check a handful of cells against central differences.
  Rng pick(7);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t e = static_cast<std::size_t>(pick.uniform_index(static_cast<std::uint64_t>(col_feat.size())));
    std::vector<float> vp = col_feat.values(), vm = col_feat.values();
    vp[e] += 1e-2f;
    vm[e] -= 1e-2f;
    ad::Tape tp;
    const double fplus = loss_fn(tp, {tp.leaf(col_feat.shape(), vp)}).item();
    ad::Tape tm;
    const double fminus = loss_fn(tm, {tm.leaf(col_feat.shape(), vm)}).item();
    const double fd = (fplus - fminus) / 2e-2;
    CHECK(std::fabs(grad[e] - fd) <= 1e-3 * std::max({1.0, std::fabs(fd), std::fabs(static_cast<double>(grad[e]))}));
  }
}

TEST_CASE("detector training determinism and zero-epoch identity") {
  auto cfg = small_pipeline();
  std::vector<sim::Scene> scenes;
  for (std::uint64_t s = 0; s < 3; ++s)
    scenes.push_back(sim::generate_scene({cfg.world, cfg.world, 1, 2, 4.0f, 6.0f}, 100 + s));

  sim::DetectorTrainConfig tc;
  tc.epochs = 0;
  auto unmoved = sim::train_detector(scenes, cfg, tc, 5);
  auto reference = sim::DetectorModel::init(cfg, mix_seed(5, 0xd1));
  CHECK(unmoved.enc_w1 == reference.enc_w1);
  CHECK(unmoved.cls_b == reference.cls_b);

  tc.epochs = 2;
  auto m1 = sim::train_detector(scenes, cfg, tc, 5);
  auto m2 = sim::train_detector(scenes, cfg, tc, 5);
  CHECK(m1.enc_w1 == m2.enc_w1);
  CHECK(m1.dec_w == m2.dec_w);
  CHECK(m1.box_b == m2.box_b);
}

TEST_CASE("detector checkpoint round trip") {
  auto cfg = small_pipeline();
  auto model = sim::DetectorModel::init(cfg, 77);
  const std::string path = "detector_roundtrip.ckpt";
  sim::save_detector(path, model);
  auto loaded = sim::load_detector(path);
  CHECK(loaded.config.grid == cfg.grid);
  CHECK(loaded.config.channels == cfg.channels);
  CHECK(loaded.enc_w1 == model.enc_w1);
  CHECK(loaded.enc_w2 == model.enc_w2);
  CHECK(loaded.dec_w == model.dec_w);
  CHECK(loaded.cls_w == model.cls_w);
  CHECK(loaded.box_w == model.box_w);
  std::remove(path.c_str());

  CHECK_THROWS_AS(sim::load_detector("does_not_exist.ckpt"), std::runtime_error);
}
