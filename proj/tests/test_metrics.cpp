#include "cpshield/baseline.hpp"
#include "cpshield/evalrun.hpp"
#include "cpshield/config.hpp"
#include "cpshield/metrics.hpp"
#include "cpshield/report.hpp"
#include "cpshield/svg.hpp"

#include "doctest.h"
#include "support/ap_oracle.hpp"
#include "support/pipeline_fixtures.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <thread>

using namespace cpshield;
using cpshield::testing::make_frame;
using cpshield::testing::tiny_pipeline;

TEST_CASE("confusion counts and derived metrics") {
  SUBCASE("hand-checked counts") {
    // TP=9, FP=1, TN=10, FN=0.
    std::vector<int> labels, preds;
    for (int i = 0; i < 9; ++i) { labels.push_back(1); preds.push_back(1); }
    labels.push_back(0); preds.push_back(1);
    for (int i = 0; i < 10; ++i) { labels.push_back(0); preds.push_back(0); }
    auto c = eval::confusion(preds, labels);
    CHECK(c.tp == 9);
    CHECK(c.fp == 1);
    CHECK(c.tn == 10);
    CHECK(c.fn == 0);
    CHECK(c.total() == 20);
    auto m = eval::derive(c);
    CHECK(*m.precision == doctest::Approx(0.9));
    CHECK(*m.tpr == doctest::Approx(1.0));
    CHECK(*m.fpr == doctest::Approx(1.0 / 11.0));
  }

  SUBCASE("f1 from precision 1.0 and recall 0.5") {
    auto m = eval::derive({1, 0, 0, 1});  // tp=1, fp=0, tn=0, fn=1
    CHECK(*m.precision == doctest::Approx(1.0));
    CHECK(*m.tpr == doctest::Approx(0.5));
    CHECK(*m.f1 == doctest::Approx(2.0 / 3.0));
  }

  SUBCASE("degenerate denominators are absent, not zero") {
    auto m = eval::derive(eval::confusion({0, 0}, {0, 0}));  // no positives at all
    CHECK_FALSE(m.tpr.has_value());
    CHECK_FALSE(m.precision.has_value());
    CHECK(m.fpr.has_value());
    CHECK(*m.accuracy == doctest::Approx(1.0));
  }

  CHECK_THROWS_AS(eval::confusion({1}, {1, 0}), std::invalid_argument);
}

TEST_CASE("average precision examples") {
  // IoU between these two unit boxes is exactly 0.75/1.25 = 0.6.
  sim::Box gt{0.5f, 0.5f, 1.0f, 1.0f};
  sim::Box det{0.75f, 0.5f, 1.0f, 1.0f};
  CHECK(sim::iou(det, gt) == doctest::Approx(0.6));
  CHECK(eval::average_precision({{det, 0.9f}}, {gt}, 0.5) == doctest::Approx(1.0));
  CHECK(eval::average_precision({{det, 0.9f}}, {gt}, 0.7) == doctest::Approx(0.0));

  CHECK(eval::average_precision({}, {gt}, 0.5) == 0.0);
  CHECK(eval::average_precision({{det, 0.9f}}, {}, 0.5) == 0.0);
}

TEST_CASE("average precision equals the exhaustive PR-curve oracle") {
  Rng rng(2024);
  for (int instance = 0; instance < 100; ++instance) {
    const std::size_t n_gt = 1 + rng.uniform_index(6);
    const std::size_t n_det = rng.uniform_index(11);
    std::vector<sim::Box> gt;
    for (std::size_t g = 0; g < n_gt; ++g) {
      gt.push_back({rng.uniform_f(2.0f, 18.0f), rng.uniform_f(2.0f, 18.0f),
                    rng.uniform_f(1.0f, 4.0f), rng.uniform_f(1.0f, 4.0f)});
    }
    std::vector<eval::Detection> dets;
    std::vector<cpshield::testing::RefDetection> ref_dets;
    for (std::size_t d = 0; d < n_det; ++d) {
      sim::Box b;
      if (rng.uniform() < 0.6 && !gt.empty()) {  // jittered copy of some gt box
        const auto& src = gt[rng.uniform_index(gt.size())];
        b = {src.cx + rng.uniform_f(-1.0f, 1.0f), src.cy + rng.uniform_f(-1.0f, 1.0f),
             src.w * rng.uniform_f(0.8f, 1.2f), src.h * rng.uniform_f(0.8f, 1.2f)};
      } else {
        b = {rng.uniform_f(2.0f, 18.0f), rng.uniform_f(2.0f, 18.0f), rng.uniform_f(1.0f, 4.0f),
             rng.uniform_f(1.0f, 4.0f)};
      }
      const float score = rng.uniform_f(0.0f, 1.0f);
      dets.push_back({b, score});
      ref_dets.push_back({b, score});
    }
    for (double thr : {0.5, 0.7}) {
      const double engine = eval::average_precision(dets, gt, thr);
      const double oracle = cpshield::testing::ref_average_precision(ref_dets, gt, thr);
      CHECK(std::fabs(engine - oracle) <= 1e-9);
    }
  }
}

TEST_CASE("pooled average precision") {
  sim::Box gt{5.0f, 5.0f, 2.0f, 2.0f};
  std::vector<eval::Detection> dets{{{5.1f, 5.0f, 2.0f, 2.0f}, 0.9f},
                                    {{12.0f, 12.0f, 2.0f, 2.0f}, 0.8f}};

  // A single frame pools to exactly the plain AP.
  const double single = eval::average_precision(dets, {gt}, 0.5);
  const double pooled = eval::pooled_average_precision({{dets, {gt}}}, 0.5);
  CHECK(pooled == doctest::Approx(single).epsilon(1e-12));

  // Detections never match ground truth from another frame.
  std::vector<eval::FrameDetections> frames{
      {{{{5.1f, 5.0f, 2.0f, 2.0f}, 0.9f}}, {}},    // frame without gt: pure FP
      {{}, {gt}},                                   // frame with gt, no detections
  };
  CHECK(eval::pooled_average_precision(frames, 0.5) == 0.0);
}

TEST_CASE("fps benchmark on constructed workloads") {
  // ~2 ms sleep per frame -> ~500 FPS nominal; sleep overshoot keeps the
  // measured value a bit under, comfortably within 10%.
  const double slept = eval::fps_benchmark(
      [](int) { std::this_thread::sleep_for(std::chrono::microseconds(2000)); }, 30, 5);
  CHECK(slept == doctest::Approx(500.0).epsilon(0.10));

  // Doubling the per-frame work halves the rate within 20%.
  volatile double sink = 0;
  auto busy = [&sink](int iters) {
    double acc = 0;
    for (int i = 0; i < iters; ++i) acc += std::sqrt(static_cast<double>(i % 97) + 1.0);
    sink = acc;
  };
  const double single = eval::fps_benchmark([&](int) { busy(40000); }, 30, 5);
  const double doubled = eval::fps_benchmark([&](int) { busy(80000); }, 30, 5);
  CHECK(single / doubled == doctest::Approx(2.0).epsilon(0.20));

  CHECK_THROWS_AS(eval::fps_benchmark([](int) {}, 10, 5), std::invalid_argument);
  CHECK_THROWS_AS(eval::fps_benchmark([](int) {}, 30, 2), std::invalid_argument);
}

TEST_CASE("consensus baseline behavior and call accounting") {
  auto pipe = tiny_pipeline();
  auto detector = sim::DetectorModel::init(pipe, 808);
  auto frame = make_frame(detector, 5, 23);  // 4 collaborators

  SUBCASE("vacuous threshold accepts the first full subset; nothing flagged") {
    baseline::BaselineConfig bc;
    bc.subset_size = static_cast<int>(frame.collaborator_features.size());
    bc.consensus_iou = 0.0f;
    auto out = baseline::consensus_baseline(frame.ego_feature, frame.collaborator_features,
                                            detector, bc, 3);
    CHECK(out.attempts_used == 1);
    CHECK_FALSE(out.fallback);
    for (bool f : out.flagged) CHECK_FALSE(f);
  }

  SUBCASE("zero attempts falls back to ego-only with everything flagged") {
    baseline::BaselineConfig bc;
    bc.max_attempts = 0;
    auto out = baseline::consensus_baseline(frame.ego_feature, frame.collaborator_features,
                                            detector, bc, 3);
    CHECK(out.fallback);
    for (bool f : out.flagged) CHECK(f);
    auto params = sim::detector_constants(detector);
    auto ego_only = sim::extract_proposals(
        sim::decode(params, sim::fuse_mean(frame.ego_feature.data, {}), pipe), pipe);
    REQUIRE(out.proposals.size() == ego_only.size());
    CHECK(out.proposals[0].p_object == doctest::Approx(ego_only[0].p_object));
  }

  SUBCASE("each verification attempt costs exactly one fuse+decode") {
    baseline::BaselineConfig bc;
    bc.subset_size = 2;
    bc.consensus_iou = 1.1f;  // unreachable: every attempt is spent
    bc.max_attempts = 6;
    sim::counters().reset();
    auto out = baseline::consensus_baseline(frame.ego_feature, frame.collaborator_features,
                                            detector, bc, 9);
    CHECK(out.attempts_used == 6);
    // One ego-only reference decode plus one per attempt.
    CHECK(sim::counters().fuse.load() == 7);
    CHECK(sim::counters().decode.load() == 7);
  }
}

TEST_CASE("report round trip and absent handling") {
  eval::MetricsReport r;
  r.kind = "eval";
  r.seed = 99;
  r.config_digest = "deadbeef01234567";
  r.overall.accuracy = 0.9375;
  r.overall.fpr = 0.03125;
  r.overall.tpr = 1.0 / 3.0;  // exercises full double round trip
  r.sections.emplace_back("pgd", eval::MetricValues{});
  r.sections.back().second.accuracy = 0.921875;
  r.sections.back().second.f1 = 0.5;
  r.notes.emplace_back("budget", "0.5");

  const std::string text = eval::to_text(r);
  auto back = eval::from_text(text);
  CHECK(back.kind == r.kind);
  CHECK(back.seed == r.seed);
  CHECK(back.config_digest == r.config_digest);
  CHECK(*back.overall.accuracy == *r.overall.accuracy);
  CHECK(*back.overall.tpr == *r.overall.tpr);
  CHECK_FALSE(back.overall.precision.has_value());
  REQUIRE(back.sections.size() == 1);
  CHECK(back.sections[0].first == "pgd");
  CHECK(*back.sections[0].second.f1 == 0.5);
  REQUIRE(back.notes.size() == 1);
  CHECK(back.notes[0].second == "0.5");

  // Lossless: serialize(parse(text)) == text.
  CHECK(eval::to_text(back) == text);

  CHECK_THROWS_AS(eval::from_text("not a report"), std::runtime_error);

  const std::string csv = eval::to_csv(r);
  CHECK(csv.find("overall,accuracy,0.9375") != std::string::npos);
  CHECK(csv.find("overall,precision,\n") != std::string::npos);
  CHECK(csv.find("pgd,f1,0.5") != std::string::npos);
}

TEST_CASE("config parsing and digest") {
  const std::string path = "tmp_test_config.cfg";
  {
    std::ofstream os(path);
    os << "# comment\n";
    os << "guard.epochs = 50\n";
    os << "attack.budgets = 0.1, 0.25, 0.5\n";
    os << "flag = true\n";
  }
  auto kv = cfg::parse_file(path);
  CHECK(kv.get_int("guard.epochs", 0) == 50);
  CHECK(kv.get_bool("flag", false));
  CHECK(kv.get_floats("attack.budgets", {}) == std::vector<float>{0.1f, 0.25f, 0.5f});
  CHECK(kv.get_int("missing", 7) == 7);
  CHECK_THROWS_AS(kv.require("missing"), std::runtime_error);

  auto overrides = cfg::parse_overrides({"guard.epochs=10"});
  kv.merge(overrides);
  CHECK(kv.get_int("guard.epochs", 0) == 10);

  // Digest is canonical: insertion order does not matter.
  cfg::KeyValues a, b;
  a.set("x", "1");
  a.set("y", "2");
  b.set("y", "2");
  b.set("x", "1");
  CHECK(cfg::fnv1a_hex(a.canonical()) == cfg::fnv1a_hex(b.canonical()));
  CHECK(cfg::fnv1a_hex(a.canonical()).size() == 16);
  std::remove(path.c_str());
}

TEST_CASE("svg writers emit well-formed documents") {
  auto line = svg::line_chart("metric vs budget", "budget", "accuracy",
                              {{"guard", {{0.1, 0.8}, {0.5, 0.95}, {1.0, 0.99}}}});
  CHECK(line.find("<svg") == 0);
  CHECK(line.rfind("</svg>\n") != std::string::npos);
  CHECK(line.find("polyline") != std::string::npos);

  auto bars = svg::bar_chart("fps", {"baseline", "guard"}, {20.8, 70.4});
  CHECK(bars.find("<rect") != std::string::npos);

  auto hist = svg::histogram("distances", {0.1, 0.2, 0.2, 0.9}, 4);
  CHECK(hist.find("<svg") == 0);
}
