// cpshield command line: simulate collaborative perception, mount
// feature-space attacks, build labeled datasets, train/evaluate the
// malicious-agent guard, and benchmark the defense paradigms.

#include "cpshield/attack.hpp"
#include "cpshield/baseline.hpp"
#include "cpshield/config.hpp"
#include "cpshield/dataset.hpp"
#include "cpshield/evalrun.hpp"
#include "cpshield/guard.hpp"
#include "cpshield/metrics.hpp"
#include "cpshield/report.hpp"
#include "cpshield/sim.hpp"
#include "cpshield/svg.hpp"

#include "CLI11.hpp"

#include <cstdlib>
#include <filesystem>
#include <iostream>

namespace {

using namespace cpshield;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  bool seed_given = false;
  bool emit_svg = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "key = value configuration file");
  cmd->add_option("--set", args.overrides, "override, key=value (repeatable)");
  cmd->add_option("--out-dir", args.out_dir, "directory for reports and plots");
  cmd->add_option("--seed", args.seed, "run seed (falls back to CPSHIELD_SEED, then 42)")
      ->each([&args](const std::string&) { args.seed_given = true; });
  cmd->add_flag("--svg", args.emit_svg, "also write SVG plots");
}

struct RunContext {
  cfg::KeyValues kv;
  std::uint64_t seed = 42;
  std::string digest;
  std::string out_dir;
  bool emit_svg = false;
};

RunContext make_context(const CommonArgs& args) {
  RunContext ctx;
  if (!args.config_path.empty()) ctx.kv = cfg::parse_file(args.config_path);
  ctx.kv.merge(cfg::parse_overrides(args.overrides));
  if (args.seed_given) {
    ctx.seed = args.seed;
  } else if (const char* env = std::getenv("CPSHIELD_SEED")) {
    ctx.seed = std::stoull(env);
  }
  ctx.digest = cfg::fnv1a_hex(ctx.kv.canonical());
  ctx.out_dir = args.out_dir;
  ctx.emit_svg = args.emit_svg;
  std::filesystem::create_directories(ctx.out_dir);
  std::cout << "seed " << ctx.seed << "\nconfig_digest " << ctx.digest << "\n";
  return ctx;
}

void finish_report(eval::MetricsReport& report, const RunContext& ctx, const std::string& name) {
  report.seed = ctx.seed;
  report.config_digest = ctx.digest;
  const std::string base = ctx.out_dir + "/" + name;
  eval::write_report(report, base + ".report.txt");
  std::ofstream csv(base + ".csv", std::ios::binary);
  csv << eval::to_csv(report);
  std::cout << "report " << base << ".report.txt\n";
}

sim::PipelineConfig pipeline_from(const cfg::KeyValues& kv) {
  sim::PipelineConfig c;
  c.grid = kv.get_int("pipeline.grid", c.grid);
  c.channels = kv.get_int("pipeline.channels", c.channels);
  c.feat_hw = kv.get_int("pipeline.feat_hw", c.feat_hw);
  c.world = kv.get_float("pipeline.world", c.world);
  c.fov_radius = kv.get_float("pipeline.fov_radius", c.fov_radius);
  c.noise_sigma = kv.get_float("pipeline.noise_sigma", c.noise_sigma);
  c.anchor = kv.get_float("pipeline.anchor", c.anchor);
  c.score_threshold = kv.get_float("pipeline.score_threshold", c.score_threshold);
  c.pose_range = kv.get_float("pipeline.pose_range", c.pose_range);
  return c;
}

data::GenConfig gen_from(const cfg::KeyValues& kv) {
  data::GenConfig g;
  g.frames = kv.get_int("data.frames", g.frames);
  g.min_collaborators = kv.get_int("data.min_collaborators", g.min_collaborators);
  g.max_collaborators = kv.get_int("data.max_collaborators", g.max_collaborators);
  g.min_attackers = kv.get_int("data.min_attackers", g.min_attackers);
  g.max_attackers = kv.get_int("data.max_attackers", g.max_attackers);
  g.budget_grid = kv.get_floats("data.budgets", g.budget_grid);
  g.fixed_budget = kv.get_float("data.fixed_budget", g.fixed_budget);
  g.steps = kv.get_int("data.steps", g.steps);
  g.step_size = kv.get_float("data.step_size", g.step_size);
  g.tau1 = kv.get_float("data.tau1", g.tau1);
  g.tau2 = kv.get_float("data.tau2", g.tau2);
  g.lambda_bg = kv.get_float("data.lambda", g.lambda_bg);
  g.cw_penalty = kv.get_float("data.cw_penalty", g.cw_penalty);
  g.sign_flip = kv.get_bool("data.sign_flip", g.sign_flip);
  g.min_objects = kv.get_int("data.min_objects", g.min_objects);
  g.max_objects = kv.get_int("data.max_objects", g.max_objects);
  g.min_object_size = kv.get_float("data.min_object_size", g.min_object_size);
  g.max_object_size = kv.get_float("data.max_object_size", g.max_object_size);
  g.noise_sigma_min = kv.get_float("data.noise_sigma_min", g.noise_sigma_min);
  g.noise_sigma_max = kv.get_float("data.noise_sigma_max", g.noise_sigma_max);
  g.shard_size = static_cast<std::size_t>(kv.get_int("data.shard_size", static_cast<int>(g.shard_size)));
  return g;
}

guard::GuardConfig guard_from(const cfg::KeyValues& kv) {
  guard::GuardConfig c;
  c.contrastive_weight = kv.get_float("guard.alpha", c.contrastive_weight);
  c.temperature = kv.get_float("guard.temperature", c.temperature);
  const std::string denom = kv.get_string("guard.denominator", "all");
  if (denom == "all") c.denominator = guard::DenominatorMode::AllPairs;
  else if (denom == "positive_only") c.denominator = guard::DenominatorMode::PositiveOnly;
  else throw std::runtime_error("config: guard.denominator must be all|positive_only");
  const std::string sel = kv.get_string("guard.selector", "positive");
  if (sel == "positive") c.selector = guard::SelectorMode::PositivePairs;
  else if (sel == "negative") c.selector = guard::SelectorMode::NegativePairs;
  else throw std::runtime_error("config: guard.selector must be positive|negative");
  c.threshold = kv.get_float("guard.threshold", c.threshold);
  c.epochs = kv.get_int("guard.epochs", c.epochs);
  c.batch_size = kv.get_int("guard.batch_size", c.batch_size);
  c.learning_rate = kv.get_float("guard.learning_rate", c.learning_rate);
  c.embed_dim = kv.get_int("guard.embed_dim", c.embed_dim);
  c.balance_classes = kv.get_bool("guard.balance_classes", c.balance_classes);
  c.adaptive = kv.get_bool("guard.adaptive", c.adaptive);
  return c;
}

attack::AttackConfig attack_from(const cfg::KeyValues& kv) {
  attack::AttackConfig a;
  a.budget = kv.get_float("attack.budget", a.budget);
  a.steps = kv.get_int("attack.steps", a.steps);
  a.step_size = kv.get_float("attack.step_size", a.step_size);
  a.tau1 = kv.get_float("attack.tau1", a.tau1);
  a.tau2 = kv.get_float("attack.tau2", a.tau2);
  a.lambda_bg = kv.get_float("attack.lambda", a.lambda_bg);
  a.cw_penalty = kv.get_float("attack.cw_penalty", a.cw_penalty);
  a.sign_flip = kv.get_bool("attack.sign_flip", true);
  return a;
}

baseline::BaselineConfig baseline_from(const cfg::KeyValues& kv) {
  baseline::BaselineConfig b;
  b.subset_size = kv.get_int("baseline.subset_size", b.subset_size);
  b.max_attempts = kv.get_int("baseline.max_attempts", b.max_attempts);
  b.consensus_iou = kv.get_float("baseline.consensus_iou", b.consensus_iou);
  return b;
}

eval::MetricValues to_values(const eval::DerivedMetrics& m) {
  eval::MetricValues v;
  v.accuracy = m.accuracy;
  v.tpr = m.tpr;
  v.fpr = m.fpr;
  v.precision = m.precision;
  v.f1 = m.f1;
  return v;
}

std::string fmt_note(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int run_train_detector(const CommonArgs& args, const std::string& out_path) {
  auto ctx = make_context(args);
  auto pipe = pipeline_from(ctx.kv);
  sim::DetectorTrainConfig tc;
  tc.epochs = ctx.kv.get_int("detector.epochs", tc.epochs);
  tc.batch_size = ctx.kv.get_int("detector.batch_size", tc.batch_size);
  tc.learning_rate = ctx.kv.get_float("detector.learning_rate", tc.learning_rate);
  tc.agent_count = ctx.kv.get_int("detector.agents", tc.agent_count);
  tc.positive_weight = ctx.kv.get_float("detector.positive_weight", tc.positive_weight);
  tc.box_loss_weight = ctx.kv.get_float("detector.box_loss_weight", tc.box_loss_weight);
  tc.adaptive = ctx.kv.get_bool("detector.adaptive", tc.adaptive);
  tc.feature_noise = ctx.kv.get_float("detector.feature_noise", tc.feature_noise);
  const int scene_count = ctx.kv.get_int("detector.scenes", 200);
  const int eval_frames = ctx.kv.get_int("detector.eval_frames", 30);

  std::vector<sim::Scene> scenes;
  scenes.reserve(static_cast<std::size_t>(scene_count));
  for (int s = 0; s < scene_count; ++s) {
    scenes.push_back(sim::generate_scene(
        {pipe.world, pipe.world, ctx.kv.get_int("data.min_objects", 3),
         ctx.kv.get_int("data.max_objects", 6), ctx.kv.get_float("data.min_object_size", 4.0f),
         ctx.kv.get_float("data.max_object_size", 7.0f)},
        mix_seed(ctx.seed, 100 + static_cast<std::uint64_t>(s))));
  }
  auto model = sim::train_detector(scenes, pipe, tc, ctx.seed);
  sim::save_detector(out_path, model);
  std::cout << "checkpoint " << out_path << "\n";

  auto frames = eval::make_perception_frames(model, eval_frames, tc.agent_count, mix_seed(ctx.seed, 0xeb));
  eval::MetricsReport report;
  report.kind = "train-detector";
  report.overall.ap50 = eval::clean_ap(model, frames, 0.5);
  report.overall.ap70 = eval::clean_ap(model, frames, 0.7);
  report.notes.emplace_back("scenes", std::to_string(scene_count));
  report.notes.emplace_back("epochs", std::to_string(tc.epochs));
  std::cout << "clean ap50 " << fmt_note(*report.overall.ap50) << " ap70 "
            << fmt_note(*report.overall.ap70) << "\n";
  finish_report(report, ctx, "train-detector");
  return 0;
}

int run_gen_data(const CommonArgs& args, const std::string& detector_path, const std::string& out) {
  auto ctx = make_context(args);
  auto detector = sim::load_detector(detector_path);
  auto gen = gen_from(ctx.kv);
  auto dataset = data::generate_dataset(detector, gen, ctx.seed);
  data::write_shards(dataset, out);
  std::cout << "dataset " << out << " (" << dataset.records.size() << " records)\n";

  const auto& st = dataset.manifest.stats;
  eval::MetricsReport report;
  report.kind = "gen-data";
  report.notes.emplace_back("records", std::to_string(dataset.records.size()));
  report.notes.emplace_back("frames", std::to_string(st.frame_count));
  report.notes.emplace_back("attack_ratio_min", fmt_note(st.attack_ratio_min));
  report.notes.emplace_back("attack_ratio_mean", fmt_note(st.attack_ratio_mean));
  report.notes.emplace_back("attack_ratio_max", fmt_note(st.attack_ratio_max));
  for (const auto& [count, frames] : st.collaborator_hist) {
    report.notes.emplace_back("collaborators_" + std::to_string(count), std::to_string(frames));
  }
  for (std::size_t t = 0; t < st.attack_type_hist.size(); ++t) {
    report.notes.emplace_back(std::string("type_") + attack::attack_name(static_cast<attack::AttackType>(t)),
                              std::to_string(st.attack_type_hist[t]));
  }
  if (ctx.emit_svg) {
    std::vector<std::string> labels;
    std::vector<double> values;
    for (const auto& [count, frames] : st.collaborator_hist) {
      labels.push_back(std::to_string(count));
      values.push_back(static_cast<double>(frames));
    }
    svg::write_file(ctx.out_dir + "/collaborators.svg",
                    svg::bar_chart("frames per collaborator count", labels, values));
    labels.clear();
    values.clear();
    for (std::size_t t = 1; t < st.attack_type_hist.size(); ++t) {
      labels.push_back(attack::attack_name(static_cast<attack::AttackType>(t)));
      values.push_back(static_cast<double>(st.attack_type_hist[t]));
    }
    svg::write_file(ctx.out_dir + "/attack_types.svg",
                    svg::bar_chart("attacked records per type", labels, values));
  }
  finish_report(report, ctx, "gen-data");
  return 0;
}

int run_train_guard(const CommonArgs& args, const std::string& dataset_dir, const std::string& out_path) {
  auto ctx = make_context(args);
  auto dataset = data::read_shards(dataset_dir);
  auto gc = guard_from(ctx.kv);
  auto model = guard::train_guard(dataset, gc, ctx.seed);
  guard::save_guard(out_path, model);
  std::cout << "checkpoint " << out_path << "\n";

  auto val = eval::evaluate_guard(dataset.val(), model, gc.threshold);
  eval::MetricsReport report;
  report.kind = "train-guard";
  report.overall = to_values(val.metrics);
  for (const auto& [name, m] : val.per_attack) report.sections.emplace_back(name, to_values(m));
  report.notes.emplace_back("split", "val");
  if (val.metrics.accuracy) std::cout << "val accuracy " << fmt_note(*val.metrics.accuracy) << "\n";
  finish_report(report, ctx, "train-guard");
  return 0;
}

int run_eval(const CommonArgs& args, const std::string& dataset_dir, const std::string& guard_path) {
  auto ctx = make_context(args);
  auto dataset = data::read_shards(dataset_dir);
  auto model = guard::load_guard(guard_path);
  const float threshold = ctx.kv.get_float("guard.threshold", 0.5f);
  auto test = eval::evaluate_guard(dataset.test(), model, threshold);

  eval::MetricsReport report;
  report.kind = "eval";
  report.overall = to_values(test.metrics);
  for (const auto& [name, m] : test.per_attack) report.sections.emplace_back(name, to_values(m));
  for (const auto& [name, m] : test.per_budget) report.sections.emplace_back(name, to_values(m));
  report.notes.emplace_back("split", "test");
  report.notes.emplace_back("threshold", fmt_note(threshold));
  if (test.metrics.accuracy) std::cout << "test accuracy " << fmt_note(*test.metrics.accuracy) << "\n";

  if (ctx.emit_svg) {
    svg::Series acc{"accuracy", {}};
    for (const auto& [name, m] : test.per_budget) {
      if (!m.accuracy) continue;
      acc.points.emplace_back(std::stod(name.substr(name.find('_') + 1)), *m.accuracy);
    }
    if (!acc.points.empty()) {
      svg::write_file(ctx.out_dir + "/accuracy_vs_budget.svg",
                      svg::line_chart("detection accuracy vs budget", "budget", "accuracy", {acc}));
    }
    auto margins = eval::embedding_margins(dataset.test(), model);
    if (!margins.negative_distances.empty()) {
      svg::write_file(ctx.out_dir + "/negative_pair_distances.svg",
                      svg::histogram("negative-pair cosine distances", margins.negative_distances, 20));
    }
  }
  finish_report(report, ctx, "eval");
  return 0;
}

int run_attack(const CommonArgs& args, const std::string& detector_path) {
  auto ctx = make_context(args);
  auto detector = sim::load_detector(detector_path);
  auto base_cfg = attack_from(ctx.kv);
  const int frames_n = ctx.kv.get_int("attack.frames", 25);
  const int agents = ctx.kv.get_int("attack.agents", 5);
  const int attackers = ctx.kv.get_int("attack.attackers", 1);
  const bool both_signs = ctx.kv.get_bool("attack.report_both_signs", false);
  auto budgets = ctx.kv.get_floats("attack.budgets", {base_cfg.budget});

  auto frames = eval::make_perception_frames(detector, frames_n, agents, mix_seed(ctx.seed, 0xaa));
  eval::MetricsReport report;
  report.kind = "attack";
  report.overall.ap50 = eval::clean_ap(detector, frames, 0.5);
  report.overall.ap70 = eval::clean_ap(detector, frames, 0.7);
  std::cout << "clean ap50 " << fmt_note(*report.overall.ap50) << "\n";

  std::vector<svg::Series> curves;
  for (attack::AttackType type : {attack::AttackType::PGD, attack::AttackType::BIM,
                                  attack::AttackType::CW, attack::AttackType::FGSM,
                                  attack::AttackType::GN}) {
    svg::Series series{attack::attack_name(type), {}};
    for (float budget : budgets) {
      for (int flip = both_signs ? 0 : 1; flip <= 1; ++flip) {
        attack::AttackConfig ac = base_cfg;
        ac.type = type;
        ac.budget = budget;
        ac.step_size = std::min(ac.step_size, budget > 0 ? budget : ac.step_size);
        ac.sign_flip = flip == 1 ? base_cfg.sign_flip : !base_cfg.sign_flip;
        const double ap50 = eval::attacked_ap(detector, frames, ac, attackers, 0.5, ctx.seed);
        const double ap70 = eval::attacked_ap(detector, frames, ac, attackers, 0.7, ctx.seed);
        char name[64];
        std::snprintf(name, sizeof name, "%s_%g%s", attack::attack_name(type),
                      static_cast<double>(budget),
                      both_signs ? (ac.sign_flip ? "_flipped" : "_asprinted") : "");
        eval::MetricValues v;
        v.ap50 = ap50;
        v.ap70 = ap70;
        report.sections.emplace_back(name, v);
        if (flip == 1) series.points.emplace_back(budget, ap50);
        std::cout << name << " ap50 " << fmt_note(ap50) << "\n";
      }
    }
    curves.push_back(std::move(series));
  }
  report.notes.emplace_back("frames", std::to_string(frames_n));
  report.notes.emplace_back("attackers", std::to_string(attackers));
  if (ctx.emit_svg) {
    svg::write_file(ctx.out_dir + "/ap_vs_budget.svg",
                    svg::line_chart("AP@0.5 under attack", "budget", "AP@0.5", curves));
  }
  finish_report(report, ctx, "attack");
  return 0;
}

int run_bench_fps(const CommonArgs& args, const std::string& detector_path,
                  const std::string& guard_path) {
  auto ctx = make_context(args);
  auto detector = sim::load_detector(detector_path);
  auto model = guard::load_guard(guard_path);
  const int frames_n = ctx.kv.get_int("bench.frames", 30);
  const int warmup = ctx.kv.get_int("bench.warmup", 5);
  const int collaborators = ctx.kv.get_int("bench.collaborators", 5);
  const float threshold = ctx.kv.get_float("guard.threshold", 0.5f);
  auto bc = baseline_from(ctx.kv);
  attack::AttackConfig ac = attack_from(ctx.kv);
  ac.type = attack::AttackType::PGD;

  auto frames = eval::make_perception_frames(detector, frames_n, collaborators + 1, mix_seed(ctx.seed, 0xfb));
  std::vector<std::vector<sim::FeatureMap>> attacked;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    attacked.push_back(eval::attack_frame(detector, frames[f], ac, 1, mix_seed(ctx.seed, f)));
  }

  auto guard_frame = [&](int i) {
    const std::size_t f = static_cast<std::size_t>(i) % frames.size();
    guard::defend(frames[f].ego_feature, attacked[f], model, detector, threshold);
  };
  auto baseline_frame = [&](int i) {
    const std::size_t f = static_cast<std::size_t>(i) % frames.size();
    baseline::consensus_baseline(frames[f].ego_feature, attacked[f], detector, bc,
                                 mix_seed(ctx.seed, 0xce + f));
  };

  sim::counters().reset();
  for (std::size_t f = 0; f < frames.size(); ++f) guard_frame(static_cast<int>(f));
  const auto guard_fuse = sim::counters().fuse.load();
  const auto guard_decode = sim::counters().decode.load();
  sim::counters().reset();
  for (std::size_t f = 0; f < frames.size(); ++f) baseline_frame(static_cast<int>(f));
  const auto base_fuse = sim::counters().fuse.load();
  const auto base_decode = sim::counters().decode.load();
  sim::counters().reset();

  const double guard_fps = eval::fps_benchmark(guard_frame, frames_n, warmup);
  const double base_fps = eval::fps_benchmark(baseline_frame, frames_n, warmup);

  eval::MetricsReport report;
  report.kind = "bench-fps";
  eval::MetricValues guard_row, base_row;
  guard_row.fps = guard_fps;
  base_row.fps = base_fps;
  report.sections.emplace_back("guard", guard_row);
  report.sections.emplace_back("baseline", base_row);
  report.notes.emplace_back("fps_ratio", fmt_note(guard_fps / base_fps));
  report.notes.emplace_back("guard_fuse_per_frame", fmt_note(static_cast<double>(guard_fuse) / frames_n));
  report.notes.emplace_back("guard_decode_per_frame", fmt_note(static_cast<double>(guard_decode) / frames_n));
  report.notes.emplace_back("baseline_fuse_per_frame", fmt_note(static_cast<double>(base_fuse) / frames_n));
  report.notes.emplace_back("baseline_decode_per_frame", fmt_note(static_cast<double>(base_decode) / frames_n));
  std::cout << "guard fps " << fmt_note(guard_fps) << "\nbaseline fps " << fmt_note(base_fps)
            << "\nratio " << fmt_note(guard_fps / base_fps) << "\n";
  if (ctx.emit_svg) {
    svg::write_file(ctx.out_dir + "/fps.svg",
                    svg::bar_chart("frames per second", {"baseline", "guard"}, {base_fps, guard_fps}));
  }
  finish_report(report, ctx, "bench-fps");
  return 0;
}

int run_leave_one_out(const CommonArgs& args, const std::string& dataset_dir) {
  auto ctx = make_context(args);
  auto dataset = data::read_shards(dataset_dir);
  auto gc = guard_from(ctx.kv);
  auto rows = eval::leave_one_out(dataset, gc, ctx.seed);
  eval::MetricsReport report;
  report.kind = "leave-one-out";
  for (const auto& row : rows) {
    report.sections.emplace_back(row.held_out, to_values(row.metrics));
    if (row.metrics.accuracy) {
      std::cout << row.held_out << " accuracy " << fmt_note(*row.metrics.accuracy) << "\n";
    }
  }
  finish_report(report, ctx, "leave-one-out");
  return 0;
}

int run_stats(const CommonArgs& args, const std::string& dataset_dir) {
  auto ctx = make_context(args);
  auto dataset = data::read_shards(dataset_dir);
  // Recompute from the records rather than trusting the stored block.
  auto stats = data::compute_stats(dataset.records);

  std::cout << "frames " << stats.frame_count << "\n";
  std::cout << "collaborator count distribution:\n";
  for (const auto& [count, frames] : stats.collaborator_hist) {
    std::cout << "  " << count << " collaborators: " << frames << " frames\n";
  }
  std::cout << "attack type distribution:\n";
  std::uint64_t attacked = 0;
  for (std::size_t t = 1; t < stats.attack_type_hist.size(); ++t) attacked += stats.attack_type_hist[t];
  for (std::size_t t = 0; t < stats.attack_type_hist.size(); ++t) {
    std::cout << "  " << attack::attack_name(static_cast<attack::AttackType>(t)) << ": "
              << stats.attack_type_hist[t];
    if (t > 0 && attacked > 0) {
      std::cout << " (" << fmt_note(100.0 * static_cast<double>(stats.attack_type_hist[t]) /
                                    static_cast<double>(attacked))
                << "% of attacked)";
    }
    std::cout << "\n";
  }
  char ratio[128];
  std::snprintf(ratio, sizeof ratio, "attack ratio min %.2f mean %.2f max %.2f",
                stats.attack_ratio_min, stats.attack_ratio_mean, stats.attack_ratio_max);
  std::cout << ratio << "\n";

  eval::MetricsReport report;
  report.kind = "stats";
  report.notes.emplace_back("frames", std::to_string(stats.frame_count));
  report.notes.emplace_back("attack_ratio_min", fmt_note(stats.attack_ratio_min));
  report.notes.emplace_back("attack_ratio_mean", fmt_note(stats.attack_ratio_mean));
  report.notes.emplace_back("attack_ratio_max", fmt_note(stats.attack_ratio_max));
  for (const auto& [count, frames] : stats.collaborator_hist) {
    report.notes.emplace_back("collaborators_" + std::to_string(count), std::to_string(frames));
  }
  for (std::size_t t = 0; t < stats.attack_type_hist.size(); ++t) {
    report.notes.emplace_back(std::string("type_") + attack::attack_name(static_cast<attack::AttackType>(t)),
                              std::to_string(stats.attack_type_hist[t]));
  }
  finish_report(report, ctx, "stats");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"collaborative perception security lab"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string detector_path, guard_path, dataset_dir, out_path;

  auto* td = app.add_subcommand("train-detector", "train the collaborative detector");
  add_common(td, args);
  td->add_option("--out", out_path, "checkpoint output path")->required();

  auto* gd = app.add_subcommand("gen-data", "generate the labeled attack/benign dataset");
  add_common(gd, args);
  gd->add_option("--detector", detector_path, "trained detector checkpoint")->required();
  gd->add_option("--out", out_path, "dataset directory")->required();

  auto* tg = app.add_subcommand("train-guard", "train the malicious-agent detector");
  add_common(tg, args);
  tg->add_option("--dataset", dataset_dir, "dataset directory")->required();
  tg->add_option("--out", out_path, "checkpoint output path")->required();

  auto* ev = app.add_subcommand("eval", "evaluate a guard on the dataset test split");
  add_common(ev, args);
  ev->add_option("--dataset", dataset_dir, "dataset directory")->required();
  ev->add_option("--guard", guard_path, "guard checkpoint")->required();

  auto* at = app.add_subcommand("attack", "measure perception quality under attack");
  add_common(at, args);
  at->add_option("--detector", detector_path, "trained detector checkpoint")->required();

  auto* bf = app.add_subcommand("bench-fps", "compare defense throughput");
  add_common(bf, args);
  bf->add_option("--detector", detector_path, "trained detector checkpoint")->required();
  bf->add_option("--guard", guard_path, "guard checkpoint")->required();

  auto* lo = app.add_subcommand("leave-one-out", "held-out attack generalization");
  add_common(lo, args);
  lo->add_option("--dataset", dataset_dir, "dataset directory")->required();

  auto* st = app.add_subcommand("stats", "print dataset distributions");
  add_common(st, args);
  st->add_option("--dataset", dataset_dir, "dataset directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (td->parsed()) return run_train_detector(args, out_path);
    if (gd->parsed()) return run_gen_data(args, detector_path, out_path);
    if (tg->parsed()) return run_train_guard(args, dataset_dir, out_path);
    if (ev->parsed()) return run_eval(args, dataset_dir, guard_path);
    if (at->parsed()) return run_attack(args, detector_path);
    if (bf->parsed()) return run_bench_fps(args, detector_path, guard_path);
    if (lo->parsed()) return run_leave_one_out(args, dataset_dir);
    if (st->parsed()) return run_stats(args, dataset_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
