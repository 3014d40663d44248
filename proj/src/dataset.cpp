#include "cpshield/dataset.hpp"

#include "cpshield/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace cpshield::data {

namespace {

constexpr char kShardMagic[8] = {'C', 'P', 'S', 'H', 'L', 'D', 'S', '1'};
constexpr std::uint32_t kShardVersion = 1;
constexpr const char* kManifestMagic = "cpshield-dataset v1";

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                              static_cast<unsigned char>((v >> 8) & 0xff),
                              static_cast<unsigned char>((v >> 16) & 0xff),
                              static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw std::runtime_error(std::string("shard: truncated while reading ") + what);
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& os, float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  put_u32(os, u);
}

float get_f32(std::istream& is, const char* what) {
  const std::uint32_t u = get_u32(is, what);
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

void put_f32_block(std::ostream& os, const std::vector<float>& v) {
  for (float f : v) put_f32(os, f);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void SampleRecord::check(int channels, int height, int width) const {
  const bool malicious = label == 1;
  if (label > 1) throw std::runtime_error("record: label must be 0 or 1");
  if (attack_type > 5) throw std::runtime_error("record: unknown attack type");
  if (malicious != (attack_type != 0)) {
    throw std::runtime_error("record: label and attack type disagree");
  }
  if (!malicious && budget != 0.0f) {
    throw std::runtime_error("record: benign record carries a nonzero budget");
  }
  if (malicious && !(budget > 0.0f)) {
    throw std::runtime_error("record: malicious record needs a positive budget");
  }
  const ad::Shape expected{channels, height, width};
  if (ego_feature.shape() != expected || collaborator_feature.shape() != expected) {
    throw std::runtime_error("record: feature shape does not match the manifest dims");
  }
}

SplitRanges split_ranges(std::size_t count, const std::array<int, 3>& ratios) {
  if (count < 10) throw std::invalid_argument("split: need at least 10 records");
  const double total = static_cast<double>(ratios[0] + ratios[1] + ratios[2]);
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> fractional{};
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = static_cast<double>(count) * ratios[static_cast<std::size_t>(i)] / total;
    sizes[static_cast<std::size_t>(i)] = static_cast<std::size_t>(std::floor(exact));
    fractional[static_cast<std::size_t>(i)] = exact - std::floor(exact);
    assigned += sizes[static_cast<std::size_t>(i)];
  }
  while (assigned < count) {  // largest remainder, earliest index on ties
    int best = 0;
    for (int i = 1; i < 3; ++i) {
      if (fractional[static_cast<std::size_t>(i)] > fractional[static_cast<std::size_t>(best)]) best = i;
    }
    ++sizes[static_cast<std::size_t>(best)];
    fractional[static_cast<std::size_t>(best)] = -1;
    ++assigned;
  }
  SplitRanges s;
  s.train_begin = 0;
  s.train_end = sizes[0];
  s.val_begin = sizes[0];
  s.val_end = sizes[0] + sizes[1];
  s.test_begin = s.val_end;
  s.test_end = count;
  return s;
}

DatasetStats compute_stats(const std::vector<SampleRecord>& records) {
  DatasetStats stats;
  struct FrameAcc {
    std::uint64_t collaborators = 0;
    std::uint64_t attackers = 0;
  };
  std::map<std::uint32_t, FrameAcc> frames;
  for (const auto& r : records) {
    auto& f = frames[r.scene_id];
    ++f.collaborators;
    if (r.label == 1) ++f.attackers;
    ++stats.attack_type_hist[r.attack_type];
  }
  stats.frame_count = frames.size();
  double ratio_sum = 0;
  double ratio_min = std::numeric_limits<double>::infinity();
  double ratio_max = 0;
  for (const auto& [id, f] : frames) {
    stats.collaborator_hist[static_cast<int>(f.collaborators)]++;
    const double ratio = static_cast<double>(f.attackers) / static_cast<double>(f.collaborators + 1);
    ratio_sum += ratio;
    ratio_min = std::min(ratio_min, ratio);
    ratio_max = std::max(ratio_max, ratio);
  }
  if (!frames.empty()) {
    stats.attack_ratio_mean = ratio_sum / static_cast<double>(frames.size());
    stats.attack_ratio_min = ratio_min;
    stats.attack_ratio_max = ratio_max;
  }
  return stats;
}

std::string GenConfig::canonical() const {
  std::ostringstream os;
  os << "frames=" << frames << "\ncollaborators=" << min_collaborators << ".." << max_collaborators
     << "\nattackers=" << min_attackers << ".." << max_attackers << "\nbudgets=";
  if (fixed_budget >= 0) {
    os << fmt_double(fixed_budget);
  } else {
    for (std::size_t i = 0; i < budget_grid.size(); ++i) os << (i ? "," : "") << fmt_double(budget_grid[i]);
  }
  os << "\nsteps=" << steps << "\nstep_size=" << fmt_double(step_size) << "\ntau1=" << fmt_double(tau1)
     << "\ntau2=" << fmt_double(tau2) << "\nlambda=" << fmt_double(lambda_bg)
     << "\ncw_penalty=" << fmt_double(cw_penalty) << "\nsign_flip=" << (sign_flip ? 1 : 0)
     << "\nobjects=" << min_objects << ".." << max_objects << "\nobject_size="
     << fmt_double(min_object_size) << ".." << fmt_double(max_object_size)
     << "\nnoise_sigma=" << fmt_double(noise_sigma_min) << ".." << fmt_double(noise_sigma_max)
     << "\nshard_size=" << shard_size << "\n";
  return os.str();
}

std::vector<const SampleRecord*> Dataset::slice(std::size_t begin, std::size_t end) const {
  std::vector<const SampleRecord*> out;
  out.reserve(end - begin);
  for (std::size_t i = begin; i < end && i < records.size(); ++i) out.push_back(&records[i]);
  return out;
}

Dataset generate_dataset(const sim::DetectorModel& detector, const GenConfig& config,
                         std::uint64_t seed) {
  if (config.frames < 1) throw std::invalid_argument("generate_dataset: frames must be positive");
  if (config.min_collaborators < 1 || config.max_collaborators < config.min_collaborators) {
    throw std::invalid_argument("generate_dataset: bad collaborator range");
  }
  if (config.min_attackers < 0 || config.max_attackers < config.min_attackers) {
    throw std::invalid_argument("generate_dataset: bad attacker range");
  }
  if (config.max_attackers > config.min_collaborators) {
    throw std::invalid_argument(
        "generate_dataset: attacker count may reach the agent count; lower max_attackers");
  }
  if (config.fixed_budget < 0 && config.budget_grid.empty()) {
    throw std::invalid_argument("generate_dataset: empty budget grid");
  }

  const auto& pipe = detector.config;
  Dataset ds;
  ds.records.reserve(static_cast<std::size_t>(config.frames) *
                     static_cast<std::size_t>(config.max_collaborators));

  for (int f = 0; f < config.frames; ++f) {
    const std::uint64_t frame_seed = mix_seed(seed, 1000 + static_cast<std::uint64_t>(f));
    Rng rng(frame_seed);
    const int collaborators = rng.uniform_int(config.min_collaborators, config.max_collaborators);
    const int agents = collaborators + 1;

    sim::SceneConfig scene_cfg{pipe.world, pipe.world, config.min_objects, config.max_objects,
                               config.min_object_size, config.max_object_size};
    const auto scene = sim::generate_scene(scene_cfg, mix_seed(frame_seed, 0x5c));
    auto poses = sim::sample_poses(agents, pipe, rng);

    const bool hetero = config.noise_sigma_min >= 0 && config.noise_sigma_max >= config.noise_sigma_min;
    sim::FeatureMap ego_feature;
    std::vector<sim::FeatureMap> collab_features;
    for (int a = 0; a < agents; ++a) {
      const float sigma = hetero ? rng.uniform_f(config.noise_sigma_min, config.noise_sigma_max) : -1.0f;
      auto view = sim::observe(scene, pipe, a, poses[static_cast<std::size_t>(a)].first,
                               poses[static_cast<std::size_t>(a)].second, mix_seed(frame_seed, 0xb0 + a),
                               sigma);
      auto feat = sim::encode(detector, view);
      if (a == 0) {
        ego_feature = feat;
      } else {
        collab_features.push_back(sim::transmit(feat, poses[static_cast<std::size_t>(a)].first,
                                                poses[static_cast<std::size_t>(a)].second,
                                                poses[0].first, poses[0].second, pipe));
      }
    }

    const int attackers = rng.uniform_int(config.min_attackers, config.max_attackers);
    std::vector<int> order(static_cast<std::size_t>(collaborators));
    for (int i = 0; i < collaborators; ++i) order[static_cast<std::size_t>(i)] = i;
    rng.shuffle(order);

    std::vector<std::uint8_t> record_type(static_cast<std::size_t>(collaborators), 0);
    std::vector<float> record_budget(static_cast<std::size_t>(collaborators), 0.0f);
    std::vector<ad::Tensor> final_features;
    for (const auto& c : collab_features) final_features.push_back(c.data);

    for (int k = 0; k < attackers; ++k) {
      const std::size_t victim = static_cast<std::size_t>(order[static_cast<std::size_t>(k)]);
      attack::AttackConfig ac;
      ac.type = static_cast<attack::AttackType>(1 + rng.uniform_index(5));
      ac.budget = config.fixed_budget >= 0
                      ? config.fixed_budget
                      : config.budget_grid[rng.uniform_index(config.budget_grid.size())];
      ac.steps = config.steps;
      ac.step_size = std::min(config.step_size, ac.budget > 0 ? ac.budget : config.step_size);
      ac.tau1 = config.tau1;
      ac.tau2 = config.tau2;
      ac.lambda_bg = config.lambda_bg;
      ac.cw_penalty = config.cw_penalty;
      ac.sign_flip = config.sign_flip;
      // Each attacker optimizes against the clean frame (no collusion).
      auto outcome = attack::attack_agent(detector, ego_feature, collab_features, victim, ac,
                                          mix_seed(frame_seed, 0xa7 + victim));
      final_features[victim] = outcome.perturbed.data;
      record_type[victim] = static_cast<std::uint8_t>(ac.type);
      record_budget[victim] = ac.budget;
    }

    for (int j = 0; j < collaborators; ++j) {
      SampleRecord rec;
      rec.scene_id = static_cast<std::uint32_t>(f);
      rec.ego_agent_id = 0;
      rec.collaborator_agent_id = static_cast<std::uint32_t>(j + 1);
      rec.label = record_type[static_cast<std::size_t>(j)] != 0 ? 1 : 0;
      rec.attack_type = record_type[static_cast<std::size_t>(j)];
      rec.budget = record_budget[static_cast<std::size_t>(j)];
      rec.ego_feature = ego_feature.data.detach();
      rec.collaborator_feature = final_features[static_cast<std::size_t>(j)].detach();
      rec.check(pipe.channels, pipe.feat_hw, pipe.feat_hw);
      ds.records.push_back(std::move(rec));
    }
  }

  // Stats describe the frame structure; compute before shuffling.
  ds.manifest.stats = compute_stats(ds.records);
  Rng shuffle_rng(mix_seed(seed, 0x517));
  shuffle_rng.shuffle(ds.records);

  ds.manifest.version = 1;
  ds.manifest.channels = pipe.channels;
  ds.manifest.height = pipe.feat_hw;
  ds.manifest.width = pipe.feat_hw;
  ds.manifest.record_count = ds.records.size();
  ds.manifest.shard_size = config.shard_size;
  ds.manifest.shard_count = (ds.records.size() + config.shard_size - 1) / config.shard_size;
  ds.manifest.seed = seed;
  ds.manifest.config_digest = cfg::fnv1a_hex(config.canonical());
  ds.manifest.split = split_ranges(ds.records.size());
  return ds;
}

namespace {

void write_manifest(const Manifest& m, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("manifest: cannot open " + path + " for writing");
  os << kManifestMagic << "\n";
  os << "channels " << m.channels << "\n";
  os << "height " << m.height << "\n";
  os << "width " << m.width << "\n";
  os << "records " << m.record_count << "\n";
  os << "shard_size " << m.shard_size << "\n";
  os << "shards " << m.shard_count << "\n";
  os << "seed " << m.seed << "\n";
  os << "config_digest " << m.config_digest << "\n";
  os << "split train " << m.split.train_begin << " " << m.split.train_end << "\n";
  os << "split val " << m.split.val_begin << " " << m.split.val_end << "\n";
  os << "split test " << m.split.test_begin << " " << m.split.test_end << "\n";
  os << "stats frames " << m.stats.frame_count << "\n";
  os << "stats attack_ratio_min " << fmt_double(m.stats.attack_ratio_min) << "\n";
  os << "stats attack_ratio_mean " << fmt_double(m.stats.attack_ratio_mean) << "\n";
  os << "stats attack_ratio_max " << fmt_double(m.stats.attack_ratio_max) << "\n";
  for (const auto& [count, frames] : m.stats.collaborator_hist) {
    os << "stats collaborators " << count << " " << frames << "\n";
  }
  for (std::size_t t = 0; t < m.stats.attack_type_hist.size(); ++t) {
    os << "stats attack_type " << attack::attack_name(static_cast<attack::AttackType>(t)) << " "
       << m.stats.attack_type_hist[t] << "\n";
  }
  if (!os) throw std::runtime_error("manifest: write failed for " + path);
}

Manifest read_manifest(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("manifest: cannot open " + path);
  std::string line;
  if (!std::getline(is, line) || line != kManifestMagic) {
    throw std::runtime_error("manifest: bad magic/version in " + path);
  }
  Manifest m;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "channels") ls >> m.channels;
    else if (tag == "height") ls >> m.height;
    else if (tag == "width") ls >> m.width;
    else if (tag == "records") ls >> m.record_count;
    else if (tag == "shard_size") ls >> m.shard_size;
    else if (tag == "shards") ls >> m.shard_count;
    else if (tag == "seed") ls >> m.seed;
    else if (tag == "config_digest") ls >> m.config_digest;
    else if (tag == "split") {
      std::string which;
      std::size_t b = 0, e = 0;
      ls >> which >> b >> e;
      if (which == "train") { m.split.train_begin = b; m.split.train_end = e; }
      else if (which == "val") { m.split.val_begin = b; m.split.val_end = e; }
      else if (which == "test") { m.split.test_begin = b; m.split.test_end = e; }
      else throw std::runtime_error("manifest: unknown split '" + which + "'");
    } else if (tag == "stats") {
      std::string which;
      ls >> which;
      if (which == "frames") ls >> m.stats.frame_count;
      else if (which == "attack_ratio_min") ls >> m.stats.attack_ratio_min;
      else if (which == "attack_ratio_mean") ls >> m.stats.attack_ratio_mean;
      else if (which == "attack_ratio_max") ls >> m.stats.attack_ratio_max;
      else if (which == "collaborators") {
        int count = 0;
        std::uint64_t frames = 0;
        ls >> count >> frames;
        m.stats.collaborator_hist[count] = frames;
      } else if (which == "attack_type") {
        std::string name;
        std::uint64_t n = 0;
        ls >> name >> n;
        auto type = attack::attack_from_name(name);
        if (!type) throw std::runtime_error("manifest: unknown attack type '" + name + "'");
        m.stats.attack_type_hist[static_cast<std::size_t>(*type)] = n;
      } else {
        throw std::runtime_error("manifest: unknown stats field '" + which + "'");
      }
    } else {
      throw std::runtime_error("manifest: unknown field '" + tag + "' in " + path);
    }
    if (ls.fail()) throw std::runtime_error("manifest: malformed line '" + line + "' in " + path);
  }
  if (m.channels <= 0 || m.height <= 0 || m.width <= 0) {
    throw std::runtime_error("manifest: non-positive feature dims in " + path);
  }
  const auto& s = m.split;
  if (s.train_begin != 0 || s.train_end != s.val_begin || s.val_end != s.test_begin ||
      s.test_end != m.record_count) {
    throw std::runtime_error("manifest: split ranges do not partition the records in " + path);
  }
  return m;
}

std::string shard_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "shard_%04zu.bin", index);
  return buf;
}

}  // namespace

void write_shards(const Dataset& dataset, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const Manifest& m = dataset.manifest;
  if (m.record_count != dataset.records.size()) {
    throw std::runtime_error("write_shards: manifest count disagrees with the record list");
  }
  write_manifest(m, dir + "/manifest.txt");
  std::size_t written = 0;
  for (std::size_t s = 0; s < std::max<std::size_t>(m.shard_count, 0); ++s) {
    const std::string path = dir + "/" + shard_name(s);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("shard: cannot open " + path + " for writing");
    const std::size_t count = std::min(m.shard_size, dataset.records.size() - written);
    os.write(kShardMagic, sizeof kShardMagic);
    put_u32(os, kShardVersion);
    put_u32(os, static_cast<std::uint32_t>(count));
    put_u32(os, static_cast<std::uint32_t>(m.channels));
    put_u32(os, static_cast<std::uint32_t>(m.height));
    put_u32(os, static_cast<std::uint32_t>(m.width));
    for (std::size_t i = 0; i < count; ++i) {
      const SampleRecord& r = dataset.records[written + i];
      r.check(m.channels, m.height, m.width);
      put_u32(os, r.scene_id);
      put_u32(os, r.ego_agent_id);
      put_u32(os, r.collaborator_agent_id);
      const unsigned char flags[2] = {r.label, r.attack_type};
      os.write(reinterpret_cast<const char*>(flags), 2);
      const unsigned char pad[2] = {0, 0};
      os.write(reinterpret_cast<const char*>(pad), 2);
      put_f32(os, r.budget);
      put_f32_block(os, r.ego_feature.values());
      put_f32_block(os, r.collaborator_feature.values());
    }
    written += count;
    if (!os) throw std::runtime_error("shard: write failed for " + path);
  }
  if (written != dataset.records.size()) {
    throw std::runtime_error("write_shards: shard layout did not cover every record");
  }
}

Dataset read_shards(const std::string& dir) {
  Dataset ds;
  ds.manifest = read_manifest(dir + "/manifest.txt");
  const Manifest& m = ds.manifest;
  ds.records.reserve(m.record_count);
  const std::size_t block =
      static_cast<std::size_t>(m.channels) * static_cast<std::size_t>(m.height) * m.width;
  for (std::size_t s = 0; s < m.shard_count; ++s) {
    const std::string path = dir + "/" + shard_name(s);
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("shard: cannot open " + path);
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kShardMagic, 8) != 0) {
      throw std::runtime_error("shard: bad magic in " + path);
    }
    const std::uint32_t version = get_u32(is, "version");
    if (version != kShardVersion) {
      throw std::runtime_error("shard: unsupported version " + std::to_string(version) + " in " + path);
    }
    const std::uint32_t count = get_u32(is, "record count");
    const std::uint32_t c = get_u32(is, "channels");
    const std::uint32_t h = get_u32(is, "height");
    const std::uint32_t w = get_u32(is, "width");
    if (c != static_cast<std::uint32_t>(m.channels) || h != static_cast<std::uint32_t>(m.height) ||
        w != static_cast<std::uint32_t>(m.width)) {
      throw std::runtime_error("shard: dims disagree with the manifest in " + path);
    }
    for (std::uint32_t i = 0; i < count; ++i) {
      SampleRecord r;
      r.scene_id = get_u32(is, "scene id");
      r.ego_agent_id = get_u32(is, "ego id");
      r.collaborator_agent_id = get_u32(is, "collaborator id");
      unsigned char flags[4];
      if (!is.read(reinterpret_cast<char*>(flags), 4)) {
        throw std::runtime_error("shard: truncated record flags in " + path);
      }
      r.label = flags[0];
      r.attack_type = flags[1];
      r.budget = get_f32(is, "budget");
      std::vector<float> ego(block), collab(block);
      for (auto& v : ego) v = get_f32(is, "ego feature");
      for (auto& v : collab) v = get_f32(is, "collaborator feature");
      r.ego_feature = ad::Tensor({m.channels, m.height, m.width}, std::move(ego));
      r.collaborator_feature = ad::Tensor({m.channels, m.height, m.width}, std::move(collab));
      r.check(m.channels, m.height, m.width);
      ds.records.push_back(std::move(r));
    }
    char extra;
    if (is.read(&extra, 1)) throw std::runtime_error("shard: trailing bytes in " + path);
  }
  if (ds.records.size() != m.record_count) {
    throw std::runtime_error("read_shards: record count disagrees with the manifest");
  }
  return ds;
}

}  // namespace cpshield::data
