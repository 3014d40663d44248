#pragma once

#include "cpshield/attack.hpp"
#include "cpshield/sim.hpp"

#include <array>
#include <map>
#include <string>
#include <vector>

namespace cpshield::data {

/// One (ego feature, collaborator feature) pair with its label.
/// Invariants: label == 1 iff attack_type != none; benign records carry
/// budget 0; feature shapes match the manifest dims.
struct SampleRecord {
  std::uint32_t scene_id = 0;
  std::uint32_t ego_agent_id = 0;
  std::uint32_t collaborator_agent_id = 0;
  std::uint8_t label = 0;        // 0 benign, 1 malicious
  std::uint8_t attack_type = 0;  // attack::AttackType value
  float budget = 0.0f;
  ad::Tensor ego_feature;          // [C,H,W]
  ad::Tensor collaborator_feature; // [C,H,W], post-transmit, possibly perturbed

  void check(int channels, int height, int width) const;  // throws on violation
};

struct SplitRanges {
  // Contiguous [begin, end) ranges over the stored (shuffled) record order.
  std::size_t train_begin = 0, train_end = 0;
  std::size_t val_begin = 0, val_end = 0;
  std::size_t test_begin = 0, test_end = 0;
};

/// Largest-remainder assignment of `count` records to contiguous
/// train/val/test ranges; sizes are within one of the exact proportions and
/// exact when `count` is divisible by the ratio total. Requires count >= 10.
SplitRanges split_ranges(std::size_t count, const std::array<int, 3>& ratios = {8, 1, 1});

struct DatasetStats {
  std::uint64_t frame_count = 0;
  std::map<int, std::uint64_t> collaborator_hist;   // frames per collaborator count
  std::array<std::uint64_t, 6> attack_type_hist{};  // records per attack::AttackType
  double attack_ratio_min = 0, attack_ratio_mean = 0, attack_ratio_max = 0;
};

/// The three per-frame distributions (collaborator count, attack types,
/// attacker ratio). Records must be grouped by scene_id.
DatasetStats compute_stats(const std::vector<SampleRecord>& records);

struct GenConfig {
  int frames = 1000;
  int min_collaborators = 3;
  int max_collaborators = 6;
  int min_attackers = 0;
  int max_attackers = 2;
  std::vector<float> budget_grid = {0.1f, 0.25f, 0.5f, 0.75f, 1.0f};
  float fixed_budget = -1.0f;  // >= 0 pins every attack to this budget
  // Attack optimizer settings shared by all generated attacks.
  int steps = 15;
  float step_size = 0.1f;
  float tau1 = 0.7f;
  float tau2 = 0.9f;
  float lambda_bg = 1.0f;
  float cw_penalty = 0.01f;
  bool sign_flip = true;
  // Scene content.
  int min_objects = 3;
  int max_objects = 6;
  float min_object_size = 4.0f;
  float max_object_size = 7.0f;
  std::size_t shard_size = 512;
  // Heterogeneous sensing: per-agent observation noise drawn uniformly from
  // this range when both bounds are >= 0 (otherwise the pipeline default).
  float noise_sigma_min = -1.0f;
  float noise_sigma_max = -1.0f;

  std::string canonical() const;  // digest input
};

struct Manifest {
  int version = 1;
  int channels = 0, height = 0, width = 0;
  std::uint64_t record_count = 0;
  std::size_t shard_size = 0;
  std::size_t shard_count = 0;
  std::uint64_t seed = 0;
  std::string config_digest;
  SplitRanges split;
  DatasetStats stats;
};

struct Dataset {
  Manifest manifest;
  std::vector<SampleRecord> records;

  std::vector<const SampleRecord*> slice(std::size_t begin, std::size_t end) const;
  std::vector<const SampleRecord*> train() const { return slice(manifest.split.train_begin, manifest.split.train_end); }
  std::vector<const SampleRecord*> val() const { return slice(manifest.split.val_begin, manifest.split.val_end); }
  std::vector<const SampleRecord*> test() const { return slice(manifest.split.test_begin, manifest.split.test_end); }
};

/// Simulates `frames` collaboration frames against the frozen detector,
/// designates attackers uniformly at random, picks one of the five attacks
/// per attacker, and emits one record per (ego, collaborator) pair. Records
/// are shuffled before the 8:1:1 ranges are assigned. Deterministic per seed.
Dataset generate_dataset(const sim::DetectorModel& detector, const GenConfig& config,
                         std::uint64_t seed);

/// Shard files (shard_NNNN.bin) plus manifest.txt under `dir`; the binary
/// record layout is the fixed-stride format documented in the README.
void write_shards(const Dataset& dataset, const std::string& dir);

/// Round-trip of write_shards, bit-exact including float payloads. Validates
/// the manifest, shard headers, and every record invariant.
Dataset read_shards(const std::string& dir);

}  // namespace cpshield::data
