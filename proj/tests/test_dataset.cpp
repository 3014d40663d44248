#include "cpshield/dataset.hpp"

#include "doctest.h"
#include "support/pipeline_fixtures.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace cpshield;
using cpshield::testing::tiny_pipeline;
namespace fs = std::filesystem;

namespace {

std::string read_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is);
  return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

data::SampleRecord make_record(std::uint32_t scene, std::uint32_t collab, std::uint8_t type,
                               float budget, int c, int h, int w, float fill) {
  data::SampleRecord r;
  r.scene_id = scene;
  r.ego_agent_id = 0;
  r.collaborator_agent_id = collab;
  r.attack_type = type;
  r.label = type != 0 ? 1 : 0;
  r.budget = budget;
  r.ego_feature = ad::Tensor::full({c, h, w}, fill);
  r.collaborator_feature = ad::Tensor::full({c, h, w}, fill * 0.5f);
  return r;
}

data::GenConfig fast_gen(int frames) {
  data::GenConfig g;
  g.frames = frames;
  g.min_collaborators = 3;
  g.max_collaborators = 4;
  g.min_attackers = 0;
  g.max_attackers = 2;
  g.steps = 2;  // keep the unit test cheap
  g.shard_size = 16;
  return g;
}

struct TempDir {
  std::string path;
  explicit TempDir(std::string p) : path(std::move(p)) { fs::remove_all(path); }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("split sizes and partition") {
  auto s10 = data::split_ranges(10);
  CHECK(s10.train_end - s10.train_begin == 8);
  CHECK(s10.val_end - s10.val_begin == 1);
  CHECK(s10.test_end - s10.test_begin == 1);

  auto s100 = data::split_ranges(100);
  CHECK(s100.train_end == 80);
  CHECK(s100.val_end == 90);
  CHECK(s100.test_end == 100);

  for (std::size_t count : {10ul, 11ul, 37ul, 100ul, 1001ul}) {
    auto s = data::split_ranges(count);
    CHECK(s.train_begin == 0);
    CHECK(s.train_end == s.val_begin);
    CHECK(s.val_end == s.test_begin);
    CHECK(s.test_end == count);
    const double exact_train = count * 0.8;
    CHECK(std::fabs(static_cast<double>(s.train_end) - exact_train) <= 1.0);
  }

  CHECK_THROWS_AS(data::split_ranges(9), std::invalid_argument);
}

TEST_CASE("compute_stats arithmetic") {
  const int c = 2, h = 2, w = 2;

  SUBCASE("mean attack ratio over mixed frames") {
    // Four frames, 4 collaborators each (5 agents), attacker counts 1,1,0,2.
    std::vector<data::SampleRecord> records;
    const int attackers_per_frame[4] = {1, 1, 0, 2};
    for (std::uint32_t f = 0; f < 4; ++f) {
      for (std::uint32_t j = 0; j < 4; ++j) {
        const bool mal = j < static_cast<std::uint32_t>(attackers_per_frame[f]);
        records.push_back(make_record(f, j + 1, mal ? 1 : 0, mal ? 0.5f : 0.0f, c, h, w, 0.1f));
      }
    }
    auto stats = data::compute_stats(records);
    CHECK(stats.frame_count == 4);
    CHECK(stats.attack_ratio_mean == doctest::Approx(0.20).epsilon(1e-9));
    CHECK(stats.attack_ratio_min == 0.0);
    CHECK(stats.attack_ratio_max == doctest::Approx(0.40));
    CHECK(stats.collaborator_hist.at(4) == 4);
    std::uint64_t hist_total = 0;
    for (const auto& [k, v] : stats.collaborator_hist) hist_total += v;
    CHECK(hist_total == stats.frame_count);
  }

  SUBCASE("all-benign dataset has zero ratios") {
    std::vector<data::SampleRecord> records;
    for (std::uint32_t f = 0; f < 3; ++f)
      for (std::uint32_t j = 0; j < 3; ++j)
        records.push_back(make_record(f, j + 1, 0, 0.0f, c, h, w, 0.2f));
    auto stats = data::compute_stats(records);
    CHECK(stats.attack_ratio_min == 0.0);
    CHECK(stats.attack_ratio_mean == 0.0);
    CHECK(stats.attack_ratio_max == 0.0);
    CHECK(stats.attack_type_hist[0] == 9);
  }
}

TEST_CASE("record invariants are enforced") {
  const int c = 2, h = 2, w = 2;
  auto good = make_record(0, 1, 1, 0.5f, c, h, w, 0.3f);
  CHECK_NOTHROW(good.check(c, h, w));

  auto label_mismatch = good;
  label_mismatch.attack_type = 0;  // label still 1
  CHECK_THROWS_AS(label_mismatch.check(c, h, w), std::runtime_error);

  auto benign_budget = make_record(0, 1, 0, 0.0f, c, h, w, 0.3f);
  benign_budget.budget = 0.25f;
  CHECK_THROWS_AS(benign_budget.check(c, h, w), std::runtime_error);

  CHECK_THROWS_AS(good.check(c + 1, h, w), std::runtime_error);
}

TEST_CASE("dataset generation") {
  auto pipe = tiny_pipeline();
  auto detector = sim::DetectorModel::init(pipe, 31337);

  SUBCASE("zero attacker probability means every label is benign") {
    auto g = fast_gen(6);
    g.min_attackers = g.max_attackers = 0;
    auto ds = data::generate_dataset(detector, g, 41);
    CHECK(ds.records.size() >= 18);
    for (const auto& r : ds.records) {
      CHECK(r.label == 0);
      CHECK(r.attack_type == 0);
      CHECK(r.budget == 0.0f);
    }
    CHECK(ds.manifest.stats.attack_type_hist[0] == ds.records.size());
  }

  SUBCASE("attacked records stay within budget of the clean regeneration") {
    auto g = fast_gen(6);
    auto attacked = data::generate_dataset(detector, g, 99);
    auto g0 = g;
    g0.min_attackers = g0.max_attackers = 0;
    auto clean = data::generate_dataset(detector, g0, 99);

    auto key = [](const data::SampleRecord& r) {
      return (static_cast<std::uint64_t>(r.scene_id) << 32) | r.collaborator_agent_id;
    };
    std::map<std::uint64_t, const data::SampleRecord*> clean_by_key;
    for (const auto& r : clean.records) clean_by_key[key(r)] = &r;

    int malicious_seen = 0;
    for (const auto& r : attacked.records) {
      const auto* base = clean_by_key.at(key(r));
      CHECK(r.ego_feature.values() == base->ego_feature.values());
      if (r.label == 0) {
        CHECK(r.collaborator_feature.values() == base->collaborator_feature.values());
      } else {
        ++malicious_seen;
        float max_diff = 0;
        for (std::size_t i = 0; i < r.collaborator_feature.values().size(); ++i) {
          max_diff = std::max(max_diff, std::fabs(r.collaborator_feature.values()[i] -
                                                  base->collaborator_feature.values()[i]));
        }
        CHECK(max_diff <= r.budget + 1e-6f);  // one f32 rounding of the addition
      }
    }
    CHECK(malicious_seen > 0);
  }

  SUBCASE("attacker range must stay below the agent count") {
    auto g = fast_gen(2);
    g.max_attackers = 5;  // min_collaborators is 3
    CHECK_THROWS_AS(data::generate_dataset(detector, g, 1), std::invalid_argument);
  }
}

TEST_CASE("shard round trip") {
  auto pipe = tiny_pipeline();
  auto detector = sim::DetectorModel::init(pipe, 777);
  auto g = fast_gen(5);
  auto ds = data::generate_dataset(detector, g, 4242);

  TempDir dir("dataset_roundtrip_tmp");

  SUBCASE("write-read-write is byte identical") {
    data::write_shards(ds, dir.path);
    auto back = data::read_shards(dir.path);
    REQUIRE(back.records.size() == ds.records.size());
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
      CHECK(back.records[i].scene_id == ds.records[i].scene_id);
      CHECK(back.records[i].collaborator_agent_id == ds.records[i].collaborator_agent_id);
      CHECK(back.records[i].label == ds.records[i].label);
      CHECK(back.records[i].attack_type == ds.records[i].attack_type);
      CHECK(back.records[i].budget == ds.records[i].budget);
      CHECK(back.records[i].ego_feature.values() == ds.records[i].ego_feature.values());
      CHECK(back.records[i].collaborator_feature.values() ==
            ds.records[i].collaborator_feature.values());
    }

    TempDir dir2("dataset_roundtrip_tmp2");
    data::write_shards(back, dir2.path);
    CHECK(read_bytes(dir.path + "/manifest.txt") == read_bytes(dir2.path + "/manifest.txt"));
    for (std::size_t s = 0;; ++s) {
      char name[32];
      std::snprintf(name, sizeof name, "shard_%04zu.bin", s);
      const bool a = fs::exists(dir.path + "/" + name);
      const bool b = fs::exists(dir2.path + "/" + name);
      CHECK(a == b);
      if (!a) break;
      CHECK(read_bytes(dir.path + "/" + name) == read_bytes(dir2.path + "/" + name));
    }
  }

  SUBCASE("same seed twice gives byte-identical shards") {
    data::write_shards(ds, dir.path);
    auto again = data::generate_dataset(detector, g, 4242);
    TempDir dir2("dataset_det_tmp");
    data::write_shards(again, dir2.path);
    CHECK(read_bytes(dir.path + "/shard_0000.bin") == read_bytes(dir2.path + "/shard_0000.bin"));
    CHECK(read_bytes(dir.path + "/manifest.txt") == read_bytes(dir2.path + "/manifest.txt"));
  }

  SUBCASE("corrupted shard header is a parse error, not garbage") {
    data::write_shards(ds, dir.path);
    const std::string shard = dir.path + "/shard_0000.bin";
    std::string bytes = read_bytes(shard);
    bytes[3] ^= 0x40;  // flip a magic byte
    std::ofstream(shard, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    CHECK_THROWS_AS(data::read_shards(dir.path), std::runtime_error);
  }

  SUBCASE("truncated shard is detected") {
    data::write_shards(ds, dir.path);
    const std::string shard = dir.path + "/shard_0000.bin";
    std::string bytes = read_bytes(shard);
    bytes.resize(bytes.size() - 7);
    std::ofstream(shard, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    CHECK_THROWS_AS(data::read_shards(dir.path), std::runtime_error);
  }

  SUBCASE("empty dataset round trips with count zero") {
    data::Dataset empty;
    empty.manifest.channels = pipe.channels;
    empty.manifest.height = pipe.feat_hw;
    empty.manifest.width = pipe.feat_hw;
    empty.manifest.record_count = 0;
    empty.manifest.shard_size = 16;
    empty.manifest.shard_count = 0;
    empty.manifest.config_digest = "0";
    data::write_shards(empty, dir.path);
    auto back = data::read_shards(dir.path);
    CHECK(back.records.empty());
    CHECK(back.manifest.record_count == 0);
  }
}

TEST_CASE("dataset split views cover the records disjointly") {
  auto pipe = tiny_pipeline();
  auto detector = sim::DetectorModel::init(pipe, 2);
  auto ds = data::generate_dataset(detector, fast_gen(6), 7);
  auto train = ds.train();
  auto val = ds.val();
  auto test = ds.test();
  CHECK(train.size() + val.size() + test.size() == ds.records.size());
  CHECK(train.size() >= val.size());
}
