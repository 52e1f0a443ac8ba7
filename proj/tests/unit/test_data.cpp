#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "pdpp/binio.hpp"
#include "pdpp/data.hpp"

using namespace pdpp;

namespace {

const std::string kFixture = std::string(PDPP_FIXTURES) + "/tiny_dataset.pdpp";

std::string error_of(const std::vector<unsigned char>& bytes) {
  try {
    (void)decode_dataset(bytes);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kFormat);
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("fixture decodes to the known records") {
  const Dataset ds = load_dataset(kFixture);
  CHECK(ds.num_tasks == 2);
  CHECK(ds.num_actions == 3);
  CHECK(ds.obs_dim == 2);
  CHECK(ds.task_map.actions == std::vector<std::vector<int>>{{0, 1}, {1, 2}});
  REQUIRE(ds.records.size() == 2);
  CHECK(ds.records[0].task == 0);
  CHECK(ds.records[0].actions == std::vector<int>{0, 1, 0});
  CHECK(ds.records[0].obs_start == std::vector<float>{0.5f, -1.0f});
  CHECK(ds.records[0].obs_goal == std::vector<float>{2.0f, 0.25f});
  CHECK(ds.records[1].actions == std::vector<int>{2, 1});
  CHECK(ds.records[1].obs_goal == std::vector<float>{-0.5f, 3.0f});
  CHECK(ds.horizons() == std::vector<int>{2, 3});
  CHECK(ds.with_horizon(2).size() == 1);
  CHECK(encode_dataset(ds) == read_file_bytes(kFixture));
}

TEST_CASE("corrupt dataset bytes are rejected with offsets") {
  const auto bytes = read_file_bytes(kFixture);
  auto bad = bytes;
  bad[1] = 'X';
  CHECK(error_of(bad).find("magic") != std::string::npos);
  auto cut = bytes;
  cut.resize(cut.size() - 2);
  CHECK(error_of(cut).find("offset") != std::string::npos);
  auto extra = bytes;
  extra.push_back(0);
  CHECK(error_of(extra).find("trailing") != std::string::npos);
  auto act = bytes;
  // first record action (after header 24 bytes, task map 20 bytes, count 4, task/T 8)
  act[56] = 9;
  CHECK(error_of(act).find("out of range") != std::string::npos);
  auto ver = bytes;
  ver[8] = 2;
  CHECK(error_of(ver).find("version") != std::string::npos);
  CHECK_THROWS_AS(load_dataset("/nonexistent/ds.pdpp"), Error);
}

TEST_CASE("window extraction") {
  Video v;
  v.task = 2;
  v.actions = {4, 5, 6, 7, 8};
  for (int i = 0; i < 5; ++i) {
    v.start_obs.push_back({static_cast<float>(i)});
    v.end_obs.push_back({static_cast<float>(10 + i)});
  }
  const auto w = extract_windows(v, 3, 7);
  REQUIRE(w.size() == 3);
  CHECK(w[1].actions == std::vector<int>{5, 6, 7});
  CHECK(w[1].obs_start == std::vector<float>{1.0f});
  CHECK(w[1].obs_goal == std::vector<float>{13.0f});
  CHECK(w[2].video == 7);
  CHECK(extract_windows(v, 5, 0).size() == 1);
  CHECK(extract_windows(v, 6, 0).empty());
  CHECK_THROWS_AS(extract_windows(v, 1, 0), Error);
}

TEST_CASE("video split is a disjoint cover") {
  const auto [tr, te] = split_videos(50, 0.7, 3);
  CHECK(tr.size() == 35);
  CHECK(te.size() == 15);
  std::set<int> all(tr.begin(), tr.end());
  all.insert(te.begin(), te.end());
  CHECK(all.size() == 50);
  CHECK(std::is_sorted(tr.begin(), tr.end()));
  CHECK(split_videos(50, 0.7, 3) == split_videos(50, 0.7, 3));
  CHECK(split_videos(50, 0.7, 3) != split_videos(50, 0.7, 4));
  CHECK_THROWS_AS(split_videos(10, 1.0, 0), Error);
}

TEST_CASE("synthetic corpus structure") {
  SyntheticConfig cfg;
  cfg.videos_per_task = 10;
  cfg.seed = 4;
  const Corpus c = generate_synthetic(cfg);
  CHECK(c.videos.size() == 60);
  REQUIRE(c.chains.size() == 6);
  for (const auto& ch : c.chains) {
    CHECK(ch.actions.size() == 6);
    for (std::size_t i = 0; i < ch.actions.size(); ++i) {
      CHECK(ch.successors[i].size() == 2);
      double s = 0;
      for (double p : ch.probs[i]) s += p;
      CHECK(s == doctest::Approx(1.0));
    }
  }
  for (const auto& v : c.videos) {
    CHECK(v.actions.size() >= 5);
    CHECK(v.actions.size() <= 9);
    CHECK(c.is_reachable(v.task, v.actions));
    CHECK(v.start_obs.size() == v.actions.size());
    CHECK(v.start_obs[0].size() == 32);
  }
  // same seed, same corpus
  const Corpus d = generate_synthetic(cfg);
  CHECK(d.videos[17].actions == c.videos[17].actions);
  CHECK(d.videos[17].end_obs == c.videos[17].end_obs);
}

TEST_CASE("reachable plan probabilities") {
  SyntheticConfig cfg;
  cfg.videos_per_task = 2;
  const Corpus c = generate_synthetic(cfg);
  const auto& ch = c.chains[0];
  const int first = ch.actions[0];
  double total = 0;
  std::set<int> lasts;
  for (int last : ch.actions) {
    for (const auto& [plan, p] : c.reachable_plans(0, first, last, 3)) {
      CHECK(plan.front() == first);
      CHECK(plan.back() == last);
      CHECK(c.is_reachable(0, plan));
      total += p;
      lasts.insert(last);
    }
  }
  // every length-3 continuation from `first` ends somewhere
  CHECK(total == doctest::Approx(1.0));
  CHECK(lasts.size() >= 2);
}

TEST_CASE("toy benchmark has one plan per query") {
  SyntheticConfig cfg = toy_config();
  cfg.videos_per_task = 5;
  const Corpus c = generate_synthetic(cfg);
  for (int k = 0; k < cfg.num_tasks; ++k)
    for (int a : c.chains[k].actions)
      for (int b : c.chains[k].actions) {
        const auto plans = c.reachable_plans(k, a, b, 3);
        CHECK(plans.size() <= 1);
        if (!plans.empty()) CHECK(plans[0].second == doctest::Approx(1.0));
      }
}

TEST_CASE("generated split round trips") {
  SyntheticConfig cfg;
  cfg.videos_per_task = 8;
  cfg.seed = 2;
  const auto s = generate_split(cfg, {3, 4});
  CHECK(!s.train.records.empty());
  CHECK(!s.test.records.empty());
  CHECK(s.train.horizons() == std::vector<int>{3, 4});
  std::set<int> train_videos, test_videos;
  for (const auto& r : s.train.records) train_videos.insert(r.video);
  for (const auto& r : s.test.records) CHECK(train_videos.count(r.video) == 0);
  const auto path = (std::filesystem::temp_directory_path() / "pdpp_data_test.pdpp").string();
  save_dataset(path, s.train);
  CHECK(load_dataset(path) == s.train);
  std::filesystem::remove(path);
  CHECK(SyntheticConfig::from_json(cfg.to_json()).to_json() == cfg.to_json());
  CHECK(SyntheticConfig::from_json("{\"preset\":\"toy\"}").branching == 1);
}

TEST_CASE("record conditions") {
  PlanRecord r{1, {0, 2, 1}, {1.0f, 2.0f}, {3.0f, 4.0f}, -1};
  const ConditionSet c = record_condition(r, 1);
  CHECK(c.horizon == 3);
  CHECK(c.obs_goal == std::vector<float>{3.0f, 4.0f});
  const ConditionSet v = record_condition(r, 0, true);
  CHECK(v.obs_goal == std::vector<float>{0.0f, 0.0f});
  CHECK(v.task == 0);
}

TEST_CASE("invalid generator configs") {
  SyntheticConfig cfg;
  cfg.subset_size = 30;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = SyntheticConfig{};
  cfg.branching = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  CHECK_THROWS_AS(SyntheticConfig::from_json("{\"preset\":\"huge\"}"), Error);
  CHECK_THROWS_AS(SyntheticConfig::from_json("not json"), Error);
}
