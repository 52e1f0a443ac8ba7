#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>

#include "json.hpp"
#include "pdpp/evaluation.hpp"

using namespace pdpp;

TEST_CASE("metric fixtures") {
  CHECK(mean_accuracy({{1, 2, 3}}, {{1, 3, 3}}) == doctest::Approx(2.0 / 3.0));
  CHECK(success_rate({{1, 2, 3}}, {{1, 3, 3}}) == 0.0);
  CHECK(success_rate({{1, 2, 3}, {4, 5, 6}}, {{1, 3, 3}, {4, 5, 6}}) == 0.5);
  CHECK(miou({{1, 2, 3}}, {{1, 2, 4}}) == doctest::Approx(0.5));
  // repeated actions count once
  CHECK(miou({{1, 1, 2}}, {{1, 2, 2}}) == 1.0);
  CHECK(success_rate({}, {}) == 0.0);
}

TEST_CASE("mIoU batching") {
  const std::vector<Plan> p = {{1, 2}, {3, 4}, {7, 8}};
  const std::vector<Plan> g = {{1, 2}, {3, 5}, {7, 9}};
  CHECK(miou(p, g, 1) == doctest::Approx((1.0 + 1.0 / 3.0 + 1.0 / 3.0) / 3.0));
  // {1,2,3,4} vs {1,2,3,5}, then {7,8} vs {7,9}
  CHECK(miou(p, g, 2) == doctest::Approx((3.0 / 5.0 + 1.0 / 3.0) / 2.0));
  // {1,2,3,4,7,8} vs {1,2,3,5,7,9}
  CHECK(miou(p, g, 3) == doctest::Approx(4.0 / 8.0));
  CHECK(miou(p, g, 8) == miou(p, g, 3));
  CHECK_THROWS_AS(miou(p, g, 0), Error);
}

TEST_CASE("length and count mismatches") {
  try {
    (void)score({{1, 2}}, {{1, 2, 3}});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kShapeMismatch);
  }
  CHECK_THROWS_AS(score({{1, 2}}, {}), Error);
}

TEST_CASE("query grouping") {
  std::vector<PlanRecord> rs = {
      {0, {1, 2, 3}, {0.0f}, {1.0f}, 0},
      {0, {1, 4, 3}, {0.5f}, {1.0f}, 1},
      {1, {1, 2, 3}, {0.0f}, {1.0f}, 2},
      {0, {1, 2, 3}, {0.0f}, {1.0f}, 3},
      {0, {1, 2, 2, 3}, {0.0f}, {1.0f}, 4},
  };
  const auto gs = group_queries(rs);
  REQUIRE(gs.size() == 3);
  CHECK(gs[0].key == "0:1:3:3");
  CHECK(gs[0].members == std::vector<std::size_t>{0, 1, 3});
  CHECK(gs[0].gt_modes.at({1, 2, 3}) == 2);
  CHECK(gs[0].gt_modes.at({1, 4, 3}) == 1);
  CHECK(gs[1].representative == 2);
  CHECK(gs[2].members == std::vector<std::size_t>{4});

  const auto fs = group_queries(rs, true);
  REQUIRE(fs.size() == 3);
  CHECK(fs[0].members == std::vector<std::size_t>{0, 2, 3});
  CHECK(fs[1].members == std::vector<std::size_t>{1});
}

TEST_CASE("probabilistic metrics on a hand example") {
  QueryGroup g;
  g.gt_modes = {{{0, 0}, 3}, {{1, 1}, 1}};
  const std::vector<std::vector<Plan>> samples = {{{0, 0}, {0, 0}, {2, 2}, {2, 2}}};
  // support {00, 11, 22}; Q = (4, 2, 1)/7, P = (3, 1, 3)/7
  const auto m = prob_metrics({g}, samples);
  CHECK(m.nll == doctest::Approx((3 * -std::log(3.0 / 7) - std::log(1.0 / 7)) / 4));
  CHECK(m.kl ==
        doctest::Approx(4.0 / 7 * std::log(4.0 / 3) + 2.0 / 7 * std::log(2.0) + 1.0 / 7 * std::log(1.0 / 3)));
  CHECK(m.mode_prec == doctest::Approx(0.5));
  CHECK(m.mode_rec == doctest::Approx(0.75));
  const auto u = prob_metrics({g}, samples, false);
  CHECK(u.mode_prec == doctest::Approx(0.5));
  CHECK(u.mode_rec == doctest::Approx(0.5));

  // identical distributions: KL 0, full precision and recall
  const auto same = prob_metrics({g}, {{{0, 0}, {0, 0}, {0, 0}, {1, 1}}});
  CHECK(same.kl == doctest::Approx(0.0));
  CHECK(same.mode_prec == 1.0);
  CHECK(same.mode_rec == 1.0);

  CHECK_THROWS_AS(prob_metrics({g}, {{}}), Error);
  CHECK_THROWS_AS(prob_metrics({g, g}, samples), Error);
}

TEST_CASE("random baseline") {
  Rng rng(3);
  const std::vector<int> hs(4000, 3);
  const auto ps = random_baseline(hs, 5, rng);
  std::vector<int> counts(5, 0);
  for (const auto& p : ps) {
    CHECK(p.size() == 3);
    for (int a : p) ++counts.at(a);
  }
  for (int c : counts) CHECK(std::abs(c / 12000.0 - 0.2) < 0.02);

  TaskActionMap tm{{{1, 3}, {}}};
  const std::vector<int> tasks = {0, 1, 0};
  const auto lim = random_baseline({3, 3, 3}, 5, rng, &tm, &tasks);
  for (int a : lim[0]) CHECK((a == 1 || a == 3));
  for (int a : lim[2]) CHECK((a == 1 || a == 3));
  const std::vector<int> short_tasks = {0};
  CHECK_THROWS_AS(random_baseline({3, 3}, 5, rng, &tm, &short_tasks), Error);
}

TEST_CASE("retrieval baseline") {
  std::vector<PlanRecord> train = {
      {0, {1, 1, 1}, {0.0f, 0.0f}, {0.0f, 0.0f}, 0},
      {0, {2, 2, 2}, {1.0f, 0.0f}, {1.0f, 0.0f}, 1},
      {0, {3, 3, 3}, {1.0f, 0.0f}, {1.0f, 0.0f}, 2},
      {0, {4, 4, 4, 4}, {0.9f, 0.0f}, {0.9f, 0.0f}, 3},
  };
  std::vector<PlanRecord> q = {
      {0, {0, 0, 0}, {0.9f, 0.0f}, {0.9f, 0.0f}, 9},
      {0, {0, 0, 0}, {0.1f, 0.0f}, {0.0f, 0.0f}, 9},
      {0, {0, 0, 0, 0}, {0.0f, 0.0f}, {0.0f, 0.0f}, 9},
  };
  const auto ps = retrieval_baseline(train, q);
  CHECK(ps[0] == Plan{2, 2, 2});  // tie with record 2 goes to the lower index
  CHECK(ps[1] == Plan{1, 1, 1});
  CHECK(ps[2] == Plan{4, 4, 4, 4});
  q.push_back({0, {0, 0}, {0.0f, 0.0f}, {0.0f, 0.0f}, 9});
  CHECK_THROWS_AS(retrieval_baseline(train, q), Error);
}

TEST_CASE("prediction files round trip") {
  const std::vector<PredictionRow> rows = {{"12", 3, {4, 5, 6}}, {"q-7", -1, {0}}};
  const std::string text = format_predictions(rows);
  CHECK(text == "12\t3\t4,5,6\nq-7\t-1\t0\n");
  const auto back = parse_predictions("# comment\r\n" + text + "\n");
  REQUIRE(back.size() == 2);
  CHECK(back[0].query_id == "12");
  CHECK(back[0].plan == Plan{4, 5, 6});
  CHECK(back[1].task == -1);
  CHECK_THROWS_AS(parse_predictions("1\t2\n"), Error);
  CHECK_THROWS_AS(parse_predictions("1\t2\t3,x\n"), Error);
  CHECK_THROWS_AS(parse_predictions("1\t2\t\n"), Error);
}

TEST_CASE("report text carries every metric") {
  EvalReport r;
  r.seeds = {0, 1};
  HorizonReport h;
  h.horizon = 3;
  h.metrics = {0.5, 0.75, 0.625, 8};
  h.prob = ProbMetrics{1.5, 0.25, 0.8, 0.4};
  r.horizons.push_back(h);
  r.extra["T3.endpoint_SR"] = 60.0;
  const std::string t = r.to_text();
  CHECK(t.find("T3.SR = 50.000000") != std::string::npos);
  CHECK(t.find("T3.mAcc = 75.000000") != std::string::npos);
  CHECK(t.find("T3.mIoU = 62.500000") != std::string::npos);
  CHECK(t.find("T3.KL-Div = 0.250000") != std::string::npos);
  CHECK(t.find("T3.ModeRec = 40.000000") != std::string::npos);
  const auto j = nlohmann::json::parse(r.to_json());
  CHECK(j["horizons"][0]["sr"].get<double>() == 50.0);
  CHECK(j["extra"]["T3.endpoint_SR"].get<double>() == 60.0);
  CHECK(r.find(3) != nullptr);
  CHECK(r.find(4) == nullptr);
}
