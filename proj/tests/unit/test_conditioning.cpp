#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "pdpp/conditioning.hpp"
#include "pdpp/rng.hpp"

using namespace pdpp;

namespace {

Layout small_layout(TaskCond tm = TaskCond::kConcat, HorizonCond hm = HorizonCond::kConcat) {
  Layout l;
  l.horizons = {3, 4};
  l.num_tasks = 2;
  l.num_actions = 5;
  l.obs_dim = 2;
  l.task_mode = tm;
  l.horizon_mode = hm;
  return l;
}

ConditionSet cond3() {
  ConditionSet c;
  c.obs_start = {0.5f, -1.0f};
  c.obs_goal = {2.0f, 0.25f};
  c.task = 1;
  c.horizon = 3;
  return c;
}

TaskActionMap tmap() { return TaskActionMap{{{0, 1, 2}, {2, 3}}}; }

Array random_state(const Layout& l, int T, Rng& rng) {
  Array x({l.rows(), T});
  for (auto& v : x.vec()) v = static_cast<float>(rng.normal() * 3.0);
  return x;
}

}  // namespace

TEST_CASE("layout offsets") {
  const Layout l = small_layout();
  CHECK(l.d_h() == 2);
  CHECK(l.d_c() == 2);
  CHECK(l.a_offset() == 4);
  CHECK(l.o_offset() == 9);
  CHECK(l.rows() == 11);
  CHECK(small_layout(TaskCond::kMask, HorizonCond::kNone).rows() == 7);
  CHECK(small_layout(TaskCond::kNone, HorizonCond::kMoe).rows() == 7);
  CHECK(l.horizon_index(4) == 1);
  CHECK_THROWS_AS(l.horizon_index(5), Error);
  CHECK(Layout::from_json(l.to_json()) == l);
}

TEST_CASE("assemble input column contents") {
  const Layout l = small_layout();
  const int acts[] = {0, 3, 4};
  const Array x = assemble_input(acts, cond3(), l);
  // horizon one-hot (T=3 is index 0) and task one-hot in every column
  for (int t = 0; t < 3; ++t) {
    CHECK(x.at({0, t}) == 1.0f);
    CHECK(x.at({1, t}) == 0.0f);
    CHECK(x.at({2, t}) == 0.0f);
    CHECK(x.at({3, t}) == 1.0f);
  }
  CHECK(x.at({4 + 0, 0}) == 1.0f);
  CHECK(x.at({4 + 3, 1}) == 1.0f);
  CHECK(x.at({4 + 4, 2}) == 1.0f);
  CHECK(x.at({9, 0}) == 0.5f);
  CHECK(x.at({10, 0}) == -1.0f);
  CHECK(x.at({9, 2}) == 2.0f);
  CHECK(x.at({10, 2}) == 0.25f);
  CHECK(x.at({9, 1}) == 0.0f);
}

TEST_CASE("projection is idempotent and leaves action rows") {
  Rng rng(1);
  const auto tm = tmap();
  for (auto mode : {TaskCond::kConcat, TaskCond::kMask, TaskCond::kNone}) {
    const Layout l = small_layout(mode);
    for (int i = 0; i < 50; ++i) {
      ConditionSet c = cond3();
      if (i % 3 == 0) c.endpoint_actions = std::make_pair(2, 3);
      const Array x = random_state(l, 3, rng);
      const Array p = project(x, c, l, &tm);
      CHECK(project(p, c, l, &tm) == p);
      CHECK(conditions_hold(p.span(), c, l, &tm));
      CHECK_FALSE(conditions_hold(x.span(), c, l, &tm));
      // interior allowed action rows pass through
      CHECK(p.at({l.a_offset() + 2, 1}) == x.at({l.a_offset() + 2, 1}));
    }
  }
}

TEST_CASE("mask mode zeroes disallowed actions") {
  const Layout l = small_layout(TaskCond::kMask);
  const auto tm = tmap();
  Rng rng(2);
  const Array p = project(random_state(l, 3, rng), cond3(), l, &tm);
  for (int t = 0; t < 3; ++t)
    for (int a : {0, 1, 4}) CHECK(p.at({l.a_offset() + a, t}) == 0.0f);
  CHECK_THROWS_AS(project(p, cond3(), l, nullptr), Error);
}

TEST_CASE("endpoint conditions fix first and last action columns") {
  const Layout l = small_layout();
  ConditionSet c = cond3();
  c.endpoint_actions = std::make_pair(1, 4);
  Rng rng(3);
  const Array p = project(random_state(l, 3, rng), c, l);
  for (int a = 0; a < 5; ++a) {
    CHECK(p.at({l.a_offset() + a, 0}) == (a == 1 ? 1.0f : 0.0f));
    CHECK(p.at({l.a_offset() + a, 2}) == (a == 4 ? 1.0f : 0.0f));
  }
  CHECK(extract_plan(p, l, 3)[0] == 1);
  CHECK(extract_plan(p, l, 3)[2] == 4);
}

TEST_CASE("projection operator agrees with projection") {
  const auto tm = tmap();
  Rng rng(4);
  for (auto mode : {TaskCond::kConcat, TaskCond::kMask}) {
    const Layout l = small_layout(mode);
    ConditionSet c = cond3();
    c.endpoint_actions = std::make_pair(2, 2);
    const auto op = projection_operator(c, l, &tm);
    const Array x = random_state(l, 3, rng);
    Array y = x;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * op.mask[i] + op.fill[i];
    CHECK(y == project(x, c, l, &tm));
  }
}

TEST_CASE("unconditional keeps only the horizon") {
  ConditionSet c = cond3();
  c.endpoint_actions = std::make_pair(0, 1);
  const ConditionSet u = unconditional(c);
  CHECK(u.task == -1);
  CHECK(u.horizon == 3);
  CHECK(u.obs_start == std::vector<float>{0.0f, 0.0f});
  CHECK(!u.endpoint_actions);
  const Layout l = small_layout();
  Rng rng(5);
  const Array p = project(random_state(l, 3, rng), u, l);
  CHECK(p.at({0, 0}) == 1.0f);
  CHECK(p.at({2, 0}) == 0.0f);
  CHECK(p.at({3, 0}) == 0.0f);
}

TEST_CASE("extract plan ties and restrictions") {
  const Layout l = small_layout(TaskCond::kNone, HorizonCond::kNone);
  Array x({l.rows(), 3});
  x.at({0, 0}) = 1.0f;
  x.at({3, 0}) = 1.0f;  // tie -> lowest index
  x.at({4, 1}) = 2.0f;
  x.at({2, 1}) = 1.0f;
  x.at({1, 2}) = 0.5f;
  CHECK(extract_plan(x, l, 3) == std::vector<int>{0, 4, 1});
  const std::vector<char> allowed = {0, 0, 1, 1, 0};
  CHECK(extract_plan(x, l, 3, &allowed) == std::vector<int>{3, 2, 2});
  const std::vector<char> none(5, 0);
  CHECK(extract_plan(x, l, 3, &none) == std::vector<int>{0, 4, 1});
}

TEST_CASE("loss weight matrix") {
  const Layout l = small_layout();
  const Array w = weight_matrix(l, 4, 10.0);
  CHECK(w.shape() == Shape{11, 4});
  CHECK(w.at({0, 0}) == 0.0f);
  CHECK(w.at({4, 0}) == 10.0f);
  CHECK(w.at({4, 1}) == 1.0f);
  CHECK(w.at({8, 3}) == 10.0f);
  CHECK(w.at({9, 0}) == 0.0f);
  CHECK_THROWS_AS(weight_matrix(l, 4, 0.5), Error);
}

TEST_CASE("condition validation") {
  const Layout l = small_layout();
  ConditionSet c = cond3();
  c.obs_start = {1.0f};
  CHECK_THROWS_AS(project(Array({l.rows(), 3}), c, l), Error);
  c = cond3();
  c.task = 7;
  CHECK_THROWS_AS(project(Array({l.rows(), 3}), c, l), Error);
  c = cond3();
  c.horizon = 5;
  CHECK_THROWS_AS(project(Array({l.rows(), 5}), c, l), Error);
  CHECK_THROWS_AS(project(Array({l.rows(), 4}), cond3(), l), Error);
}
