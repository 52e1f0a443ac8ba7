#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <map>

#include "pdpp/sampling.hpp"

using namespace pdpp;

namespace {

Layout layout(TaskCond tm = TaskCond::kConcat) {
  Layout l;
  l.horizons = {3, 4};
  l.num_tasks = 3;
  l.num_actions = 6;
  l.obs_dim = 4;
  l.task_mode = tm;
  return l;
}

DenoiserConfig tiny(Layout l = layout()) {
  DenoiserConfig c;
  c.layout = std::move(l);
  c.widths = {8, 16};
  c.groups = 4;
  c.diffusion_steps = 20;
  c.seed = 3;
  return c;
}

TaskActionMap tmap() { return TaskActionMap{{{0, 1, 2}, {2, 3, 4}, {4, 5, 0}}}; }

std::vector<ConditionSet> queries(int n, int T, std::uint64_t seed) {
  Rng r(seed);
  std::vector<ConditionSet> out;
  for (int i = 0; i < n; ++i) {
    ConditionSet c;
    for (int d = 0; d < 4; ++d) {
      c.obs_start.push_back(static_cast<float>(r.normal()));
      c.obs_goal.push_back(static_cast<float>(r.normal()));
    }
    c.task = r.uniform_int(0, 2);
    c.horizon = T;
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<std::uint64_t> iota_keys(std::size_t n) {
  std::vector<std::uint64_t> k(n);
  for (std::size_t i = 0; i < n; ++i) k[i] = i;
  return k;
}

}  // namespace

TEST_CASE("sampler names") {
  CHECK(parse_sampler_method("ddpm") == SamplerMethod::kDdpm);
  CHECK(parse_baseline_mode("noise") == BaselineMode::kNoise);
  CHECK(to_string(BaselineMode::kDeterministic) == "deterministic");
  CHECK_THROWS_AS(parse_sampler_method("euler"), Error);
}

TEST_CASE("chains are independent of batching and order") {
  Denoiser<float> m(tiny());
  const auto sched = make_schedule("cosine", 20);
  const auto qs = queries(7, 3, 1);
  const auto keys = iota_keys(qs.size());
  for (auto method : {SamplerMethod::kDdim, SamplerMethod::kDdpm}) {
    SamplerConfig cfg;
    cfg.method = method;
    cfg.ddim_steps = 5;
    cfg.eta = method == SamplerMethod::kDdim ? 0.5 : 0.0;
    cfg.batch = 7;
    const auto all = sample_chains(m, qs, keys, sched, cfg);
    cfg.batch = 2;
    const auto chunked = sample_chains(m, qs, keys, sched, cfg);
    for (std::size_t i = 0; i < qs.size(); ++i) CHECK(all[i].x0 == chunked[i].x0);
    // a single chain with the same key reproduces its batched result
    const auto one = sample_plan(m, qs[4], sched, cfg, nullptr, 4);
    CHECK(one.x0 == all[4].x0);
    cfg.seed = 1;
    const auto other = sample_chains(m, qs, keys, sched, cfg);
    bool differs = false;
    for (std::size_t i = 0; i < qs.size(); ++i) differs |= !(other[i].x0 == all[i].x0);
    CHECK(differs);
  }
}

TEST_CASE("every iteration holds the conditions") {
  const auto tm = tmap();
  for (auto mode : {TaskCond::kConcat, TaskCond::kMask}) {
    Denoiser<float> m(tiny(layout(mode)));
    const auto sched = make_schedule("cosine", 20);
    auto qs = queries(5, 4, 2);
    qs[1].endpoint_actions = std::make_pair(2, 3);
    for (auto method : {SamplerMethod::kDdim, SamplerMethod::kDdpm}) {
      SamplerConfig cfg;
      cfg.method = method;
      int calls = 0;
      SamplerObserver obs = [&](int, std::span<const float> state, int chains) {
        ++calls;
        const std::size_t per = state.size() / chains;
        for (int c = 0; c < chains; ++c)
          CHECK(conditions_hold(state.subspan(c * per, per), qs[c], m.config().layout, &tm));
      };
      const auto rs = sample_chains(m, qs, iota_keys(qs.size()), sched, cfg, &tm, &obs);
      CHECK(calls == (method == SamplerMethod::kDdim ? 10 : 20));
      CHECK(rs[1].plan.front() == 2);
      CHECK(rs[1].plan.back() == 3);
      if (mode == TaskCond::kMask)
        for (std::size_t i = 0; i < qs.size(); ++i)
          for (int a : rs[i].plan) {
            const auto& allowed = tm.actions[qs[i].task];
            const bool endpoint_fixed = i == 1;
            if (!endpoint_fixed) CHECK(std::find(allowed.begin(), allowed.end(), a) != allowed.end());
          }
    }
  }
}

TEST_CASE("guidance scale 0 is conditional sampling, -1 is unconditional") {
  Denoiser<float> m(tiny());
  const auto sched = make_schedule("cosine", 20);
  const auto qs = queries(4, 3, 3);
  SamplerConfig plain;
  plain.eta = 1.0;
  SamplerConfig zero = plain;
  zero.cfg_lambda = 0.0;
  const auto a = sample_chains(m, qs, iota_keys(4), sched, plain);
  const auto b = sample_chains(m, qs, iota_keys(4), sched, zero);
  for (int i = 0; i < 4; ++i) CHECK(a[i].x0 == b[i].x0);

  Array x({4, m.config().layout.rows(), 3});
  Rng r(5);
  for (auto& v : x.vec()) v = static_cast<float>(r.normal());
  const std::size_t per = x.size() / 4;
  for (int i = 0; i < 4; ++i) project_into(std::span<float>(x.data() + i * per, per), qs[i], m.config().layout);
  const Array neg = predict_x0(m, x, 7, qs, -1.0, nullptr);
  Array u = x;
  for (int i = 0; i < 4; ++i)
    project_into(std::span<float>(u.data() + i * per, per), unconditional(qs[i]), m.config().layout);
  const std::vector<int> steps(4, 7);
  CHECK(neg == m.denoise(u, steps));
  CHECK(predict_x0(m, x, 7, qs, 0.0, nullptr) == m.denoise(x, steps));
}

TEST_CASE("baselines") {
  Denoiser<float> m(tiny());
  const auto sched = make_schedule("cosine", 20);
  const auto qs = queries(3, 3, 4);
  SamplerConfig det;
  det.baseline = BaselineMode::kDeterministic;
  int calls = 0;
  SamplerObserver obs = [&](int n, std::span<const float>, int) {
    ++calls;
    CHECK(n == 20);
  };
  const auto d0 = sample_chains(m, qs, iota_keys(3), sched, det, nullptr, &obs);
  CHECK(calls == 1);
  det.seed = 9;
  const auto d1 = sample_chains(m, qs, iota_keys(3), sched, det);
  for (int i = 0; i < 3; ++i) CHECK(d0[i].x0 == d1[i].x0);

  SamplerConfig noise;
  noise.baseline = BaselineMode::kNoise;
  const auto n0 = sample_chains(m, qs, iota_keys(3), sched, noise);
  noise.seed = 9;
  const auto n1 = sample_chains(m, qs, iota_keys(3), sched, noise);
  CHECK_FALSE(n0[0].x0 == n1[0].x0);
}

TEST_CASE("sample_many draws distinct chains") {
  Denoiser<float> m(tiny());
  const auto sched = make_schedule("cosine", 20);
  SamplerConfig cfg;
  cfg.eta = 1.0;
  const auto q = queries(1, 3, 6)[0];
  const auto many = sample_many(m, q, 16, sched, cfg);
  CHECK(many.size() == 16);
  const auto again = sample_many(m, q, 16, sched, cfg);
  CHECK(many == again);
  CHECK_THROWS_AS(sample_many(m, q, 0, sched, cfg), Error);
}

TEST_CASE("ddpm and full-length ddim with eta 1 sample the same plan distribution") {
  Denoiser<float> m(tiny());
  const auto sched = make_schedule("cosine", 20);
  const auto q = queries(1, 3, 10)[0];
  SamplerConfig ddpm;
  ddpm.method = SamplerMethod::kDdpm;
  ddpm.seed = 1;
  SamplerConfig ddim;
  ddim.ddim_steps = 20;
  ddim.eta = 1.0;
  ddim.seed = 2;
  const int n = 3000;
  std::map<std::vector<int>, std::pair<double, double>> cells;
  for (const auto& p : sample_many(m, q, n, sched, ddpm)) cells[p].first += 1;
  for (const auto& p : sample_many(m, q, n, sched, ddim)) cells[p].second += 1;
  // homogeneity test; cells with expected count < 5 are pooled
  std::vector<std::pair<double, double>> table;
  std::pair<double, double> pooled{0, 0};
  for (const auto& [plan, c] : cells) {
    if ((c.first + c.second) / 2 < 5) {
      pooled.first += c.first;
      pooled.second += c.second;
    } else {
      table.push_back(c);
    }
  }
  if (pooled.first + pooled.second > 0) table.push_back(pooled);
  REQUIRE(table.size() >= 2);
  double chi2 = 0;
  for (const auto& [a, b] : table) {
    const double e = (a + b) / 2;
    chi2 += (a - e) * (a - e) / e + (b - e) * (b - e) / e;
  }
  const double df = static_cast<double>(table.size() - 1);
  // Wilson-Hilferty 99th percentile
  const double k = 2.0 / (9.0 * df);
  const double crit = df * std::pow(1.0 - k + 2.3263 * std::sqrt(k), 3);
  CAPTURE(table.size());
  CAPTURE(chi2);
  CHECK(chi2 < crit);
}

TEST_CASE("two-stage planning feeds stage one endpoints") {
  Layout el = layout();
  el.horizons = {2};
  el.horizon_mode = HorizonCond::kNone;
  DenoiserConfig ec = tiny(el);
  ec.widths = {8, 16};
  Denoiser<float> ends(ec);
  Denoiser<float> inner(tiny());
  const auto sched = make_schedule("cosine", 20);
  const auto qs = queries(5, 4, 7);
  SamplerConfig cfg;
  const auto rs = two_stage_plans(ends, inner, qs, iota_keys(5), sched, cfg);
  REQUIRE(rs.size() == 5);
  for (const auto& r : rs) {
    CHECK(r.endpoints.size() == 2);
    CHECK(r.plan.size() == 4);
    CHECK(r.plan.front() == r.endpoints.front());
    CHECK(r.plan.back() == r.endpoints.back());
  }
  auto with_ends = qs;
  with_ends[0].endpoint_actions = std::make_pair(0, 1);
  CHECK_THROWS_AS(two_stage_plans(ends, inner, with_ends, iota_keys(5), sched, cfg), Error);
}

TEST_CASE("sampler argument checks") {
  Denoiser<float> m(tiny());
  const auto qs = queries(2, 3, 8);
  SamplerConfig cfg;
  CHECK_THROWS_AS(sample_chains(m, qs, iota_keys(2), make_schedule("cosine", 10), cfg), Error);
  cfg.ddim_steps = 21;
  CHECK_THROWS_AS(sample_chains(m, qs, iota_keys(2), make_schedule("cosine", 20), cfg), Error);
  cfg.ddim_steps = 10;
  CHECK_THROWS_AS(sample_chains(m, qs, iota_keys(1), make_schedule("cosine", 20), cfg), Error);
  auto mixed = qs;
  mixed[1].horizon = 4;
  CHECK_THROWS_AS(sample_chains(m, mixed, iota_keys(2), make_schedule("cosine", 20), cfg), Error);
  cfg.cfg_lambda = -2.0;
  CHECK_THROWS_AS(sample_chains(m, qs, iota_keys(2), make_schedule("cosine", 20), cfg), Error);
}
