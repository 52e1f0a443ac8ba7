#include "pdpp/sampling.hpp"

#include <algorithm>
#include <cmath>

namespace pdpp {

std::string to_string(SamplerMethod m) { return m == SamplerMethod::kDdpm ? "ddpm" : "ddim"; }

std::string to_string(BaselineMode m) {
  switch (m) {
    case BaselineMode::kNone: return "none";
    case BaselineMode::kDeterministic: return "deterministic";
    case BaselineMode::kNoise: return "noise";
  }
  return "none";
}

SamplerMethod parse_sampler_method(const std::string& s) {
  if (s == "ddpm") return SamplerMethod::kDdpm;
  if (s == "ddim") return SamplerMethod::kDdim;
  fail(ErrorCode::kInvalidArgument, "unknown sampler '" + s + "' (ddpm|ddim)");
}

BaselineMode parse_baseline_mode(const std::string& s) {
  if (s == "none") return BaselineMode::kNone;
  if (s == "deterministic") return BaselineMode::kDeterministic;
  if (s == "noise") return BaselineMode::kNoise;
  fail(ErrorCode::kInvalidArgument, "unknown baseline mode '" + s + "' (none|deterministic|noise)");
}

void SamplerConfig::validate(int diffusion_steps) const {
  if (method == SamplerMethod::kDdim)
    require(ddim_steps >= 1 && ddim_steps <= diffusion_steps, ErrorCode::kInvalidArgument,
            "ddim steps " + std::to_string(ddim_steps) + " must lie in [1, " + std::to_string(diffusion_steps) + "]");
  require(eta >= 0.0, ErrorCode::kInvalidArgument, "ddim eta must be >= 0");
  if (cfg_lambda) require(*cfg_lambda >= -1.0, ErrorCode::kInvalidArgument, "guidance lambda must be >= -1");
  require(samples_per_query >= 1, ErrorCode::kInvalidArgument, "samples per query must be >= 1");
  require(batch >= 1, ErrorCode::kInvalidArgument, "sampling batch must be >= 1");
}

Array predict_x0(const Denoiser<float>& model, const Array& x, int n, const std::vector<ConditionSet>& conds,
                 std::optional<double> lambda, const TaskActionMap* task_map) {
  const int B = x.dim(0), R = x.dim(1), T = x.dim(2);
  require(static_cast<int>(conds.size()) == B, ErrorCode::kShapeMismatch, "one condition per chain required");
  if (!lambda) {
    const std::vector<int> steps(B, n);
    return model.denoise(x, steps);
  }
  const std::size_t per = static_cast<std::size_t>(R) * T;
  Array both({2 * B, R, T});
  std::copy(x.data(), x.data() + x.size(), both.data());
  for (int b = 0; b < B; ++b) {
    std::span<float> u(both.data() + (B + b) * per, per);
    std::copy(x.data() + b * per, x.data() + (b + 1) * per, u.begin());
    project_into(u, unconditional(conds[b]), model.config().layout, task_map);
  }
  const std::vector<int> steps(2 * B, n);
  const Array out = model.denoise(both, steps);
  const double wc = 1.0 + *lambda, wu = -*lambda;
  Array guided({B, R, T});
  for (std::size_t i = 0; i < guided.size(); ++i)
    guided[i] = static_cast<float>(wc * out[i] + wu * out[guided.size() + i]);
  return guided;
}

namespace {

void fill_normal(Rng& rng, float* dst, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<float>(rng.normal());
}

void run_chunk(const Denoiser<float>& model, const std::vector<ConditionSet>& conds, std::vector<Rng>& rngs,
               const NoiseSchedule& sched, const SamplerConfig& cfg, const TaskActionMap* task_map,
               const SamplerObserver* observer, std::vector<ChainResult>& out) {
  const Layout& layout = model.config().layout;
  const int C = static_cast<int>(conds.size());
  const int R = layout.rows();
  const int T = conds.front().horizon;
  const std::size_t per = static_cast<std::size_t>(R) * T;
  const int N = sched.steps();
  Array x({C, R, T});
  if (cfg.baseline != BaselineMode::kDeterministic)
    for (int c = 0; c < C; ++c) fill_normal(rngs[c], x.data() + c * per, per);

  auto chain = [&](Array& a, int c) { return std::span<float>(a.data() + c * per, per); };
  auto project_all = [&](Array& a) {
    for (int c = 0; c < C; ++c) project_into(chain(a, c), conds[c], layout, task_map);
  };
  auto observe = [&](int n) {
    for (int c = 0; c < C; ++c)
      if (!conditions_hold(chain(x, c), conds[c], layout, task_map))
        fail(ErrorCode::kInternal, "condition rows of chain " + std::to_string(c) + " differ from the condition at step " +
                                       std::to_string(n));
    if (observer && *observer) (*observer)(n, x.span(), C);
  };
  auto predict = [&](int n) {
    Array x0 = predict_x0(model, x, n, conds, cfg.cfg_lambda, task_map);
    project_all(x0);
    return x0;
  };

  Array x0;
  if (cfg.baseline != BaselineMode::kNone) {
    project_all(x);
    observe(N);
    x0 = predict(N);
  } else if (cfg.method == SamplerMethod::kDdpm) {
    std::vector<float> z(per);
    for (int n = N; n >= 1; --n) {
      project_all(x);
      observe(n);
      x0 = predict(n);
      if (n == 1) break;
      const auto pc = posterior_coefficients(n, sched);
      const double sd = std::sqrt(pc.variance);
      for (int c = 0; c < C; ++c) {
        fill_normal(rngs[c], z.data(), per);
        float* xs = x.data() + c * per;
        const float* x0s = x0.data() + c * per;
        for (std::size_t i = 0; i < per; ++i)
          xs[i] = static_cast<float>(pc.x0_coef * x0s[i] + pc.xn_coef * xs[i] + sd * z[i]);
      }
    }
  } else {
    const std::vector<int> ts = ddim_timesteps(N, cfg.ddim_steps);
    std::vector<float> z(per);
    for (int k = static_cast<int>(ts.size()) - 1; k >= 0; --k) {
      const int tn = ts[k], tp = k > 0 ? ts[k - 1] : 0;
      project_all(x);
      observe(tn);
      x0 = predict(tn);
      const bool noisy = tp > 0 && ddim_sigma(tn, tp, cfg.eta, sched) > 0.0;
      for (int c = 0; c < C; ++c) {
        if (noisy) fill_normal(rngs[c], z.data(), per);
        std::span<float> xs = chain(x, c);
        const std::vector<float> cur(xs.begin(), xs.end());
        ddim_step_into(std::span<const float>(x0.data() + c * per, per), cur, tn, tp, cfg.eta, sched, z, xs);
      }
    }
  }

  for (int c = 0; c < C; ++c) {
    ChainResult r;
    r.x0 = Array({R, T}, std::vector<float>(x0.data() + c * per, x0.data() + (c + 1) * per));
    std::vector<char> allowed;
    const bool masked = layout.task_mode == TaskCond::kMask && conds[c].task >= 0 && task_map;
    if (masked) allowed = task_map->allowed(conds[c].task, layout.d_a());
    r.plan = extract_plan(r.x0, layout, T, masked ? &allowed : nullptr);
    out.push_back(std::move(r));
  }
}

}  // namespace

std::vector<ChainResult> sample_chains(const Denoiser<float>& model, const std::vector<ConditionSet>& conds,
                                       const std::vector<std::uint64_t>& keys, const NoiseSchedule& sched,
                                       const SamplerConfig& cfg, const TaskActionMap* task_map,
                                       const SamplerObserver* observer) {
  require(conds.size() == keys.size(), ErrorCode::kInvalidArgument, "one rng key per chain required");
  require(sched.steps() == model.config().diffusion_steps, ErrorCode::kInvalidArgument,
          "schedule has " + std::to_string(sched.steps()) + " steps, model expects " +
              std::to_string(model.config().diffusion_steps));
  cfg.validate(sched.steps());
  std::vector<ChainResult> out;
  if (conds.empty()) return out;
  const int T = conds.front().horizon;
  for (const auto& c : conds)
    require(c.horizon == T, ErrorCode::kInvalidArgument, "all chains of one call must share a horizon");
  model.config().layout.horizon_index(T);
  out.reserve(conds.size());
  const Rng root(cfg.seed);
  for (std::size_t s = 0; s < conds.size(); s += static_cast<std::size_t>(cfg.batch)) {
    const std::size_t e = std::min(conds.size(), s + static_cast<std::size_t>(cfg.batch));
    std::vector<ConditionSet> chunk(conds.begin() + s, conds.begin() + e);
    std::vector<Rng> rngs;
    for (std::size_t i = s; i < e; ++i) rngs.push_back(root.substream(keys[i]));
    run_chunk(model, chunk, rngs, sched, cfg, task_map, observer, out);
  }
  return out;
}

ChainResult sample_plan(const Denoiser<float>& model, const ConditionSet& cond, const NoiseSchedule& sched,
                        const SamplerConfig& cfg, const TaskActionMap* task_map, std::uint64_t key,
                        const SamplerObserver* observer) {
  return std::move(sample_chains(model, {cond}, {key}, sched, cfg, task_map, observer).front());
}

std::vector<std::vector<int>> sample_many(const Denoiser<float>& model, const ConditionSet& cond, int count,
                                          const NoiseSchedule& sched, const SamplerConfig& cfg,
                                          const TaskActionMap* task_map) {
  require(count >= 1, ErrorCode::kInvalidArgument, "sample count must be >= 1");
  std::vector<ConditionSet> conds(count, cond);
  std::vector<std::uint64_t> keys(count);
  for (int i = 0; i < count; ++i) keys[i] = static_cast<std::uint64_t>(i);
  std::vector<std::vector<int>> plans;
  for (auto& r : sample_chains(model, conds, keys, sched, cfg, task_map)) plans.push_back(std::move(r.plan));
  return plans;
}

std::vector<TwoStageResult> two_stage_plans(const Denoiser<float>& endpoint_model,
                                            const Denoiser<float>& interior_model,
                                            const std::vector<ConditionSet>& conds,
                                            const std::vector<std::uint64_t>& keys, const NoiseSchedule& sched,
                                            const SamplerConfig& cfg, const TaskActionMap* task_map) {
  std::vector<ConditionSet> first;
  for (const auto& c : conds) {
    require(!c.endpoint_actions, ErrorCode::kInvalidArgument, "two-stage planning starts without endpoint actions");
    ConditionSet e = c;
    e.horizon = 2;
    first.push_back(std::move(e));
  }
  SamplerConfig c1 = cfg, c2 = cfg;
  c1.seed = splitmix64(cfg.seed ^ 0x5354414745310000ULL);
  c2.seed = splitmix64(cfg.seed ^ 0x5354414745320000ULL);
  const auto ends = sample_chains(endpoint_model, first, keys, sched, c1, task_map);
  std::vector<ConditionSet> second = conds;
  for (std::size_t i = 0; i < second.size(); ++i)
    second[i].endpoint_actions = std::make_pair(ends[i].plan.front(), ends[i].plan.back());
  const auto full = sample_chains(interior_model, second, keys, sched, c2, task_map);
  std::vector<TwoStageResult> out;
  for (std::size_t i = 0; i < conds.size(); ++i) out.push_back({ends[i].plan, full[i].plan});
  return out;
}

}  // namespace pdpp
