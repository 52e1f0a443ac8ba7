#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pdpp/denoiser.hpp"
#include "pdpp/schedule.hpp"

namespace pdpp {

enum class SamplerMethod { kDdpm, kDdim };
// kDeterministic: one model call at n = N on x_N = 0. kNoise: one model call
// at n = N on x_N ~ N(0, I).
enum class BaselineMode { kNone, kDeterministic, kNoise };

std::string to_string(SamplerMethod m);
std::string to_string(BaselineMode m);
SamplerMethod parse_sampler_method(const std::string& s);
BaselineMode parse_baseline_mode(const std::string& s);

struct SamplerConfig {
  SamplerMethod method = SamplerMethod::kDdim;
  int ddim_steps = 10;
  double eta = 0.0;
  // Guidance weight; unset samples the conditional model only.
  std::optional<double> cfg_lambda;
  BaselineMode baseline = BaselineMode::kNone;
  int samples_per_query = 1;
  std::uint64_t seed = 0;
  // Chains evaluated per model call.
  int batch = 256;

  void validate(int diffusion_steps) const;
};

// Called once per sampler iteration with the projected state of every chain
// ([chains, rows, T] row-major) and the diffusion step it is evaluated at.
using SamplerObserver = std::function<void(int step, std::span<const float> state, int chains)>;

struct ChainResult {
  std::vector<int> plan;
  Array x0;  // [rows, T]
};

// Runs one chain per condition; all conditions share one horizon. Chain i
// draws every random number from Rng(cfg.seed).substream(keys[i]), so results
// do not depend on how chains are batched.
std::vector<ChainResult> sample_chains(const Denoiser<float>& model, const std::vector<ConditionSet>& conds,
                                       const std::vector<std::uint64_t>& keys, const NoiseSchedule& sched,
                                       const SamplerConfig& cfg, const TaskActionMap* task_map = nullptr,
                                       const SamplerObserver* observer = nullptr);

ChainResult sample_plan(const Denoiser<float>& model, const ConditionSet& cond, const NoiseSchedule& sched,
                        const SamplerConfig& cfg, const TaskActionMap* task_map = nullptr, std::uint64_t key = 0,
                        const SamplerObserver* observer = nullptr);

// `count` independent chains (keys 0..count-1) for one query.
std::vector<std::vector<int>> sample_many(const Denoiser<float>& model, const ConditionSet& cond, int count,
                                          const NoiseSchedule& sched, const SamplerConfig& cfg,
                                          const TaskActionMap* task_map = nullptr);

// x0 predictions for projected states x [B, rows, T] at step n. With lambda
// set: (1 + lambda) * f(x, c) - lambda * f(x_u, 0), where x_u carries zeroed
// condition rows.
Array predict_x0(const Denoiser<float>& model, const Array& x, int n, const std::vector<ConditionSet>& conds,
                 std::optional<double> lambda, const TaskActionMap* task_map = nullptr);

struct TwoStageResult {
  std::vector<int> endpoints;  // stage-1 plan {a_1, a_T}
  std::vector<int> plan;
};

// Stage 1 samples {a_1, a_T} with the two-column model; stage 2 projects them
// as endpoint conditions. The stages draw from independent substreams.
std::vector<TwoStageResult> two_stage_plans(const Denoiser<float>& endpoint_model,
                                            const Denoiser<float>& interior_model,
                                            const std::vector<ConditionSet>& conds,
                                            const std::vector<std::uint64_t>& keys, const NoiseSchedule& sched,
                                            const SamplerConfig& cfg, const TaskActionMap* task_map = nullptr);

}  // namespace pdpp
