#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "pdpp/data.hpp"
#include "pdpp/denoiser.hpp"
#include "pdpp/optim.hpp"
#include "pdpp/schedule.hpp"

namespace pdpp {

struct TrainConfig {
  int diffusion_steps = 200;
  std::string schedule = "cosine";
  int steps = 5000;
  int batch_size = 32;
  int warmup_steps = 500;
  double lr_peak = 5e-4;
  std::vector<int> milestones;
  double decay = 0.5;
  double endpoint_weight = 10.0;
  std::vector<int> horizons = {3};
  TaskCond task_mode = TaskCond::kConcat;
  HorizonCond horizon_mode = HorizonCond::kConcat;
  double cfg_dropout = 0.0;
  // Two-stage interior model: ground-truth endpoints are projected.
  bool endpoint_conditioned = false;
  bool vpa = false;
  std::uint64_t seed = 0;

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

// "desk", "crosstask_base", "crosstask_how", "crosstask_how_joint", "niv", "coin".
TrainConfig train_preset(const std::string& name);

// Linear ramp 0 -> peak over warmup, then multiplied by `decay` at each
// milestone reached.
double lr_at(int step, const TrainConfig& cfg);

// With probability p returns unconditional(cond), else cond.
ConditionSet cfg_dropout(const ConditionSet& cond, double p, Rng& rng);

// Layout implied by a dataset and a training configuration.
Layout make_layout(const Dataset& data, const TrainConfig& cfg);

// Condition of a training record: ground-truth task, optional ground-truth
// endpoints, goal observation zeroed under VPA.
ConditionSet training_condition(const PlanRecord& r, const TrainConfig& cfg);

struct StepDiagnostics {
  std::vector<int> diffusion_steps;
  double max_abs_output = 0.0;
};

// Algorithm 1 with per-horizon sub-batches: every sub-batch contributes its
// gradient and one optimizer update follows.
class Trainer {
 public:
  Trainer(Denoiser<float>& model, const TrainConfig& cfg, const TaskActionMap* task_map);

  // One global step; batches[h] holds the records of one horizon. Returns the
  // mean loss over sub-batches.
  double step(const std::vector<std::vector<const PlanRecord*>>& batches);
  // Loss of one sub-batch without touching gradients or the optimizer.
  double evaluate_loss(const std::vector<const PlanRecord*>& batch, Rng& rng) const;

  int steps_done() const { return step_; }
  const NoiseSchedule& schedule() const { return sched_; }
  Rng& rng() { return rng_; }

 private:
  double accumulate(const std::vector<const PlanRecord*>& batch, Rng& rng, bool backward,
                    StepDiagnostics* diag) const;

  Denoiser<float>& model_;
  TrainConfig cfg_;
  const TaskActionMap* task_map_;
  NoiseSchedule sched_;
  Adam<float> opt_;
  Rng rng_;
  int step_ = 0;
};

struct TrainReport {
  std::vector<double> losses;
  double final_loss = 0.0;  // mean of the last min(100, steps) losses
  std::size_t parameter_count = 0;
};

using ProgressFn = std::function<void(int step, double loss, double lr)>;

// Trains over all cfg.horizons jointly (a single horizon is the separate
// case). Every horizon must have records.
TrainReport train_model(Denoiser<float>& model, const Dataset& data, const TrainConfig& cfg,
                        const ProgressFn& progress = nullptr);

// Records reduced to their endpoint actions {a_1, a_T} for one source horizon.
Dataset endpoint_dataset(const Dataset& data, int horizon);
// Two-column model: UNet variants use their first two level widths.
DenoiserConfig endpoint_model_config(Variant variant, const Dataset& endpoints, const TrainConfig& cfg);
TrainConfig endpoint_train_config(const TrainConfig& cfg);

}  // namespace pdpp
