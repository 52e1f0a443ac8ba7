#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pdpp/classifier.hpp"
#include "pdpp/evaluation.hpp"
#include "pdpp/sampling.hpp"
#include "pdpp/training.hpp"

namespace pdpp {

struct EvalOptions {
  SamplerConfig sampler;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  // Ground-truth task instead of the classifier's prediction.
  bool gt_task = false;
  bool vpa = false;
  int miou_batch = 1;
  // Probabilistic metrics over query groups with `prob_samples` chains each.
  bool probabilistic = false;
  int prob_samples = 1500;
  int max_groups = 0;  // 0 = all groups
  // Restrict to these horizons (empty = every horizon the model supports).
  std::vector<int> horizons;

  std::string to_json() const;
  static EvalOptions from_json(const std::string& text);
};

struct ModelBundle {
  const Denoiser<float>* model = nullptr;
  const Denoiser<float>* endpoint_model = nullptr;  // enables two-stage planning
  const TaskClassifier* classifier = nullptr;
  const TaskActionMap* task_map = nullptr;
};

// Task ids fed to the condition: ground truth, classifier output, or -1 when
// the model carries no task condition.
std::vector<int> inference_tasks(const ModelBundle& bundle, const std::vector<PlanRecord>& records, bool gt_task);

struct SeedPredictions {
  std::uint64_t seed = 0;
  std::vector<Plan> plans;
  std::vector<Plan> endpoints;  // two-stage only
};

struct HorizonPredictions {
  int horizon = 0;
  std::vector<std::size_t> record_index;
  std::vector<int> tasks;
  std::vector<SeedPredictions> seeds;
};

// Samples one plan per record and seed.
std::vector<HorizonPredictions> predict(const ModelBundle& bundle, const Dataset& data, const EvalOptions& opts);

// Metrics averaged over seeds; probabilistic metrics when requested.
EvalReport evaluate_model(const ModelBundle& bundle, const Dataset& data, const EvalOptions& opts,
                          std::vector<PredictionRow>* first_seed_predictions = nullptr);

// Re-scores a prediction dump against a dataset; query ids are record indices.
EvalReport evaluate_predictions(const Dataset& data, const std::vector<PredictionRow>& rows, int miou_batch = 1);

struct ModelOptions {
  Variant variant = Variant::kUnet;
  bool full_scale = false;
  std::optional<MoeConfig> moe;
  std::vector<int> widths;  // empty = preset
  int heads = 0;            // 0 = preset
};

std::unique_ptr<Denoiser<float>> build_model(const Dataset& train, const TrainConfig& tc, const ModelOptions& mo);

struct PipelineConfig {
  SyntheticConfig data;
  double split_ratio = 0.7;
  ClassifierTrainConfig classifier;
  TrainConfig train;
  ModelOptions model;
  bool two_stage = false;
  EvalOptions eval;
  std::uint64_t seed = 0;

  // Propagates `seed` into every stage.
  void apply_seed(std::uint64_t s);
  std::string to_json() const;
  static PipelineConfig from_json(const std::string& text);
};

struct PipelineResult {
  EvalReport report;
  std::vector<PredictionRow> predictions;  // first seed
  ClassifierReport classifier;
  TrainReport train;
  std::optional<TrainReport> endpoint_train;
  Dataset train_data;
  Dataset test_data;
  std::unique_ptr<TaskClassifier> classifier_model;
  std::unique_ptr<Denoiser<float>> model;
  std::unique_ptr<Denoiser<float>> endpoint_model;
};

// gen-data -> train-classifier -> train (-> endpoint model) -> sample -> eval.
PipelineResult run_pipeline(const PipelineConfig& cfg, const ProgressFn& progress = nullptr);

std::string model_options_json(const ModelOptions& mo);
ModelOptions model_options_from_json(const std::string& text);

}  // namespace pdpp
