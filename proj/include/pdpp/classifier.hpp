#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "pdpp/data.hpp"
#include "pdpp/layers.hpp"

namespace pdpp {

struct ClassifierConfig {
  int obs_dim = 0;
  int num_tasks = 0;
  int hidden = 128;
  std::uint64_t seed = 0;

  std::string to_json() const;
  static ClassifierConfig from_json(const std::string& text);
};

struct ClassifierTrainConfig {
  int epochs = 30;
  int batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct Classification {
  std::vector<float> logits;
  int predicted = 0;
};

// MLP over concat(o_s, o_g): 2*d_o -> hidden -> hidden -> K with Mish.
class TaskClassifier {
 public:
  explicit TaskClassifier(const ClassifierConfig& cfg);

  const ClassifierConfig& config() const { return cfg_; }
  ParameterStore<float>& params() { return store_; }
  const ParameterStore<float>& params() const { return store_; }

  // features [B, 2*d_o] -> logits [B, K]
  Var forward(Graph<float>& g, Var features) const;
  Classification classify(const std::vector<float>& obs_start, const std::vector<float>& obs_goal) const;
  std::vector<int> predict(const std::vector<PlanRecord>& records) const;

 private:
  ClassifierConfig cfg_;
  ParameterStore<float> store_;
  Linear<float> fc1_, fc2_, fc3_;
};

struct ClassifierReport {
  double initial_loss = 0.0;
  std::vector<double> epoch_loss;
  double train_accuracy = 0.0;
  double test_accuracy = -1.0;  // -1 without a held-out split
};

ClassifierReport train_classifier(TaskClassifier& clf, const Dataset& train, const Dataset* test,
                                  const ClassifierTrainConfig& cfg);
double classifier_accuracy(const TaskClassifier& clf, const std::vector<PlanRecord>& records);

void save_classifier(const std::string& path, const TaskClassifier& clf);
std::unique_ptr<TaskClassifier> load_classifier(const std::string& path);

}  // namespace pdpp
