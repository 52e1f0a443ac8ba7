#include "pdpp/classifier.hpp"

#include <algorithm>
#include <numeric>

#include "json.hpp"
#include "pdpp/checkpoint.hpp"
#include "pdpp/optim.hpp"

namespace pdpp {

std::string ClassifierConfig::to_json() const {
  nlohmann::json j = {{"kind", "classifier"}, {"obs_dim", obs_dim}, {"num_tasks", num_tasks}, {"hidden", hidden},
                      {"seed", seed}};
  return j.dump();
}

ClassifierConfig ClassifierConfig::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    require(j.value("kind", "") == "classifier", ErrorCode::kFormat, "checkpoint does not hold a task classifier");
    ClassifierConfig c;
    c.obs_dim = j.at("obs_dim").get<int>();
    c.num_tasks = j.at("num_tasks").get<int>();
    c.hidden = j.at("hidden").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("classifier metadata: ") + e.what());
  }
}

TaskClassifier::TaskClassifier(const ClassifierConfig& cfg) : cfg_(cfg) {
  require(cfg.obs_dim >= 1 && cfg.num_tasks >= 1 && cfg.hidden >= 1, ErrorCode::kInvalidArgument,
          "classifier needs obs_dim, num_tasks and hidden >= 1");
  Rng rng(cfg.seed);
  fc1_ = Linear<float>(store_, "fc1", 2 * cfg.obs_dim, cfg.hidden, rng);
  fc2_ = Linear<float>(store_, "fc2", cfg.hidden, cfg.hidden, rng);
  fc3_ = Linear<float>(store_, "fc3", cfg.hidden, cfg.num_tasks, rng);
}

Var TaskClassifier::forward(Graph<float>& g, Var features) const {
  return fc3_(g, g.mish(fc2_(g, g.mish(fc1_(g, features)))));
}

namespace {

Array feature_batch(const std::vector<const PlanRecord*>& recs, int obs_dim) {
  Array x({static_cast<int>(recs.size()), 2 * obs_dim});
  for (std::size_t b = 0; b < recs.size(); ++b) {
    const PlanRecord& r = *recs[b];
    require(static_cast<int>(r.obs_start.size()) == obs_dim && static_cast<int>(r.obs_goal.size()) == obs_dim,
            ErrorCode::kShapeMismatch, "classifier expects " + std::to_string(obs_dim) + " observation features");
    std::copy(r.obs_start.begin(), r.obs_start.end(), x.data() + b * 2 * obs_dim);
    std::copy(r.obs_goal.begin(), r.obs_goal.end(), x.data() + b * 2 * obs_dim + obs_dim);
  }
  return x;
}

int argmax(const float* v, int n) {
  int best = 0;
  for (int i = 1; i < n; ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace

Classification TaskClassifier::classify(const std::vector<float>& obs_start, const std::vector<float>& obs_goal) const {
  PlanRecord r;
  r.obs_start = obs_start;
  r.obs_goal = obs_goal;
  Graph<float> g(false);
  const Array& out = g.value(forward(g, g.constant(feature_batch({&r}, cfg_.obs_dim))));
  Classification c;
  c.logits.assign(out.data(), out.data() + out.size());
  c.predicted = argmax(out.data(), cfg_.num_tasks);
  return c;
}

std::vector<int> TaskClassifier::predict(const std::vector<PlanRecord>& records) const {
  std::vector<int> out;
  constexpr std::size_t kChunk = 256;
  for (std::size_t s = 0; s < records.size(); s += kChunk) {
    std::vector<const PlanRecord*> chunk;
    for (std::size_t i = s; i < std::min(records.size(), s + kChunk); ++i) chunk.push_back(&records[i]);
    Graph<float> g(false);
    const Array& logits = g.value(forward(g, g.constant(feature_batch(chunk, cfg_.obs_dim))));
    for (std::size_t b = 0; b < chunk.size(); ++b)
      out.push_back(argmax(logits.data() + b * cfg_.num_tasks, cfg_.num_tasks));
  }
  return out;
}

double classifier_accuracy(const TaskClassifier& clf, const std::vector<PlanRecord>& records) {
  if (records.empty()) return 0.0;
  const auto pred = clf.predict(records);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < records.size(); ++i) hits += pred[i] == records[i].task;
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

ClassifierReport train_classifier(TaskClassifier& clf, const Dataset& train, const Dataset* test,
                                  const ClassifierTrainConfig& cfg) {
  require(!train.records.empty(), ErrorCode::kInvalidArgument, "cannot train a classifier on an empty dataset");
  require(cfg.epochs >= 0 && cfg.batch_size >= 1 && cfg.lr > 0.0, ErrorCode::kInvalidArgument,
          "classifier training needs epochs >= 0, batch_size >= 1, lr > 0");
  const int d = clf.config().obs_dim;
  const auto& recs = train.records;
  for (const auto& r : recs)
    require(r.task >= 0 && r.task < clf.config().num_tasks, ErrorCode::kInvalidArgument,
            "record task id " + std::to_string(r.task) + " outside classifier range");

  auto full_loss = [&]() {
    double total = 0.0;
    for (std::size_t s = 0; s < recs.size(); s += 256) {
      std::vector<const PlanRecord*> chunk;
      std::vector<int> labels;
      for (std::size_t i = s; i < std::min(recs.size(), s + 256); ++i) {
        chunk.push_back(&recs[i]);
        labels.push_back(recs[i].task);
      }
      Graph<float> g(false);
      const Var l = g.cross_entropy(clf.forward(g, g.constant(feature_batch(chunk, d))), labels);
      total += g.value(l)[0] * static_cast<double>(chunk.size());
    }
    return total / static_cast<double>(recs.size());
  };

  ClassifierReport report;
  report.initial_loss = full_loss();
  Adam<float> opt(clf.params());
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(recs.size());
  std::iota(order.begin(), order.end(), 0);
  for (int e = 0; e < cfg.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
      std::vector<const PlanRecord*> chunk;
      std::vector<int> labels;
      for (std::size_t i = s; i < std::min(order.size(), s + cfg.batch_size); ++i) {
        chunk.push_back(&recs[order[i]]);
        labels.push_back(recs[order[i]].task);
      }
      clf.params().zero_grad();
      Graph<float> g;
      const Var l = g.cross_entropy(clf.forward(g, g.constant(feature_batch(chunk, d))), labels);
      g.backward(l);
      opt.step(cfg.lr);
    }
    report.epoch_loss.push_back(full_loss());
  }
  report.train_accuracy = classifier_accuracy(clf, recs);
  if (test && !test->records.empty()) report.test_accuracy = classifier_accuracy(clf, test->records);
  return report;
}

void save_classifier(const std::string& path, const TaskClassifier& clf) {
  save_checkpoint(path, Checkpoint{clf.config().to_json(), export_parameters(clf.params())});
}

std::unique_ptr<TaskClassifier> load_classifier(const std::string& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  auto clf = std::make_unique<TaskClassifier>(ClassifierConfig::from_json(ckpt.metadata));
  import_parameters(clf->params(), ckpt.arrays);
  return clf;
}

}  // namespace pdpp
