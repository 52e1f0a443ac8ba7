#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pdpp/data.hpp"

namespace pdpp {

using Plan = std::vector<int>;

double success_rate(const std::vector<Plan>& preds, const std::vector<Plan>& gts);
double mean_accuracy(const std::vector<Plan>& preds, const std::vector<Plan>& gts);
// Pairs are cut into consecutive groups of batch_size; each group scores
// |union(pred) n union(gt)| / |union(pred) u union(gt)| and groups are averaged.
double miou(const std::vector<Plan>& preds, const std::vector<Plan>& gts, int batch_size = 1);

struct Metrics {
  double sr = 0.0;
  double macc = 0.0;
  double miou = 0.0;
  std::size_t count = 0;
};
Metrics score(const std::vector<Plan>& preds, const std::vector<Plan>& gts);

struct QueryGroup {
  std::string key;
  std::size_t representative = 0;  // index of the first record of the group
  std::vector<std::size_t> members;
  std::map<Plan, int> gt_modes;
};

// Groups by (task, a_1, a_T, T) on synthetic data, or by byte-equality of
// (o_s, o_g) with `by_features`. Groups appear in first-occurrence order.
std::vector<QueryGroup> group_queries(const std::vector<PlanRecord>& records, bool by_features = false);

struct ProbMetrics {
  double nll = 0.0;
  double kl = 0.0;
  double mode_prec = 0.0;
  double mode_rec = 0.0;
};

// Per group, P (samples) and Q (ground truth) are add-one smoothed over the
// union of their supports. NLL averages -log P over ground-truth sequences,
// KL is KL(Q || P). Mode precision/recall are frequency weighted unless
// `weighted` is false. Results are means over groups.
ProbMetrics prob_metrics(const std::vector<QueryGroup>& groups, const std::vector<std::vector<Plan>>& samples,
                         bool weighted = true);

// Uniform i.i.d. actions per position; with a task map, restricted to the
// task's actions (tasks[i] selects the map entry of query i).
std::vector<Plan> random_baseline(const std::vector<int>& horizons, int num_actions, Rng& rng,
                                  const TaskActionMap* task_map = nullptr, const std::vector<int>* tasks = nullptr);

// Nearest training record (Euclidean on concat(o_s, o_g)) of the query's
// horizon; ties go to the lowest record index.
std::vector<Plan> retrieval_baseline(const std::vector<PlanRecord>& train, const std::vector<PlanRecord>& queries);

struct HorizonReport {
  int horizon = 0;
  Metrics metrics;
  std::optional<ProbMetrics> prob;
};

struct EvalReport {
  std::vector<HorizonReport> horizons;
  std::vector<std::uint64_t> seeds;
  int samples_per_query = 1;
  std::map<std::string, double> extra;

  const HorizonReport* find(int horizon) const;
  // "key = value" lines followed by a JSON block with the same numbers.
  std::string to_text() const;
  std::string to_json() const;
};

// Sampler TSV lines: query_id \t task_id \t a_1,...,a_T
struct PredictionRow {
  std::string query_id;
  int task = -1;
  Plan plan;
};
std::string format_predictions(const std::vector<PredictionRow>& rows);
std::vector<PredictionRow> parse_predictions(const std::string& text);

}  // namespace pdpp
