#include "pdpp/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <set>
#include <sstream>
#include <unordered_map>

#include "json.hpp"

namespace pdpp {

namespace {

void check_pairs(const std::vector<Plan>& preds, const std::vector<Plan>& gts) {
  require(preds.size() == gts.size(), ErrorCode::kShapeMismatch,
          std::to_string(preds.size()) + " predictions for " + std::to_string(gts.size()) + " ground truths");
  for (std::size_t i = 0; i < preds.size(); ++i)
    require(preds[i].size() == gts[i].size(), ErrorCode::kShapeMismatch,
            "pair " + std::to_string(i) + ": prediction length " + std::to_string(preds[i].size()) +
                " != ground-truth length " + std::to_string(gts[i].size()));
}

}  // namespace

double success_rate(const std::vector<Plan>& preds, const std::vector<Plan>& gts) {
  check_pairs(preds, gts);
  if (preds.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == gts[i];
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double mean_accuracy(const std::vector<Plan>& preds, const std::vector<Plan>& gts) {
  check_pairs(preds, gts);
  std::size_t hits = 0, total = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    for (std::size_t t = 0; t < preds[i].size(); ++t) {
      hits += preds[i][t] == gts[i][t];
      ++total;
    }
  return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

double miou(const std::vector<Plan>& preds, const std::vector<Plan>& gts, int batch_size) {
  check_pairs(preds, gts);
  require(batch_size >= 1, ErrorCode::kInvalidArgument, "mIoU batch size must be >= 1");
  if (preds.empty()) return 0.0;
  double total = 0.0;
  std::size_t groups = 0;
  for (std::size_t s = 0; s < preds.size(); s += static_cast<std::size_t>(batch_size)) {
    std::set<int> p, g;
    for (std::size_t i = s; i < std::min(preds.size(), s + batch_size); ++i) {
      p.insert(preds[i].begin(), preds[i].end());
      g.insert(gts[i].begin(), gts[i].end());
    }
    std::size_t inter = 0;
    for (int a : p) inter += g.count(a);
    const std::size_t uni = p.size() + g.size() - inter;
    total += uni ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0;
    ++groups;
  }
  return total / static_cast<double>(groups);
}

Metrics score(const std::vector<Plan>& preds, const std::vector<Plan>& gts) {
  return {success_rate(preds, gts), mean_accuracy(preds, gts), miou(preds, gts, 1), preds.size()};
}

std::vector<QueryGroup> group_queries(const std::vector<PlanRecord>& records, bool by_features) {
  std::vector<QueryGroup> groups;
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const PlanRecord& r = records[i];
    std::string key;
    if (by_features) {
      key.resize((r.obs_start.size() + r.obs_goal.size()) * sizeof(float) + sizeof(int));
      char* p = key.data();
      const int T = r.horizon();
      std::memcpy(p, &T, sizeof(int));
      std::memcpy(p + sizeof(int), r.obs_start.data(), r.obs_start.size() * sizeof(float));
      std::memcpy(p + sizeof(int) + r.obs_start.size() * sizeof(float), r.obs_goal.data(),
                  r.obs_goal.size() * sizeof(float));
    } else {
      key = std::to_string(r.task) + ":" + std::to_string(r.actions.front()) + ":" + std::to_string(r.actions.back()) +
            ":" + std::to_string(r.horizon());
    }
    auto [it, inserted] = index.emplace(key, groups.size());
    if (inserted) {
      QueryGroup g;
      g.key = by_features ? "features#" + std::to_string(groups.size()) : key;
      g.representative = i;
      groups.push_back(std::move(g));
    }
    QueryGroup& g = groups[it->second];
    g.members.push_back(i);
    ++g.gt_modes[r.actions];
  }
  return groups;
}

ProbMetrics prob_metrics(const std::vector<QueryGroup>& groups, const std::vector<std::vector<Plan>>& samples,
                         bool weighted) {
  require(groups.size() == samples.size(), ErrorCode::kShapeMismatch, "one sample set per query group required");
  require(!groups.empty(), ErrorCode::kInvalidArgument, "prob_metrics needs at least one group");
  ProbMetrics acc;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& q = groups[gi].gt_modes;
    require(!q.empty(), ErrorCode::kInvalidArgument, "query group without ground-truth modes");
    require(!samples[gi].empty(), ErrorCode::kInvalidArgument,
            "query group " + groups[gi].key + " has no sampled plans");
    std::map<Plan, int> p;
    for (const auto& s : samples[gi]) ++p[s];
    std::set<Plan> support;
    for (const auto& [s, c] : q) support.insert(s);
    for (const auto& [s, c] : p) support.insert(s);
    double nq = 0.0;
    for (const auto& [s, c] : q) nq += c;
    const double np = static_cast<double>(samples[gi].size());
    const double u = static_cast<double>(support.size());
    auto prob = [u](const std::map<Plan, int>& m, double n, const Plan& s) {
      const auto it = m.find(s);
      return ((it == m.end() ? 0.0 : it->second) + 1.0) / (n + u);
    };
    double nll = 0.0, kl = 0.0;
    for (const auto& [s, c] : q) nll += c * -std::log(prob(p, np, s));
    nll /= nq;
    for (const auto& s : support) {
      const double qs = prob(q, nq, s), ps = prob(p, np, s);
      kl += qs * std::log(qs / ps);
    }
    double prec = 0.0, rec = 0.0;
    if (weighted) {
      for (const auto& [s, c] : p)
        if (q.count(s)) prec += c / np;
      for (const auto& [s, c] : q)
        if (p.count(s)) rec += c / nq;
    } else {
      for (const auto& [s, c] : p) prec += q.count(s) ? 1.0 : 0.0;
      prec /= static_cast<double>(p.size());
      for (const auto& [s, c] : q) rec += p.count(s) ? 1.0 : 0.0;
      rec /= static_cast<double>(q.size());
    }
    acc.nll += nll;
    acc.kl += kl;
    acc.mode_prec += prec;
    acc.mode_rec += rec;
  }
  const double n = static_cast<double>(groups.size());
  return {acc.nll / n, acc.kl / n, acc.mode_prec / n, acc.mode_rec / n};
}

std::vector<Plan> random_baseline(const std::vector<int>& horizons, int num_actions, Rng& rng,
                                  const TaskActionMap* task_map, const std::vector<int>* tasks) {
  require(num_actions >= 1, ErrorCode::kInvalidArgument, "random baseline needs at least one action");
  if (task_map)
    require(tasks && tasks->size() == horizons.size(), ErrorCode::kInvalidArgument,
            "task-limited random baseline needs one task per query");
  std::vector<Plan> out;
  for (std::size_t i = 0; i < horizons.size(); ++i) {
    Plan p(horizons[i]);
    const std::vector<int>* space = nullptr;
    if (task_map) {
      const int k = (*tasks)[i];
      require(k >= 0 && k < task_map->num_tasks(), ErrorCode::kInvalidArgument, "task id out of range");
      if (!task_map->actions[k].empty()) space = &task_map->actions[k];
    }
    for (int& a : p) {
      if (space)
        a = (*space)[rng.uniform_int(0, static_cast<int>(space->size()) - 1)];
      else
        a = rng.uniform_int(0, num_actions - 1);
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<Plan> retrieval_baseline(const std::vector<PlanRecord>& train, const std::vector<PlanRecord>& queries) {
  require(!train.empty(), ErrorCode::kInvalidArgument, "retrieval baseline needs a non-empty training set");
  std::vector<Plan> out;
  for (const auto& q : queries) {
    double best = std::numeric_limits<double>::infinity();
    const PlanRecord* hit = nullptr;
    for (const auto& r : train) {
      if (r.horizon() != q.horizon()) continue;
      require(r.obs_start.size() == q.obs_start.size() && r.obs_goal.size() == q.obs_goal.size(),
              ErrorCode::kShapeMismatch, "retrieval feature dims differ");
      double d = 0.0;
      for (std::size_t i = 0; i < q.obs_start.size(); ++i) {
        const double x = static_cast<double>(r.obs_start[i]) - q.obs_start[i];
        d += x * x;
      }
      for (std::size_t i = 0; i < q.obs_goal.size(); ++i) {
        const double x = static_cast<double>(r.obs_goal[i]) - q.obs_goal[i];
        d += x * x;
      }
      if (d < best) {
        best = d;
        hit = &r;
      }
    }
    require(hit != nullptr, ErrorCode::kInvalidArgument,
            "no training record with horizon " + std::to_string(q.horizon()) + " to retrieve from");
    out.push_back(hit->actions);
  }
  return out;
}

const HorizonReport* EvalReport::find(int horizon) const {
  for (const auto& h : horizons)
    if (h.horizon == horizon) return &h;
  return nullptr;
}

namespace {

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(6);
  s << std::fixed << v;
  return s.str();
}

}  // namespace

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["seeds"] = seeds;
  j["samples_per_query"] = samples_per_query;
  nlohmann::json hs = nlohmann::json::array();
  for (const auto& h : horizons) {
    nlohmann::json e = {{"horizon", h.horizon},
                        {"count", h.metrics.count},
                        {"sr", h.metrics.sr * 100.0},
                        {"macc", h.metrics.macc * 100.0},
                        {"miou", h.metrics.miou * 100.0}};
    if (h.prob) {
      e["nll"] = h.prob->nll;
      e["kl"] = h.prob->kl;
      e["mode_prec"] = h.prob->mode_prec * 100.0;
      e["mode_rec"] = h.prob->mode_rec * 100.0;
    }
    hs.push_back(e);
  }
  j["horizons"] = hs;
  for (const auto& [k, v] : extra) j["extra"][k] = v;
  return j.dump(2);
}

std::string EvalReport::to_text() const {
  std::ostringstream out;
  for (const auto& h : horizons) {
    const std::string p = "T" + std::to_string(h.horizon) + ".";
    out << p << "count = " << h.metrics.count << "\n";
    out << p << "SR = " << fmt(h.metrics.sr * 100.0) << "\n";
    out << p << "mAcc = " << fmt(h.metrics.macc * 100.0) << "\n";
    out << p << "mIoU = " << fmt(h.metrics.miou * 100.0) << "\n";
    if (h.prob) {
      out << p << "NLL = " << fmt(h.prob->nll) << "\n";
      out << p << "KL-Div = " << fmt(h.prob->kl) << "\n";
      out << p << "ModePrec = " << fmt(h.prob->mode_prec * 100.0) << "\n";
      out << p << "ModeRec = " << fmt(h.prob->mode_rec * 100.0) << "\n";
    }
  }
  for (const auto& [k, v] : extra) out << k << " = " << fmt(v) << "\n";
  out << "samples_per_query = " << samples_per_query << "\n";
  out << "--- json ---\n" << to_json() << "\n";
  return out.str();
}

std::string format_predictions(const std::vector<PredictionRow>& rows) {
  std::string out;
  for (const auto& r : rows) {
    out += r.query_id + "\t" + std::to_string(r.task) + "\t";
    for (std::size_t i = 0; i < r.plan.size(); ++i) out += (i ? "," : "") + std::to_string(r.plan[i]);
    out += "\n";
  }
  return out;
}

std::vector<PredictionRow> parse_predictions(const std::string& text) {
  std::vector<PredictionRow> rows;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    require(t2 != std::string::npos, ErrorCode::kFormat,
            "prediction line " + std::to_string(lineno) + ": expected query_id<TAB>task_id<TAB>actions");
    PredictionRow r;
    r.query_id = line.substr(0, t1);
    try {
      r.task = std::stoi(line.substr(t1 + 1, t2 - t1 - 1));
      std::istringstream acts(line.substr(t2 + 1));
      std::string a;
      while (std::getline(acts, a, ',')) r.plan.push_back(std::stoi(a));
    } catch (const std::exception&) {
      fail(ErrorCode::kFormat, "prediction line " + std::to_string(lineno) + ": malformed integer");
    }
    require(!r.plan.empty(), ErrorCode::kFormat, "prediction line " + std::to_string(lineno) + ": empty plan");
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace pdpp
