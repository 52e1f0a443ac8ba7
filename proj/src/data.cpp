#include "pdpp/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "json.hpp"
#include "pdpp/binio.hpp"

namespace pdpp {

void SyntheticConfig::validate() const {
  require(num_tasks >= 1, ErrorCode::kInvalidArgument, "num_tasks must be >= 1");
  require(num_actions >= 1, ErrorCode::kInvalidArgument, "num_actions must be >= 1");
  require(subset_size >= 2 && subset_size <= num_actions, ErrorCode::kInvalidArgument,
          "per-task action subset size " + std::to_string(subset_size) + " infeasible for " +
              std::to_string(num_actions) + " actions (need 2 <= size <= A)");
  require(branching >= 1 && branching <= subset_size - 1, ErrorCode::kInvalidArgument,
          "branching " + std::to_string(branching) + " infeasible for subset size " + std::to_string(subset_size));
  require(concentration > 0.0, ErrorCode::kInvalidArgument, "concentration must be > 0");
  require(obs_dim >= 1, ErrorCode::kInvalidArgument, "obs_dim must be >= 1");
  require(noise >= 0.0, ErrorCode::kInvalidArgument, "observation noise must be >= 0");
  require(videos_per_task >= 1, ErrorCode::kInvalidArgument, "videos_per_task must be >= 1");
  require(min_actions >= 2 && max_actions >= min_actions, ErrorCode::kInvalidArgument,
          "actions per video range must satisfy 2 <= min <= max");
}

std::string SyntheticConfig::to_json() const {
  nlohmann::json j = {{"num_tasks", num_tasks},         {"num_actions", num_actions},
                      {"subset_size", subset_size},     {"branching", branching},
                      {"concentration", concentration}, {"obs_dim", obs_dim},
                      {"noise", noise},                 {"task_offset", task_offset},
                      {"videos_per_task", videos_per_task}, {"min_actions", min_actions},
                      {"max_actions", max_actions},     {"seed", seed}};
  return j.dump();
}

SyntheticConfig SyntheticConfig::from_json(const std::string& text) {
  SyntheticConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.contains("preset")) {
      const std::string p = j["preset"].get<std::string>();
      require(p == "toy" || p == "default", ErrorCode::kInvalidArgument, "unknown data preset '" + p + "' (toy|default)");
      if (p == "toy") c = toy_config();
    }
    c.num_tasks = j.value("num_tasks", c.num_tasks);
    c.num_actions = j.value("num_actions", c.num_actions);
    c.subset_size = j.value("subset_size", c.subset_size);
    c.branching = j.value("branching", c.branching);
    c.concentration = j.value("concentration", c.concentration);
    c.obs_dim = j.value("obs_dim", c.obs_dim);
    c.noise = j.value("noise", c.noise);
    c.task_offset = j.value("task_offset", c.task_offset);
    c.videos_per_task = j.value("videos_per_task", c.videos_per_task);
    c.min_actions = j.value("min_actions", c.min_actions);
    c.max_actions = j.value("max_actions", c.max_actions);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("synthetic config: ") + e.what());
  }
  c.validate();
  return c;
}

SyntheticConfig toy_config() {
  SyntheticConfig c;
  c.branching = 1;
  return c;
}

std::vector<int> Dataset::horizons() const {
  std::set<int> hs;
  for (const auto& r : records) hs.insert(r.horizon());
  return {hs.begin(), hs.end()};
}

std::vector<PlanRecord> Dataset::with_horizon(int horizon) const {
  std::vector<PlanRecord> out;
  for (const auto& r : records)
    if (r.horizon() == horizon) out.push_back(r);
  return out;
}

TaskActionMap Corpus::task_map() const {
  TaskActionMap m;
  for (const auto& c : chains) {
    std::vector<int> a = c.actions;
    std::sort(a.begin(), a.end());
    m.actions.push_back(std::move(a));
  }
  return m;
}

namespace {

int index_in(const std::vector<int>& v, int x) {
  const auto it = std::find(v.begin(), v.end(), x);
  return it == v.end() ? -1 : static_cast<int>(it - v.begin());
}

std::vector<float> unit_vector(Rng& rng, int dim, double scale) {
  std::vector<double> v(dim);
  double norm = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  std::vector<float> out(dim);
  for (int i = 0; i < dim; ++i) out[i] = static_cast<float>(scale * v[i] / norm);
  return out;
}

int sample_index(Rng& rng, const std::vector<double>& probs) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size()) - 1;
}

}  // namespace

std::vector<std::pair<std::vector<int>, double>> Corpus::reachable_plans(int task, int first, int last,
                                                                        int horizon) const {
  require(task >= 0 && task < static_cast<int>(chains.size()), ErrorCode::kInvalidArgument, "task id out of range");
  require(horizon >= 2, ErrorCode::kInvalidArgument, "horizon must be >= 2");
  const TaskChain& c = chains[task];
  std::vector<std::pair<std::vector<int>, double>> out;
  if (index_in(c.actions, first) < 0) return out;
  std::vector<int> path{first};
  auto dfs = [&](auto&& self, double p) -> void {
    const int cur = path.back();
    if (static_cast<int>(path.size()) == horizon) {
      if (cur == last) out.emplace_back(path, p);
      return;
    }
    const int ci = index_in(c.actions, cur);
    for (std::size_t s = 0; s < c.successors[ci].size(); ++s) {
      path.push_back(c.successors[ci][s]);
      self(self, p * c.probs[ci][s]);
      path.pop_back();
    }
  };
  dfs(dfs, 1.0);
  std::sort(out.begin(), out.end());
  return out;
}

bool Corpus::is_reachable(int task, const std::vector<int>& plan) const {
  if (task < 0 || task >= static_cast<int>(chains.size()) || plan.empty()) return false;
  const TaskChain& c = chains[task];
  if (index_in(c.actions, plan[0]) < 0) return false;
  for (std::size_t i = 1; i < plan.size(); ++i) {
    const auto& succ = c.successors[index_in(c.actions, plan[i - 1])];
    if (index_in(succ, plan[i]) < 0) return false;
  }
  return true;
}

Corpus generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  Corpus corpus;
  corpus.config = cfg;
  const Rng root(cfg.seed);

  for (int k = 0; k < cfg.num_tasks; ++k) {
    Rng rng = root.substream(1000 + k);
    std::vector<int> all(cfg.num_actions);
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), rng.engine());
    TaskChain chain;
    chain.actions.assign(all.begin(), all.begin() + cfg.subset_size);
    const int S = cfg.subset_size;
    for (int i = 0; i < S; ++i) {
      std::vector<int> succ{chain.actions[(i + 1) % S]};
      std::vector<int> rest;
      for (int j = 0; j < S; ++j)
        if (j != i && j != (i + 1) % S) rest.push_back(chain.actions[j]);
      std::shuffle(rest.begin(), rest.end(), rng.engine());
      for (int b = 1; b < cfg.branching; ++b) succ.push_back(rest[b - 1]);
      std::vector<double> p(succ.size());
      double total = 0.0;
      for (auto& x : p) total += (x = rng.gamma(cfg.concentration));
      for (auto& x : p) x /= total;
      chain.successors.push_back(std::move(succ));
      chain.probs.push_back(std::move(p));
    }
    corpus.chains.push_back(std::move(chain));
  }

  Rng emb = root.substream(1);
  std::vector<std::vector<float>> start_emb, end_emb, task_emb;
  for (int a = 0; a < cfg.num_actions; ++a) start_emb.push_back(unit_vector(emb, cfg.obs_dim, 1.0));
  for (int a = 0; a < cfg.num_actions; ++a) end_emb.push_back(unit_vector(emb, cfg.obs_dim, 1.0));
  for (int k = 0; k < cfg.num_tasks; ++k) task_emb.push_back(unit_vector(emb, cfg.obs_dim, cfg.task_offset));

  auto observe = [&](Rng& rng, const std::vector<float>& base, int task) {
    std::vector<float> o(cfg.obs_dim);
    for (int d = 0; d < cfg.obs_dim; ++d)
      o[d] = static_cast<float>(base[d] + task_emb[task][d] + cfg.noise * rng.normal());
    return o;
  };

  for (int k = 0; k < cfg.num_tasks; ++k) {
    const TaskChain& chain = corpus.chains[k];
    for (int v = 0; v < cfg.videos_per_task; ++v) {
      Rng rng = root.substream(1000000 + static_cast<std::uint64_t>(k) * 100000 + v);
      Video video;
      video.task = k;
      const int n = rng.uniform_int(cfg.min_actions, cfg.max_actions);
      int ci = rng.uniform_int(0, cfg.subset_size - 1);
      for (int i = 0; i < n; ++i) {
        video.actions.push_back(chain.actions[ci]);
        const int next = chain.successors[ci][sample_index(rng, chain.probs[ci])];
        ci = index_in(chain.actions, next);
      }
      for (int a : video.actions) {
        video.start_obs.push_back(observe(rng, start_emb[a], k));
        video.end_obs.push_back(observe(rng, end_emb[a], k));
      }
      corpus.videos.push_back(std::move(video));
    }
  }
  return corpus;
}

std::vector<PlanRecord> extract_windows(const Video& video, int horizon, int video_id) {
  require(horizon >= 2, ErrorCode::kInvalidArgument, "window size must be >= 2");
  std::vector<PlanRecord> out;
  const int n = static_cast<int>(video.actions.size());
  for (int i = 0; i + horizon <= n; ++i) {
    PlanRecord r;
    r.task = video.task;
    r.actions.assign(video.actions.begin() + i, video.actions.begin() + i + horizon);
    r.obs_start = video.start_obs[i];
    r.obs_goal = video.end_obs[i + horizon - 1];
    r.video = video_id;
    out.push_back(std::move(r));
  }
  return out;
}

std::pair<std::vector<int>, std::vector<int>> split_videos(int num_videos, double ratio, std::uint64_t seed) {
  require(ratio > 0.0 && ratio < 1.0, ErrorCode::kInvalidArgument, "split ratio must lie in (0, 1)");
  std::vector<int> ids(num_videos);
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng.engine());
  const auto n_train = static_cast<std::size_t>(std::lround(ratio * num_videos));
  std::vector<int> train(ids.begin(), ids.begin() + n_train), test(ids.begin() + n_train, ids.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {train, test};
}

Dataset make_dataset(const Corpus& corpus, const std::vector<int>& video_ids, const std::vector<int>& horizons) {
  Dataset ds;
  ds.num_tasks = corpus.config.num_tasks;
  ds.num_actions = corpus.config.num_actions;
  ds.obs_dim = corpus.config.obs_dim;
  ds.task_map = corpus.task_map();
  for (int h : horizons)
    for (int id : video_ids) {
      auto w = extract_windows(corpus.videos.at(id), h, id);
      ds.records.insert(ds.records.end(), w.begin(), w.end());
    }
  return ds;
}

SplitDatasets generate_split(const SyntheticConfig& cfg, const std::vector<int>& horizons, double ratio) {
  const Corpus corpus = generate_synthetic(cfg);
  const auto [train, test] = split_videos(static_cast<int>(corpus.videos.size()), ratio, Rng(cfg.seed).substream(2).next_u64());
  return {make_dataset(corpus, train, horizons), make_dataset(corpus, test, horizons)};
}

std::vector<unsigned char> encode_dataset(const Dataset& ds) {
  ByteWriter w;
  w.bytes(kDatasetMagic, 8);
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(ds.num_tasks));
  w.u32(static_cast<std::uint32_t>(ds.num_actions));
  w.u32(static_cast<std::uint32_t>(ds.obs_dim));
  require(ds.task_map.num_tasks() == ds.num_tasks, ErrorCode::kInvalidArgument,
          "task/action map has " + std::to_string(ds.task_map.num_tasks()) + " tasks, dataset declares " +
              std::to_string(ds.num_tasks));
  for (const auto& acts : ds.task_map.actions) {
    w.u32(static_cast<std::uint32_t>(acts.size()));
    for (int a : acts) w.u32(static_cast<std::uint32_t>(a));
  }
  w.u32(static_cast<std::uint32_t>(ds.records.size()));
  for (const auto& r : ds.records) {
    require(static_cast<int>(r.obs_start.size()) == ds.obs_dim && static_cast<int>(r.obs_goal.size()) == ds.obs_dim,
            ErrorCode::kShapeMismatch, "record observation size does not match obs_dim");
    w.u32(static_cast<std::uint32_t>(r.task));
    w.u32(static_cast<std::uint32_t>(r.horizon()));
    for (int a : r.actions) w.u32(static_cast<std::uint32_t>(a));
    for (float f : r.obs_start) w.f32(f);
    for (float f : r.obs_goal) w.f32(f);
  }
  return w.data();
}

Dataset decode_dataset(const std::vector<unsigned char>& bytes) {
  ByteReader r(bytes, "dataset");
  if (r.fixed(8, "magic") != std::string(kDatasetMagic, 8)) fail(ErrorCode::kFormat, "dataset: bad magic at byte offset 0");
  const std::uint32_t version = r.u32("version");
  if (version != kDatasetVersion) r.error("unsupported version " + std::to_string(version));
  Dataset ds;
  ds.num_tasks = static_cast<int>(r.u32("num_tasks"));
  ds.num_actions = static_cast<int>(r.u32("num_actions"));
  ds.obs_dim = static_cast<int>(r.u32("obs_dim"));
  for (int k = 0; k < ds.num_tasks; ++k) {
    const std::uint32_t n = r.u32("task action count");
    if (n > static_cast<std::uint32_t>(ds.num_actions)) r.error("task action count exceeds num_actions");
    std::vector<int> acts;
    for (std::uint32_t i = 0; i < n; ++i) {
      const std::uint32_t a = r.u32("task action id");
      if (a >= static_cast<std::uint32_t>(ds.num_actions)) r.error("task action id out of range");
      acts.push_back(static_cast<int>(a));
    }
    ds.task_map.actions.push_back(std::move(acts));
  }
  const std::uint32_t count = r.u32("record count");
  for (std::uint32_t i = 0; i < count; ++i) {
    PlanRecord rec;
    const std::size_t start = r.offset();
    rec.task = static_cast<int>(r.u32("record task"));
    const std::uint32_t T = r.u32("record horizon");
    if (rec.task >= ds.num_tasks) fail(ErrorCode::kFormat, "dataset: task id out of range in record at byte offset " + std::to_string(start));
    if (T < 2 || T > 4096) fail(ErrorCode::kFormat, "dataset: invalid horizon in record at byte offset " + std::to_string(start));
    for (std::uint32_t t = 0; t < T; ++t) {
      const std::uint32_t a = r.u32("record action");
      if (a >= static_cast<std::uint32_t>(ds.num_actions)) r.error("record action id out of range");
      rec.actions.push_back(static_cast<int>(a));
    }
    r.need(static_cast<std::size_t>(8) * ds.obs_dim, "record observations");
    for (int d = 0; d < ds.obs_dim; ++d) rec.obs_start.push_back(r.f32("obs_start"));
    for (int d = 0; d < ds.obs_dim; ++d) rec.obs_goal.push_back(r.f32("obs_goal"));
    ds.records.push_back(std::move(rec));
  }
  if (!r.at_end()) r.error(std::to_string(r.remaining()) + " trailing bytes");
  return ds;
}

void save_dataset(const std::string& path, const Dataset& ds) { write_file_atomic(path, encode_dataset(ds)); }

Dataset load_dataset(const std::string& path) { return decode_dataset(read_file_bytes(path)); }

ConditionSet record_condition(const PlanRecord& r, int task, bool vpa) {
  ConditionSet c;
  c.obs_start = r.obs_start;
  c.obs_goal = vpa ? std::vector<float>(r.obs_goal.size(), 0.0f) : r.obs_goal;
  c.task = task;
  c.horizon = r.horizon();
  return c;
}

}  // namespace pdpp
