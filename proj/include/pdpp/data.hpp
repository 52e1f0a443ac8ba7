#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pdpp/conditioning.hpp"
#include "pdpp/rng.hpp"

namespace pdpp {

struct SyntheticConfig {
  int num_tasks = 6;
  int num_actions = 24;
  int subset_size = 6;
  // Successors per action. 1 gives a single deterministic cycle per task, so
  // every (start, goal, T) query has exactly one valid plan.
  int branching = 2;
  double concentration = 1.0;  // Dirichlet parameter over successors
  int obs_dim = 32;
  double noise = 0.1;
  double task_offset = 0.5;
  int videos_per_task = 60;
  int min_actions = 5;
  int max_actions = 9;
  std::uint64_t seed = 0;

  void validate() const;
  std::string to_json() const;
  static SyntheticConfig from_json(const std::string& text);
};

// Deterministic-toy settings: one successor per action.
SyntheticConfig toy_config();

struct Video {
  int task = 0;
  std::vector<int> actions;
  // Per action: observation at its start and at its end boundary.
  std::vector<std::vector<float>> start_obs;
  std::vector<std::vector<float>> end_obs;
};

struct PlanRecord {
  int task = 0;
  std::vector<int> actions;
  std::vector<float> obs_start;
  std::vector<float> obs_goal;
  int video = -1;  // source video (in memory only)

  int horizon() const { return static_cast<int>(actions.size()); }
  bool operator==(const PlanRecord& o) const {
    return task == o.task && actions == o.actions && obs_start == o.obs_start && obs_goal == o.obs_goal;
  }
};

struct Dataset {
  int num_tasks = 0;
  int num_actions = 0;
  int obs_dim = 0;
  TaskActionMap task_map;
  std::vector<PlanRecord> records;

  std::vector<int> horizons() const;
  std::vector<PlanRecord> with_horizon(int horizon) const;
  bool operator==(const Dataset& o) const {
    return num_tasks == o.num_tasks && num_actions == o.num_actions && obs_dim == o.obs_dim &&
           task_map.actions == o.task_map.actions && records == o.records;
  }
};

// Per task Markov chain over its action subset.
struct TaskChain {
  std::vector<int> actions;
  // successors[i] / probs[i] belong to actions[i].
  std::vector<std::vector<int>> successors;
  std::vector<std::vector<double>> probs;
};

class Corpus {
 public:
  SyntheticConfig config;
  std::vector<TaskChain> chains;
  std::vector<Video> videos;

  TaskActionMap task_map() const;
  // Every positive-probability action sequence of length T in `task` that
  // starts with `first` and ends with `last`, with its chain probability
  // conditioned on the start action.
  std::vector<std::pair<std::vector<int>, double>> reachable_plans(int task, int first, int last, int horizon) const;
  bool is_reachable(int task, const std::vector<int>& plan) const;
};

Corpus generate_synthetic(const SyntheticConfig& cfg);

// n - T + 1 windows for a video of n actions; empty when n < T.
std::vector<PlanRecord> extract_windows(const Video& video, int horizon, int video_id = -1);

// Video-level split; returns (train ids, test ids), each ascending.
std::pair<std::vector<int>, std::vector<int>> split_videos(int num_videos, double ratio, std::uint64_t seed);

Dataset make_dataset(const Corpus& corpus, const std::vector<int>& video_ids, const std::vector<int>& horizons);

struct SplitDatasets {
  Dataset train;
  Dataset test;
};
SplitDatasets generate_split(const SyntheticConfig& cfg, const std::vector<int>& horizons, double ratio = 0.7);

// "PDPPDATA" | u32 version | u32 K | u32 A | u32 d_o | K x (u32 n, n x u32) |
// u32 count | count x (u32 task, u32 T, T x u32 action, 2*d_o x f32)
inline constexpr char kDatasetMagic[] = "PDPPDATA";
inline constexpr std::uint32_t kDatasetVersion = 1;

std::vector<unsigned char> encode_dataset(const Dataset& ds);
Dataset decode_dataset(const std::vector<unsigned char>& bytes);
void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

// Conditions for a record: o_s, o_g (zeroed when `vpa`), task, horizon.
ConditionSet record_condition(const PlanRecord& r, int task, bool vpa = false);

}  // namespace pdpp
