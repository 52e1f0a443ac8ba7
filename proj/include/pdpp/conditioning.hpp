#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pdpp/array.hpp"

namespace pdpp {

enum class TaskCond { kNone, kConcat, kMask };
enum class HorizonCond { kNone, kConcat, kMoe };

std::string to_string(TaskCond m);
std::string to_string(HorizonCond m);
TaskCond parse_task_cond(const std::string& s);
HorizonCond parse_horizon_cond(const std::string& s);

// Row layout of the condition-annotated plan array. Per column, from the top:
// h-block (horizon one-hot), c-block (task one-hot), a-block (action logits),
// o-block (observation features). Blocks whose conditioning mode is off have
// zero height.
struct Layout {
  std::vector<int> horizons;
  int num_tasks = 0;
  int num_actions = 0;
  int obs_dim = 0;
  TaskCond task_mode = TaskCond::kConcat;
  HorizonCond horizon_mode = HorizonCond::kConcat;

  int d_h() const { return horizon_mode == HorizonCond::kConcat ? static_cast<int>(horizons.size()) : 0; }
  int d_c() const { return task_mode == TaskCond::kConcat ? num_tasks : 0; }
  int d_a() const { return num_actions; }
  int d_o() const { return obs_dim; }
  int h_offset() const { return 0; }
  int c_offset() const { return d_h(); }
  int a_offset() const { return d_h() + d_c(); }
  int o_offset() const { return d_h() + d_c() + d_a(); }
  int rows() const { return d_h() + d_c() + d_a() + d_o(); }

  // Position of T in `horizons`; throws kInvalidArgument when unsupported.
  int horizon_index(int horizon) const;
  void validate() const;

  std::string to_json() const;
  static Layout from_json(const std::string& text);
  bool operator==(const Layout&) const = default;
};

// For each task, the action ids that may appear in its plans.
struct TaskActionMap {
  std::vector<std::vector<int>> actions;

  int num_tasks() const { return static_cast<int>(actions.size()); }
  // 0/1 mask over num_actions; all ones for task < 0 (no task condition).
  std::vector<char> allowed(int task, int num_actions) const;
};

// Everything held fixed by projection. task < 0 means "no task condition"
// (the zeroed unconditional variant).
struct ConditionSet {
  std::vector<float> obs_start;
  std::vector<float> obs_goal;
  int task = -1;
  int horizon = 0;
  std::optional<std::pair<int, int>> endpoint_actions;
};

// Zero conditions, horizon retained.
ConditionSet unconditional(const ConditionSet& cond);

// Column i = [h; c; a_i; o_i] with o_1 = o_s, o_T = o_g and zero interior
// observations. actions[i] < 0 leaves a_i zero. Result is [rows, T].
Array assemble_input(std::span<const int> actions, const ConditionSet& cond, const Layout& layout,
                     const TaskActionMap* task_map = nullptr);

// Overwrites condition rows of one [rows, T] sample in place. Under mask mode
// the a-block is restricted to the task's actions; under endpoint conditions
// the a-blocks of the first and last column become the endpoint one-hots.
void project_into(std::span<float> x, const ConditionSet& cond, const Layout& layout,
                  const TaskActionMap* task_map = nullptr);
Array project(const Array& x, const ConditionSet& cond, const Layout& layout,
              const TaskActionMap* task_map = nullptr);

// project(x) == x * mask + fill for finite x; used inside the training graph.
struct ProjectionOperator {
  Array mask;
  Array fill;
};
ProjectionOperator projection_operator(const ConditionSet& cond, const Layout& layout,
                                       const TaskActionMap* task_map = nullptr);

// True when every condition row of the sample equals what projection writes.
bool conditions_hold(std::span<const float> x, const ConditionSet& cond, const Layout& layout,
                     const TaskActionMap* task_map = nullptr);

// Per column argmax over the a-block, lowest index on ties. With `allowed`
// the argmax is restricted to allowed actions unless none are allowed, in
// which case the unrestricted argmax is used.
std::vector<int> extract_plan(std::span<const float> x, const Layout& layout, int horizon,
                              const std::vector<char>* allowed = nullptr);
std::vector<int> extract_plan(const Array& x, const Layout& layout, int horizon,
                              const std::vector<char>* allowed = nullptr);

// Loss multipliers: endpoint a-blocks get `endpoint_weight`, interior a-blocks
// 1 and all condition rows 0. Shape [rows, T].
Array weight_matrix(const Layout& layout, int horizon, double endpoint_weight);

}  // namespace pdpp
