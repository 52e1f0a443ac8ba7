#include "pdpp/conditioning.hpp"

#include <algorithm>

#include "json.hpp"

namespace pdpp {

std::string to_string(TaskCond m) {
  switch (m) {
    case TaskCond::kNone: return "none";
    case TaskCond::kConcat: return "concat";
    case TaskCond::kMask: return "mask";
  }
  return "none";
}

std::string to_string(HorizonCond m) {
  switch (m) {
    case HorizonCond::kNone: return "none";
    case HorizonCond::kConcat: return "concat";
    case HorizonCond::kMoe: return "moe";
  }
  return "none";
}

TaskCond parse_task_cond(const std::string& s) {
  if (s == "none") return TaskCond::kNone;
  if (s == "concat") return TaskCond::kConcat;
  if (s == "mask") return TaskCond::kMask;
  fail(ErrorCode::kInvalidArgument, "unknown task conditioning mode '" + s + "' (none|concat|mask)");
}

HorizonCond parse_horizon_cond(const std::string& s) {
  if (s == "none") return HorizonCond::kNone;
  if (s == "concat") return HorizonCond::kConcat;
  if (s == "moe") return HorizonCond::kMoe;
  fail(ErrorCode::kInvalidArgument, "unknown horizon conditioning mode '" + s + "' (none|concat|moe)");
}

int Layout::horizon_index(int horizon) const {
  for (std::size_t i = 0; i < horizons.size(); ++i)
    if (horizons[i] == horizon) return static_cast<int>(i);
  std::string supported;
  for (int h : horizons) supported += (supported.empty() ? "" : ",") + std::to_string(h);
  fail(ErrorCode::kInvalidArgument, "horizon " + std::to_string(horizon) + " not in supported set {" + supported + "}");
}

void Layout::validate() const {
  require(!horizons.empty(), ErrorCode::kInvalidArgument, "layout needs at least one horizon");
  for (int h : horizons) require(h >= 2, ErrorCode::kInvalidArgument, "horizons must be >= 2");
  require(num_actions >= 1 && obs_dim >= 1, ErrorCode::kInvalidArgument, "layout needs actions and observation dims");
  if (task_mode != TaskCond::kNone)
    require(num_tasks >= 1, ErrorCode::kInvalidArgument, "task conditioning needs num_tasks >= 1");
}

std::string Layout::to_json() const {
  nlohmann::json j;
  j["horizons"] = horizons;
  j["num_tasks"] = num_tasks;
  j["num_actions"] = num_actions;
  j["obs_dim"] = obs_dim;
  j["task_mode"] = to_string(task_mode);
  j["horizon_mode"] = to_string(horizon_mode);
  j["blocks"] = {{"h", d_h()}, {"c", d_c()}, {"a", d_a()}, {"o", d_o()}};
  j["order"] = {"h", "c", "a", "o"};
  return j.dump();
}

Layout Layout::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  Layout l;
  l.horizons = j.at("horizons").get<std::vector<int>>();
  l.num_tasks = j.at("num_tasks").get<int>();
  l.num_actions = j.at("num_actions").get<int>();
  l.obs_dim = j.at("obs_dim").get<int>();
  l.task_mode = parse_task_cond(j.at("task_mode").get<std::string>());
  l.horizon_mode = parse_horizon_cond(j.at("horizon_mode").get<std::string>());
  l.validate();
  return l;
}

std::vector<char> TaskActionMap::allowed(int task, int num_actions) const {
  if (task < 0) return std::vector<char>(num_actions, 1);
  require(task < num_tasks(), ErrorCode::kInvalidArgument, "task id " + std::to_string(task) + " has no action set");
  std::vector<char> m(num_actions, 0);
  for (int a : actions[task]) {
    require(a >= 0 && a < num_actions, ErrorCode::kInvalidArgument, "action id out of range in task map");
    m[a] = 1;
  }
  return m;
}

ConditionSet unconditional(const ConditionSet& cond) {
  ConditionSet u;
  u.obs_start.assign(cond.obs_start.size(), 0.0f);
  u.obs_goal.assign(cond.obs_goal.size(), 0.0f);
  u.task = -1;
  u.horizon = cond.horizon;
  return u;
}

namespace {

void check_cond(const ConditionSet& cond, const Layout& layout) {
  require(static_cast<int>(cond.obs_start.size()) == layout.d_o() &&
              static_cast<int>(cond.obs_goal.size()) == layout.d_o(),
          ErrorCode::kShapeMismatch,
          "condition observations must have " + std::to_string(layout.d_o()) + " features");
  require(cond.horizon >= 2, ErrorCode::kInvalidArgument, "horizon must be >= 2");
  if (cond.task >= 0 && layout.task_mode == TaskCond::kConcat)
    require(cond.task < layout.num_tasks, ErrorCode::kInvalidArgument,
            "task id " + std::to_string(cond.task) + " >= num_tasks");
  if (cond.endpoint_actions) {
    const auto [first, last] = *cond.endpoint_actions;
    require(first >= 0 && first < layout.d_a() && last >= 0 && last < layout.d_a(), ErrorCode::kInvalidArgument,
            "endpoint action out of range");
  }
}

// Value projection writes at (row, col), or NaN-free sentinel "untouched".
struct CondWriter {
  const ConditionSet& cond;
  const Layout& layout;
  int T;
  int hidx;
  std::vector<char> allowed;
  bool masked;

  CondWriter(const ConditionSet& c, const Layout& l, const TaskActionMap* task_map)
      : cond(c), layout(l), T(c.horizon), hidx(-1), masked(false) {
    check_cond(c, l);
    if (l.horizon_mode == HorizonCond::kConcat) hidx = l.horizon_index(T);
    if (l.task_mode == TaskCond::kMask && c.task >= 0) {
      require(task_map != nullptr, ErrorCode::kInvalidArgument, "task-mask conditioning requires a task/action map");
      allowed = task_map->allowed(c.task, l.d_a());
      masked = true;
    }
  }

  // kind: 0 = fixed value, 1 = keep, 2 = force zero (masked action)
  int classify(int row, int col, float* value) const {
    if (row < layout.c_offset()) {
      *value = (row - layout.h_offset()) == hidx ? 1.0f : 0.0f;
      return 0;
    }
    if (row < layout.a_offset()) {
      *value = (row - layout.c_offset()) == cond.task ? 1.0f : 0.0f;
      return 0;
    }
    if (row < layout.o_offset()) {
      const int a = row - layout.a_offset();
      if (cond.endpoint_actions && (col == 0 || col == T - 1)) {
        const int target = col == 0 ? cond.endpoint_actions->first : cond.endpoint_actions->second;
        *value = a == target ? 1.0f : 0.0f;
        return 0;
      }
      if (masked && !allowed[a]) {
        *value = 0.0f;
        return 2;
      }
      return 1;
    }
    const int o = row - layout.o_offset();
    if (col == 0)
      *value = cond.obs_start[o];
    else if (col == T - 1)
      *value = cond.obs_goal[o];
    else
      *value = 0.0f;
    return 0;
  }
};

}  // namespace

Array assemble_input(std::span<const int> actions, const ConditionSet& cond, const Layout& layout,
                     const TaskActionMap* task_map) {
  const int T = cond.horizon;
  require(static_cast<int>(actions.size()) == T, ErrorCode::kInvalidArgument,
          "assemble_input: " + std::to_string(actions.size()) + " actions for horizon " + std::to_string(T));
  Array x({layout.rows(), T});
  for (int t = 0; t < T; ++t) {
    const int a = actions[t];
    if (a < 0) continue;
    require(a < layout.d_a(), ErrorCode::kInvalidArgument, "action id " + std::to_string(a) + " out of range");
    x[static_cast<std::size_t>(layout.a_offset() + a) * T + t] = 1.0f;
  }
  project_into(x.span(), cond, layout, task_map);
  return x;
}

void project_into(std::span<float> x, const ConditionSet& cond, const Layout& layout, const TaskActionMap* task_map) {
  const int T = cond.horizon;
  require(x.size() == static_cast<std::size_t>(layout.rows()) * T, ErrorCode::kShapeMismatch,
          "projection input has " + std::to_string(x.size()) + " values, layout expects " +
              std::to_string(layout.rows()) + "x" + std::to_string(T));
  const CondWriter w(cond, layout, task_map);
  for (int r = 0; r < layout.rows(); ++r)
    for (int t = 0; t < T; ++t) {
      float v;
      if (w.classify(r, t, &v) != 1) x[static_cast<std::size_t>(r) * T + t] = v;
    }
}

Array project(const Array& x, const ConditionSet& cond, const Layout& layout, const TaskActionMap* task_map) {
  Array out = x;
  project_into(out.span(), cond, layout, task_map);
  return out;
}

ProjectionOperator projection_operator(const ConditionSet& cond, const Layout& layout,
                                       const TaskActionMap* task_map) {
  const int T = cond.horizon;
  const CondWriter w(cond, layout, task_map);
  ProjectionOperator op{Array({layout.rows(), T}), Array({layout.rows(), T})};
  for (int r = 0; r < layout.rows(); ++r)
    for (int t = 0; t < T; ++t) {
      float v = 0.0f;
      const std::size_t i = static_cast<std::size_t>(r) * T + t;
      if (w.classify(r, t, &v) == 1) {
        op.mask[i] = 1.0f;
      } else {
        op.fill[i] = v;
      }
    }
  return op;
}

bool conditions_hold(std::span<const float> x, const ConditionSet& cond, const Layout& layout,
                     const TaskActionMap* task_map) {
  const int T = cond.horizon;
  if (x.size() != static_cast<std::size_t>(layout.rows()) * T) return false;
  const CondWriter w(cond, layout, task_map);
  for (int r = 0; r < layout.rows(); ++r)
    for (int t = 0; t < T; ++t) {
      float v;
      if (w.classify(r, t, &v) != 1 && x[static_cast<std::size_t>(r) * T + t] != v) return false;
    }
  return true;
}

std::vector<int> extract_plan(std::span<const float> x, const Layout& layout, int horizon,
                              const std::vector<char>* allowed) {
  require(x.size() == static_cast<std::size_t>(layout.rows()) * horizon, ErrorCode::kShapeMismatch,
          "extract_plan: array size does not match layout for horizon " + std::to_string(horizon));
  bool any_allowed = false;
  if (allowed) {
    require(static_cast<int>(allowed->size()) == layout.d_a(), ErrorCode::kShapeMismatch, "action mask size mismatch");
    any_allowed = std::any_of(allowed->begin(), allowed->end(), [](char c) { return c != 0; });
  }
  const bool restrict = allowed && any_allowed;
  std::vector<int> plan(horizon);
  for (int t = 0; t < horizon; ++t) {
    int best = -1;
    float best_v = 0.0f;
    for (int a = 0; a < layout.d_a(); ++a) {
      if (restrict && !(*allowed)[a]) continue;
      const float v = x[static_cast<std::size_t>(layout.a_offset() + a) * horizon + t];
      if (best < 0 || v > best_v) {
        best = a;
        best_v = v;
      }
    }
    plan[t] = best;
  }
  return plan;
}

std::vector<int> extract_plan(const Array& x, const Layout& layout, int horizon, const std::vector<char>* allowed) {
  return extract_plan(x.span(), layout, horizon, allowed);
}

Array weight_matrix(const Layout& layout, int horizon, double endpoint_weight) {
  require(endpoint_weight >= 1.0, ErrorCode::kInvalidArgument, "endpoint loss weight must be >= 1");
  Array w({layout.rows(), horizon});
  for (int a = 0; a < layout.d_a(); ++a)
    for (int t = 0; t < horizon; ++t)
      w[static_cast<std::size_t>(layout.a_offset() + a) * horizon + t] =
          (t == 0 || t == horizon - 1) ? static_cast<float>(endpoint_weight) : 1.0f;
  return w;
}

}  // namespace pdpp
