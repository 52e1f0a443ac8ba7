#include "pdpp/training.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace pdpp {

void TrainConfig::validate() const {
  require(diffusion_steps >= 1, ErrorCode::kInvalidArgument, "diffusion_steps must be >= 1");
  require(steps >= 0, ErrorCode::kInvalidArgument, "training steps must be >= 0");
  require(batch_size >= 1, ErrorCode::kInvalidArgument, "batch_size must be >= 1");
  require(warmup_steps >= 0, ErrorCode::kInvalidArgument, "warmup_steps must be >= 0");
  require(lr_peak > 0.0, ErrorCode::kInvalidArgument, "peak learning rate must be > 0");
  require(decay > 0.0, ErrorCode::kInvalidArgument, "decay factor must be > 0");
  require(endpoint_weight >= 1.0, ErrorCode::kInvalidArgument, "endpoint weight w must be >= 1");
  require(!horizons.empty(), ErrorCode::kInvalidArgument, "horizons must be non-empty");
  for (int h : horizons) require(h >= 2, ErrorCode::kInvalidArgument, "horizons must be >= 2");
  require(cfg_dropout >= 0.0 && cfg_dropout < 1.0, ErrorCode::kInvalidArgument, "cfg dropout must lie in [0, 1)");
}

std::string TrainConfig::to_json() const {
  nlohmann::json j = {{"diffusion_steps", diffusion_steps},
                      {"schedule", schedule},
                      {"steps", steps},
                      {"batch_size", batch_size},
                      {"warmup_steps", warmup_steps},
                      {"lr_peak", lr_peak},
                      {"milestones", milestones},
                      {"decay", decay},
                      {"endpoint_weight", endpoint_weight},
                      {"horizons", horizons},
                      {"task_mode", to_string(task_mode)},
                      {"horizon_mode", to_string(horizon_mode)},
                      {"cfg_dropout", cfg_dropout},
                      {"endpoint_conditioned", endpoint_conditioned},
                      {"vpa", vpa},
                      {"seed", seed}};
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  TrainConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.contains("preset")) c = train_preset(j["preset"].get<std::string>());
    c.diffusion_steps = j.value("diffusion_steps", c.diffusion_steps);
    c.schedule = j.value("schedule", c.schedule);
    c.steps = j.value("steps", c.steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.lr_peak = j.value("lr_peak", c.lr_peak);
    c.milestones = j.value("milestones", c.milestones);
    c.decay = j.value("decay", c.decay);
    c.endpoint_weight = j.value("endpoint_weight", c.endpoint_weight);
    c.horizons = j.value("horizons", c.horizons);
    if (j.contains("task_mode")) c.task_mode = parse_task_cond(j["task_mode"].get<std::string>());
    if (j.contains("horizon_mode")) c.horizon_mode = parse_horizon_cond(j["horizon_mode"].get<std::string>());
    c.cfg_dropout = j.value("cfg_dropout", c.cfg_dropout);
    c.endpoint_conditioned = j.value("endpoint_conditioned", c.endpoint_conditioned);
    c.vpa = j.value("vpa", c.vpa);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("training config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig train_preset(const std::string& name) {
  TrainConfig c;
  if (name == "desk") {
    c.steps = 5000;
    c.batch_size = 32;
    c.warmup_steps = 500;
    c.lr_peak = 5e-4;
    c.milestones = {3000, 4000};
    return c;
  }
  c.batch_size = 256;
  if (name == "crosstask_base") {
    c.steps = 12000;
    c.warmup_steps = 4000;
    c.lr_peak = 8e-4;
    c.milestones = {10000};
  } else if (name == "crosstask_how" || name == "crosstask_how_joint") {
    c.steps = name == "crosstask_how" ? 24000 : 12000;
    c.warmup_steps = 4000;
    c.lr_peak = 5e-4;
    c.milestones = {10000, 16000, 22000};
    if (name == "crosstask_how_joint") c.horizons = {3, 4, 5, 6};
  } else if (name == "niv") {
    c.diffusion_steps = 50;
    c.steps = 6500;
    c.warmup_steps = 4500;
    c.lr_peak = 3e-4;
    c.milestones = {6000};
  } else if (name == "coin") {
    c.steps = 14000;
    c.warmup_steps = 4000;
    c.lr_peak = 1e-4;
    c.task_mode = TaskCond::kMask;
    c.endpoint_conditioned = true;
  } else {
    fail(ErrorCode::kInvalidArgument,
         "unknown training preset '" + name + "' (desk|crosstask_base|crosstask_how|crosstask_how_joint|niv|coin)");
  }
  return c;
}

double lr_at(int step, const TrainConfig& cfg) {
  require(step >= 0, ErrorCode::kInvalidArgument, "lr_at step must be >= 0");
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
    return cfg.lr_peak * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  double lr = cfg.lr_peak;
  for (int m : cfg.milestones)
    if (step >= m) lr *= cfg.decay;
  return lr;
}

ConditionSet cfg_dropout(const ConditionSet& cond, double p, Rng& rng) {
  require(p >= 0.0 && p < 1.0, ErrorCode::kInvalidArgument, "cfg dropout must lie in [0, 1)");
  if (p > 0.0 && rng.uniform() < p) return unconditional(cond);
  return cond;
}

Layout make_layout(const Dataset& data, const TrainConfig& cfg) {
  Layout l;
  l.horizons = cfg.horizons;
  l.num_tasks = data.num_tasks;
  l.num_actions = data.num_actions;
  l.obs_dim = data.obs_dim;
  l.task_mode = cfg.task_mode;
  l.horizon_mode = cfg.horizon_mode;
  l.validate();
  return l;
}

ConditionSet training_condition(const PlanRecord& r, const TrainConfig& cfg) {
  ConditionSet c = record_condition(r, cfg.task_mode == TaskCond::kNone ? -1 : r.task, cfg.vpa);
  if (cfg.endpoint_conditioned) c.endpoint_actions = std::make_pair(r.actions.front(), r.actions.back());
  return c;
}

Trainer::Trainer(Denoiser<float>& model, const TrainConfig& cfg, const TaskActionMap* task_map)
    : model_(model),
      cfg_(cfg),
      task_map_(task_map),
      sched_(make_schedule(cfg.schedule, cfg.diffusion_steps)),
      opt_(model.params()),
      rng_(cfg.seed) {
  cfg_.validate();
  require(model.config().diffusion_steps == cfg.diffusion_steps, ErrorCode::kInvalidArgument,
          "model was built for " + std::to_string(model.config().diffusion_steps) +
              " diffusion steps, training config uses " + std::to_string(cfg.diffusion_steps));
  if (cfg.task_mode == TaskCond::kMask)
    require(task_map != nullptr, ErrorCode::kInvalidArgument, "task-mask training needs a task/action map");
}

double Trainer::accumulate(const std::vector<const PlanRecord*>& batch, Rng& rng, bool backward,
                           StepDiagnostics* diag) const {
  require(!batch.empty(), ErrorCode::kInvalidArgument, "empty training sub-batch");
  const Layout& layout = model_.config().layout;
  const int T = batch.front()->horizon();
  const int R = layout.rows();
  const int B = static_cast<int>(batch.size());
  const std::size_t per = static_cast<std::size_t>(R) * T;
  Array x0({B, R, T}), xin({B, R, T}), mask({B, R, T}), fill({B, R, T}), weight({B, R, T});
  const Array w = weight_matrix(layout, T, cfg_.endpoint_weight);
  std::vector<int> ns(B);
  std::vector<float> eps(per);
  for (int b = 0; b < B; ++b) {
    const PlanRecord& r = *batch[b];
    require(r.horizon() == T, ErrorCode::kInvalidArgument, "sub-batch mixes horizons");
    const ConditionSet truth = training_condition(r, cfg_);
    const ConditionSet cond = cfg_dropout(truth, cfg_.cfg_dropout, rng);
    ns[b] = rng.uniform_int(1, sched_.steps());
    for (auto& e : eps) e = static_cast<float>(rng.normal());
    const Array clean = assemble_input(r.actions, truth, layout, task_map_);
    std::copy(clean.data(), clean.data() + per, x0.data() + b * per);
    std::span<float> xn(xin.data() + b * per, per);
    q_sample_into(clean.span(), ns[b], eps, sched_, xn);
    project_into(xn, cond, layout, task_map_);
    const ProjectionOperator op = projection_operator(cond, layout, task_map_);
    std::copy(op.mask.data(), op.mask.data() + per, mask.data() + b * per);
    std::copy(op.fill.data(), op.fill.data() + per, fill.data() + b * per);
    std::copy(w.data(), w.data() + per, weight.data() + b * per);
  }
  Graph<float> g(backward);
  const Var out = model_.forward(g, g.constant(std::move(xin)), ns);
  const Var proj = g.affine_const(out, mask, fill);
  const Var loss = g.weighted_sq_error(proj, x0, weight);
  const double value = g.value(loss)[0];
  if (diag) {
    diag->diffusion_steps = ns;
    double mx = 0.0;
    for (float v : g.value(out).span()) mx = std::max(mx, static_cast<double>(std::fabs(v)));
    diag->max_abs_output = mx;
  }
  if (backward && std::isfinite(value)) g.backward(loss);
  return value;
}

double Trainer::step(const std::vector<std::vector<const PlanRecord*>>& batches) {
  require(!batches.empty(), ErrorCode::kInvalidArgument, "training step needs at least one sub-batch");
  model_.params().zero_grad();
  double total = 0.0;
  for (const auto& batch : batches) {
    StepDiagnostics diag;
    const double l = accumulate(batch, rng_, true, &diag);
    if (!std::isfinite(l)) {
      std::string ns;
      for (int n : diag.diffusion_steps) ns += (ns.empty() ? "" : ",") + std::to_string(n);
      fail(ErrorCode::kNumeric, "non-finite training loss at step " + std::to_string(step_ + 1) +
                                    " (horizon " + std::to_string(batch.front()->horizon()) + ", n = [" + ns +
                                    "], max |output| = " + std::to_string(diag.max_abs_output) + ")");
    }
    total += l;
  }
  opt_.step(lr_at(step_ + 1, cfg_));
  ++step_;
  return total / static_cast<double>(batches.size());
}

double Trainer::evaluate_loss(const std::vector<const PlanRecord*>& batch, Rng& rng) const {
  return accumulate(batch, rng, false, nullptr);
}

TrainReport train_model(Denoiser<float>& model, const Dataset& data, const TrainConfig& cfg,
                        const ProgressFn& progress) {
  cfg.validate();
  std::vector<std::vector<const PlanRecord*>> pools;
  for (int h : cfg.horizons) {
    std::vector<const PlanRecord*> pool;
    for (const auto& r : data.records)
      if (r.horizon() == h) pool.push_back(&r);
    require(!pool.empty(), ErrorCode::kInvalidArgument, "no training records for horizon " + std::to_string(h));
    pools.push_back(std::move(pool));
  }
  Trainer trainer(model, cfg, &data.task_map);
  Rng pick = Rng(cfg.seed).substream(7);
  TrainReport report;
  report.parameter_count = model.params().scalar_count();
  std::vector<std::vector<const PlanRecord*>> batches(pools.size());
  for (int s = 0; s < cfg.steps; ++s) {
    for (std::size_t h = 0; h < pools.size(); ++h) {
      batches[h].clear();
      const int n = static_cast<int>(pools[h].size());
      for (int b = 0; b < cfg.batch_size; ++b) batches[h].push_back(pools[h][pick.uniform_int(0, n - 1)]);
    }
    const double loss = trainer.step(batches);
    report.losses.push_back(loss);
    if (progress) progress(s + 1, loss, lr_at(s + 1, cfg));
  }
  const std::size_t tail = std::min<std::size_t>(100, report.losses.size());
  double acc = 0.0;
  for (std::size_t i = report.losses.size() - tail; i < report.losses.size(); ++i) acc += report.losses[i];
  report.final_loss = tail ? acc / static_cast<double>(tail) : 0.0;
  return report;
}

Dataset endpoint_dataset(const Dataset& data, int horizon) {
  Dataset out;
  out.num_tasks = data.num_tasks;
  out.num_actions = data.num_actions;
  out.obs_dim = data.obs_dim;
  out.task_map = data.task_map;
  for (const auto& r : data.records) {
    if (r.horizon() != horizon) continue;
    PlanRecord e = r;
    e.actions = {r.actions.front(), r.actions.back()};
    out.records.push_back(std::move(e));
  }
  return out;
}

TrainConfig endpoint_train_config(const TrainConfig& cfg) {
  TrainConfig c = cfg;
  c.horizons = {2};
  c.horizon_mode = HorizonCond::kNone;
  c.endpoint_conditioned = false;
  return c;
}

DenoiserConfig endpoint_model_config(Variant variant, const Dataset& endpoints, const TrainConfig& cfg) {
  const TrainConfig ec = endpoint_train_config(cfg);
  DenoiserConfig c = denoiser_preset(variant, make_layout(endpoints, ec));
  if (c.widths.size() > 2) c.widths.resize(2);
  c.diffusion_steps = cfg.diffusion_steps;
  c.schedule = cfg.schedule;
  c.seed = cfg.seed;
  return c;
}

}  // namespace pdpp
