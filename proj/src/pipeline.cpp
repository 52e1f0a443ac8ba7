#include "pdpp/pipeline.hpp"

#include <algorithm>
#include <set>

#include "json.hpp"

namespace pdpp {

using nlohmann::json;

namespace {

json sampler_to_json(const SamplerConfig& s) {
  json j = {{"method", to_string(s.method)}, {"ddim_steps", s.ddim_steps}, {"eta", s.eta},
            {"baseline", to_string(s.baseline)}, {"seed", s.seed}, {"batch", s.batch},
            {"samples_per_query", s.samples_per_query}};
  j["cfg_lambda"] = s.cfg_lambda ? json(*s.cfg_lambda) : json(nullptr);
  return j;
}

SamplerConfig sampler_from_json(const json& j) {
  SamplerConfig s;
  if (j.contains("method")) s.method = parse_sampler_method(j["method"].get<std::string>());
  s.ddim_steps = j.value("ddim_steps", s.ddim_steps);
  s.eta = j.value("eta", s.eta);
  if (j.contains("baseline")) s.baseline = parse_baseline_mode(j["baseline"].get<std::string>());
  s.seed = j.value("seed", s.seed);
  s.batch = j.value("batch", s.batch);
  s.samples_per_query = j.value("samples_per_query", s.samples_per_query);
  if (j.contains("cfg_lambda") && !j["cfg_lambda"].is_null()) s.cfg_lambda = j["cfg_lambda"].get<double>();
  return s;
}

json eval_to_json(const EvalOptions& e) {
  return {{"sampler", sampler_to_json(e.sampler)}, {"seeds", e.seeds},
          {"gt_task", e.gt_task},                  {"vpa", e.vpa},
          {"miou_batch", e.miou_batch},            {"probabilistic", e.probabilistic},
          {"prob_samples", e.prob_samples},        {"max_groups", e.max_groups},
          {"horizons", e.horizons}};
}

EvalOptions eval_from_json(const json& j) {
  EvalOptions e;
  if (j.contains("sampler")) e.sampler = sampler_from_json(j["sampler"]);
  e.seeds = j.value("seeds", e.seeds);
  e.gt_task = j.value("gt_task", e.gt_task);
  e.vpa = j.value("vpa", e.vpa);
  e.miou_batch = j.value("miou_batch", e.miou_batch);
  e.probabilistic = j.value("probabilistic", e.probabilistic);
  e.prob_samples = j.value("prob_samples", e.prob_samples);
  e.max_groups = j.value("max_groups", e.max_groups);
  e.horizons = j.value("horizons", e.horizons);
  return e;
}

json model_to_json(const ModelOptions& m) {
  json j = {{"variant", to_string(m.variant)}, {"full_scale", m.full_scale}, {"widths", m.widths}, {"heads", m.heads}};
  j["moe"] = m.moe ? json{{"site", to_string(m.moe->site)}, {"routing", to_string(m.moe->routing)}} : json(nullptr);
  return j;
}

ModelOptions model_from_json(const json& j) {
  ModelOptions m;
  if (j.contains("variant")) m.variant = parse_variant(j["variant"].get<std::string>());
  m.full_scale = j.value("full_scale", m.full_scale);
  m.widths = j.value("widths", m.widths);
  m.heads = j.value("heads", m.heads);
  if (j.contains("moe") && !j["moe"].is_null()) {
    MoeConfig mc;
    if (j["moe"].contains("site")) mc.site = parse_moe_site(j["moe"]["site"].get<std::string>());
    if (j["moe"].contains("routing")) mc.routing = parse_moe_routing(j["moe"]["routing"].get<std::string>());
    m.moe = mc;
  }
  return m;
}

template <class F>
auto parse_guarded(const std::string& what, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidArgument, what + ": " + e.what());
  }
}

}  // namespace

std::string EvalOptions::to_json() const { return eval_to_json(*this).dump(); }

EvalOptions EvalOptions::from_json(const std::string& text) {
  return parse_guarded("evaluation options", [&] { return eval_from_json(json::parse(text)); });
}

std::string model_options_json(const ModelOptions& mo) { return model_to_json(mo).dump(); }

ModelOptions model_options_from_json(const std::string& text) {
  return parse_guarded("model options", [&] { return model_from_json(json::parse(text)); });
}

std::vector<int> inference_tasks(const ModelBundle& bundle, const std::vector<PlanRecord>& records, bool gt_task) {
  require(bundle.model != nullptr, ErrorCode::kInvalidArgument, "no planning model given");
  if (bundle.model->config().layout.task_mode == TaskCond::kNone) return std::vector<int>(records.size(), -1);
  if (gt_task) {
    std::vector<int> t;
    for (const auto& r : records) t.push_back(r.task);
    return t;
  }
  require(bundle.classifier != nullptr, ErrorCode::kInvalidArgument,
          "task-conditioned planning needs a task classifier or ground-truth tasks");
  return bundle.classifier->predict(records);
}

std::vector<HorizonPredictions> predict(const ModelBundle& bundle, const Dataset& data, const EvalOptions& opts) {
  require(bundle.model != nullptr, ErrorCode::kInvalidArgument, "no planning model given");
  require(!opts.seeds.empty(), ErrorCode::kInvalidArgument, "at least one sampling seed required");
  const DenoiserConfig& mc = bundle.model->config();
  const NoiseSchedule sched = make_schedule(mc.schedule, mc.diffusion_steps);
  const TaskActionMap* tm = bundle.task_map ? bundle.task_map : &data.task_map;
  std::vector<int> hs = opts.horizons;
  if (hs.empty())
    for (int h : data.horizons())
      if (std::count(mc.layout.horizons.begin(), mc.layout.horizons.end(), h)) hs.push_back(h);
  require(!hs.empty(), ErrorCode::kInvalidArgument, "dataset has no records for the model's horizons");
  if (bundle.endpoint_model)
    require(bundle.endpoint_model->config().diffusion_steps == mc.diffusion_steps, ErrorCode::kInvalidArgument,
            "endpoint and interior models use different diffusion step counts");

  std::vector<HorizonPredictions> out;
  for (int h : hs) {
    HorizonPredictions hp;
    hp.horizon = h;
    std::vector<PlanRecord> recs;
    for (std::size_t i = 0; i < data.records.size(); ++i)
      if (data.records[i].horizon() == h) {
        hp.record_index.push_back(i);
        recs.push_back(data.records[i]);
      }
    require(!recs.empty(), ErrorCode::kInvalidArgument, "no records with horizon " + std::to_string(h));
    hp.tasks = inference_tasks(bundle, recs, opts.gt_task);
    std::vector<ConditionSet> conds;
    std::vector<std::uint64_t> keys;
    for (std::size_t i = 0; i < recs.size(); ++i) {
      conds.push_back(record_condition(recs[i], hp.tasks[i], opts.vpa));
      keys.push_back(hp.record_index[i]);
    }
    for (std::uint64_t seed : opts.seeds) {
      SamplerConfig sc = opts.sampler;
      sc.seed = seed;
      SeedPredictions sp;
      sp.seed = seed;
      if (bundle.endpoint_model) {
        for (auto& r : two_stage_plans(*bundle.endpoint_model, *bundle.model, conds, keys, sched, sc, tm)) {
          sp.plans.push_back(std::move(r.plan));
          sp.endpoints.push_back(std::move(r.endpoints));
        }
      } else {
        for (auto& r : sample_chains(*bundle.model, conds, keys, sched, sc, tm)) sp.plans.push_back(std::move(r.plan));
      }
      hp.seeds.push_back(std::move(sp));
    }
    out.push_back(std::move(hp));
  }
  return out;
}

EvalReport evaluate_model(const ModelBundle& bundle, const Dataset& data, const EvalOptions& opts,
                          std::vector<PredictionRow>* first_seed_predictions) {
  const auto preds = predict(bundle, data, opts);
  const DenoiserConfig& mc = bundle.model->config();
  const NoiseSchedule sched = make_schedule(mc.schedule, mc.diffusion_steps);
  const TaskActionMap* tm = bundle.task_map ? bundle.task_map : &data.task_map;
  EvalReport report;
  report.seeds = opts.seeds;
  report.samples_per_query = opts.probabilistic ? opts.prob_samples : 1;
  if (first_seed_predictions) first_seed_predictions->clear();
  for (const auto& hp : preds) {
    std::vector<Plan> gts;
    std::vector<PlanRecord> recs;
    for (std::size_t i : hp.record_index) {
      gts.push_back(data.records[i].actions);
      recs.push_back(data.records[i]);
    }
    HorizonReport hr;
    hr.horizon = hp.horizon;
    hr.metrics.count = gts.size();
    double endpoint_sr = 0.0;
    for (const auto& sp : hp.seeds) {
      hr.metrics.sr += success_rate(sp.plans, gts);
      hr.metrics.macc += mean_accuracy(sp.plans, gts);
      hr.metrics.miou += miou(sp.plans, gts, opts.miou_batch);
      if (!sp.endpoints.empty()) {
        std::vector<Plan> ge;
        for (const auto& g : gts) ge.push_back({g.front(), g.back()});
        endpoint_sr += success_rate(sp.endpoints, ge);
      }
    }
    const double ns = static_cast<double>(hp.seeds.size());
    hr.metrics.sr /= ns;
    hr.metrics.macc /= ns;
    hr.metrics.miou /= ns;
    if (!hp.seeds.front().endpoints.empty())
      report.extra["T" + std::to_string(hp.horizon) + ".endpoint_SR"] = 100.0 * endpoint_sr / ns;

    if (opts.probabilistic) {
      auto groups = group_queries(recs);
      if (opts.max_groups > 0 && static_cast<int>(groups.size()) > opts.max_groups) groups.resize(opts.max_groups);
      ProbMetrics acc;
      for (std::uint64_t seed : opts.seeds) {
        SamplerConfig sc = opts.sampler;
        sc.seed = seed;
        std::vector<ConditionSet> conds;
        std::vector<std::uint64_t> keys;
        for (std::size_t g = 0; g < groups.size(); ++g) {
          const std::size_t rep = groups[g].representative;
          const ConditionSet c = record_condition(recs[rep], hp.tasks[rep], opts.vpa);
          for (int i = 0; i < opts.prob_samples; ++i) {
            conds.push_back(c);
            keys.push_back((static_cast<std::uint64_t>(g) << 32) | static_cast<std::uint64_t>(i));
          }
        }
        const auto chains = sample_chains(*bundle.model, conds, keys, sched, sc, tm);
        std::vector<std::vector<Plan>> samples(groups.size());
        for (std::size_t i = 0; i < chains.size(); ++i) samples[i / opts.prob_samples].push_back(chains[i].plan);
        const ProbMetrics pm = prob_metrics(groups, samples);
        acc.nll += pm.nll;
        acc.kl += pm.kl;
        acc.mode_prec += pm.mode_prec;
        acc.mode_rec += pm.mode_rec;
      }
      hr.prob = ProbMetrics{acc.nll / ns, acc.kl / ns, acc.mode_prec / ns, acc.mode_rec / ns};
      report.extra["T" + std::to_string(hp.horizon) + ".groups"] = static_cast<double>(groups.size());
    }
    report.horizons.push_back(hr);
    if (first_seed_predictions)
      for (std::size_t i = 0; i < hp.record_index.size(); ++i)
        first_seed_predictions->push_back(
            {std::to_string(hp.record_index[i]), hp.tasks[i], hp.seeds.front().plans[i]});
  }
  return report;
}

EvalReport evaluate_predictions(const Dataset& data, const std::vector<PredictionRow>& rows, int miou_batch) {
  std::map<int, std::pair<std::vector<Plan>, std::vector<Plan>>> by_h;
  for (const auto& r : rows) {
    std::size_t idx = 0;
    try {
      std::size_t used = 0;
      idx = std::stoul(r.query_id, &used);
      require(used == r.query_id.size(), ErrorCode::kFormat, "");
    } catch (const std::exception&) {
      fail(ErrorCode::kFormat, "query id '" + r.query_id + "' is not a record index");
    }
    require(idx < data.records.size(), ErrorCode::kInvalidArgument,
            "query id " + r.query_id + " outside the dataset (" + std::to_string(data.records.size()) + " records)");
    const Plan& gt = data.records[idx].actions;
    require(r.plan.size() == gt.size(), ErrorCode::kShapeMismatch,
            "query " + r.query_id + ": plan length " + std::to_string(r.plan.size()) + " != horizon " +
                std::to_string(gt.size()));
    auto& [p, g] = by_h[static_cast<int>(gt.size())];
    p.push_back(r.plan);
    g.push_back(gt);
  }
  EvalReport report;
  for (const auto& [h, pg] : by_h) {
    HorizonReport hr;
    hr.horizon = h;
    hr.metrics = {success_rate(pg.first, pg.second), mean_accuracy(pg.first, pg.second),
                  miou(pg.first, pg.second, miou_batch), pg.first.size()};
    report.horizons.push_back(hr);
  }
  report.extra["miou_batch"] = miou_batch;
  return report;
}

std::unique_ptr<Denoiser<float>> build_model(const Dataset& train, const TrainConfig& tc, const ModelOptions& mo) {
  DenoiserConfig c = denoiser_preset(mo.variant, make_layout(train, tc), mo.full_scale);
  if (!mo.widths.empty()) c.widths = mo.widths;
  if (mo.heads > 0) c.heads = mo.heads;
  if (tc.horizon_mode == HorizonCond::kMoe && mo.moe) c.moe = mo.moe;
  c.diffusion_steps = tc.diffusion_steps;
  c.schedule = tc.schedule;
  c.seed = tc.seed;
  return std::make_unique<Denoiser<float>>(c);
}

void PipelineConfig::apply_seed(std::uint64_t s) {
  seed = s;
  data.seed = s;
  classifier.seed = s;
  train.seed = s;
  eval.sampler.seed = s;
}

std::string PipelineConfig::to_json() const {
  json j;
  j["data"] = json::parse(data.to_json());
  j["split_ratio"] = split_ratio;
  j["classifier"] = {{"epochs", classifier.epochs}, {"batch_size", classifier.batch_size}, {"lr", classifier.lr},
                     {"seed", classifier.seed}};
  j["train"] = json::parse(train.to_json());
  j["model"] = model_to_json(model);
  j["two_stage"] = two_stage;
  j["eval"] = eval_to_json(eval);
  j["seed"] = seed;
  return j.dump();
}

PipelineConfig PipelineConfig::from_json(const std::string& text) {
  return parse_guarded("pipeline config", [&] {
    const json j = json::parse(text);
    PipelineConfig c;
    if (j.contains("data")) c.data = SyntheticConfig::from_json(j["data"].dump());
    c.split_ratio = j.value("split_ratio", c.split_ratio);
    if (j.contains("classifier")) {
      const auto& k = j["classifier"];
      c.classifier.epochs = k.value("epochs", c.classifier.epochs);
      c.classifier.batch_size = k.value("batch_size", c.classifier.batch_size);
      c.classifier.lr = k.value("lr", c.classifier.lr);
      c.classifier.seed = k.value("seed", c.classifier.seed);
    }
    if (j.contains("train")) c.train = TrainConfig::from_json(j["train"].dump());
    if (j.contains("model")) c.model = model_from_json(j["model"]);
    c.two_stage = j.value("two_stage", c.two_stage);
    if (j.contains("eval")) c.eval = eval_from_json(j["eval"]);
    if (j.contains("seed")) c.apply_seed(j["seed"].get<std::uint64_t>());
    return c;
  });
}

PipelineResult run_pipeline(const PipelineConfig& cfg, const ProgressFn& progress) {
  PipelineResult res;
  SplitDatasets split = generate_split(cfg.data, cfg.train.horizons, cfg.split_ratio);
  res.train_data = std::move(split.train);
  res.test_data = std::move(split.test);

  const bool needs_classifier = cfg.train.task_mode != TaskCond::kNone && !cfg.eval.gt_task;
  if (needs_classifier) {
    ClassifierConfig cc{res.train_data.obs_dim, res.train_data.num_tasks, 128, cfg.classifier.seed};
    res.classifier_model = std::make_unique<TaskClassifier>(cc);
    res.classifier = train_classifier(*res.classifier_model, res.train_data, &res.test_data, cfg.classifier);
  }

  TrainConfig tc = cfg.train;
  if (cfg.two_stage) {
    require(tc.horizons.size() == 1, ErrorCode::kInvalidArgument, "two-stage planning trains one horizon at a time");
    tc.endpoint_conditioned = true;
  }
  res.model = build_model(res.train_data, tc, cfg.model);
  res.train = train_model(*res.model, res.train_data, tc, progress);

  if (cfg.two_stage) {
    const Dataset ends = endpoint_dataset(res.train_data, tc.horizons.front());
    const TrainConfig ec = endpoint_train_config(cfg.train);
    res.endpoint_model = std::make_unique<Denoiser<float>>(endpoint_model_config(cfg.model.variant, ends, cfg.train));
    res.endpoint_train = train_model(*res.endpoint_model, ends, ec, progress);
  }

  ModelBundle bundle{res.model.get(), res.endpoint_model.get(), res.classifier_model.get(), &res.train_data.task_map};
  res.report = evaluate_model(bundle, res.test_data, cfg.eval, &res.predictions);
  if (needs_classifier) {
    res.report.extra["classifier_train_acc"] = 100.0 * res.classifier.train_accuracy;
    res.report.extra["classifier_test_acc"] = 100.0 * res.classifier.test_accuracy;
  }
  res.report.extra["train_final_loss"] = res.train.final_loss;
  res.report.extra["parameters"] = static_cast<double>(res.train.parameter_count);
  return res;
}

}  // namespace pdpp
