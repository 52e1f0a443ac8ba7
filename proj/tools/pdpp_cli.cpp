// pdpp: data generation, training, sampling and evaluation for diffusion
// procedure planning.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pdpp/pdpp.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RuntimeFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void check(pdpp_status s, const std::string& what) {
  if (s != PDPP_OK) throw RuntimeFailure(what + ": " + pdpp_status_name(s) + ": " + pdpp_last_error());
}

std::string take(char* s) {
  std::string out = s ? s : "";
  pdpp_free_string(s);
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeFailure("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write " + tmp.string());
    out << text;
    if (!out.flush()) throw RuntimeFailure("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw RuntimeFailure("cannot rename " + tmp.string() + ": " + ec.message());
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// handles ------------------------------------------------------------------

template <class T, void (*Free)(T*)>
struct Handle {
  T* p = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  ~Handle() { Free(p); }
  T** out() { return &p; }
  T* get() const { return p; }
};
using Dataset = Handle<pdpp_dataset, pdpp_dataset_free>;
using Classifier = Handle<pdpp_classifier, pdpp_classifier_free>;
using Model = Handle<pdpp_model, pdpp_model_free>;

void load(Dataset& d, const std::string& path) { check(pdpp_dataset_load(path.c_str(), d.out()), "loading " + path); }
void load(Classifier& c, const std::string& path) {
  check(pdpp_classifier_load(path.c_str(), c.out()), "loading " + path);
}
void load(Model& m, const std::string& path) { check(pdpp_model_load(path.c_str(), m.out()), "loading " + path); }

// run directory + manifest ------------------------------------------------

struct Run {
  std::string command;
  json config;
  std::uint64_t seed = 0;
  fs::path dir;
  json outputs = json::object();
  json metrics = json::object();
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  std::string started;

  fs::path output(const std::string& name) {
    const fs::path p = dir / name;
    outputs[name] = p.string();
    return p;
  }

  void open(const std::string& run_root, const std::string& out_dir) {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
    started = stamp;
    if (!out_dir.empty()) {
      dir = out_dir;
    } else {
      char hash[17];
      std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a(config.dump())));
      const std::string base = std::string(stamp) + "-" + std::string(hash).substr(0, 10);
      dir = fs::path(run_root) / base;
      for (int i = 1; fs::exists(dir); ++i) dir = fs::path(run_root) / (base + "." + std::to_string(i));
    }
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw RuntimeFailure("cannot create run directory " + dir.string() + ": " + ec.message());
  }

  void finish() {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    json m = {{"command", command}, {"config", config},         {"seed", seed},
              {"version", pdpp_version()}, {"started", started}, {"wall_clock_seconds", secs},
              {"outputs", outputs},   {"metrics", metrics}};
    write_atomic(dir / "manifest.json", m.dump(2) + "\n");
    std::cerr << "run directory: " << dir.string() << "\n";
  }
};

json headline(const std::string& report_json) {
  json out = json::object();
  const json r = json::parse(report_json);
  for (const auto& h : r["horizons"]) {
    const std::string p = "T" + std::to_string(h["horizon"].get<int>()) + ".";
    for (const char* k : {"sr", "macc", "miou", "nll", "kl", "mode_prec", "mode_rec"})
      if (h.contains(k)) out[p + k] = h[k];
  }
  if (r.contains("extra"))
    for (auto it = r["extra"].begin(); it != r["extra"].end(); ++it) out[it.key()] = it.value();
  return out;
}

// shared flag groups ------------------------------------------------------

struct Common {
  std::uint64_t seed = 0;
  std::string run_root = "runs";
  std::string out_dir;
  bool quiet = false;

  void add(CLI::App* app) {
    app->add_option("--seed", seed, "Random seed (PDPP_SEED overrides)");
    app->add_option("--run-root", run_root, "Parent directory of run directories");
    app->add_option("--out-dir", out_dir, "Write outputs here instead of a fresh run directory");
    app->add_flag("--quiet", quiet, "No training progress output");
  }
};

struct TrainFlags {
  std::optional<std::string> preset;
  std::optional<std::string> config;
  std::vector<int> horizons;
  std::optional<std::string> task_cond, horizon_cond;
  std::optional<int> steps, batch_size, warmup, diffusion_steps;
  std::optional<double> lr, cfg_dropout, endpoint_weight;
  std::vector<int> milestones;
  bool endpoint_cond = false;
  // model
  std::optional<std::string> variant, moe_site, moe_routing;
  bool full_scale = false;
  std::vector<int> widths;
  std::optional<int> heads;

  void add(CLI::App* app) {
    app->add_option("--train-preset", preset, "desk|crosstask_base|crosstask_how|crosstask_how_joint|niv|coin");
    app->add_option("--train-config", config, "Training config JSON file");
    app->add_option("--horizons", horizons, "Plan horizons trained jointly")->delimiter(',');
    app->add_option("--task-cond", task_cond, "none|concat|mask");
    app->add_option("--horizon-cond", horizon_cond, "none|concat|moe");
    app->add_option("--steps", steps, "Training steps");
    app->add_option("--batch-size", batch_size, "Training batch size");
    app->add_option("--warmup", warmup, "Warmup steps");
    app->add_option("--lr", lr, "Peak learning rate");
    app->add_option("--milestones", milestones, "Step-decay milestones")->delimiter(',');
    app->add_option("--diffusion-steps", diffusion_steps, "Diffusion steps N");
    app->add_option("--cfg-dropout", cfg_dropout, "Condition dropout probability");
    app->add_option("--endpoint-weight", endpoint_weight, "Loss weight of a_1 and a_T");
    app->add_flag("--endpoint-cond", endpoint_cond, "Condition on ground-truth a_1 and a_T");
    app->add_option("--variant", variant, "unet3|unet_attn2|transformer12");
    app->add_flag("--full-scale", full_scale, "Full-size model dimensions");
    app->add_option("--widths", widths, "UNet level widths")->delimiter(',');
    app->add_option("--heads", heads, "Attention heads");
    app->add_option("--moe-site", moe_site, "Mixture-of-experts site");
    app->add_option("--moe-routing", moe_routing, "direct|learned");
  }

  json train_json(std::uint64_t seed, bool vpa) const {
    json j = config ? json::parse(read_file(*config)) : json::object();
    if (preset) j["preset"] = *preset;
    if (!horizons.empty()) j["horizons"] = horizons;
    if (task_cond) j["task_mode"] = *task_cond;
    if (horizon_cond) j["horizon_mode"] = *horizon_cond;
    if (steps) j["steps"] = *steps;
    if (batch_size) j["batch_size"] = *batch_size;
    if (warmup) j["warmup_steps"] = *warmup;
    if (lr) j["lr_peak"] = *lr;
    if (!milestones.empty()) j["milestones"] = milestones;
    if (diffusion_steps) j["diffusion_steps"] = *diffusion_steps;
    if (cfg_dropout) j["cfg_dropout"] = *cfg_dropout;
    if (endpoint_weight) j["endpoint_weight"] = *endpoint_weight;
    if (endpoint_cond) j["endpoint_conditioned"] = true;
    if (vpa) j["vpa"] = true;
    j["seed"] = seed;
    return j;
  }

  json model_json() const {
    json j = json::object();
    if (variant) j["variant"] = *variant;
    if (full_scale) j["full_scale"] = true;
    if (!widths.empty()) j["widths"] = widths;
    if (heads) j["heads"] = *heads;
    if (moe_site || moe_routing) {
      j["moe"] = json::object();
      if (moe_site) j["moe"]["site"] = *moe_site;
      if (moe_routing) j["moe"]["routing"] = *moe_routing;
    }
    return j;
  }
};

struct EvalFlags {
  std::string sampler = "ddim";
  int ddim_steps = 10;
  double eta = 0.0;
  std::optional<double> cfg_lambda;
  std::string baseline = "none";
  std::vector<std::uint64_t> seeds;
  bool gt_task = false;
  bool probabilistic = false;
  int prob_samples = 1500;
  int max_groups = 0;
  int miou_batch = 1;
  int sample_batch = 256;
  std::vector<int> horizons;

  void add(CLI::App* app, bool with_seeds, bool with_lambda = true) {
    app->add_option("--sampler", sampler, "ddpm|ddim");
    app->add_option("--ddim-steps", ddim_steps, "DDIM steps");
    app->add_option("--eta", eta, "DDIM eta");
    if (with_lambda) app->add_option("--cfg-lambda", cfg_lambda, "Guidance scale");
    app->add_option("--baseline", baseline, "none|deterministic|noise");
    app->add_flag("--gt-task", gt_task, "Use ground-truth task labels instead of the classifier");
    app->add_option("--sample-batch", sample_batch, "Chains per denoiser call");
    app->add_option("--eval-horizons", horizons, "Restrict evaluation to these horizons")->delimiter(',');
    if (with_seeds) {
      app->add_option("--seeds", seeds, "Sampling seeds averaged over")->delimiter(',');
      app->add_flag("--probabilistic", probabilistic, "Probabilistic metrics over query groups");
      app->add_option("--prob-samples", prob_samples, "Samples per query group");
      app->add_option("--max-groups", max_groups, "Cap on query groups (0 = all)");
      app->add_option("--miou-batch", miou_batch, "mIoU batch size");
    }
  }

  json to_json(std::uint64_t seed, bool vpa) const {
    json s = {{"method", sampler}, {"ddim_steps", ddim_steps}, {"eta", eta}, {"baseline", baseline},
              {"seed", seed},      {"batch", sample_batch}};
    s["cfg_lambda"] = cfg_lambda ? json(*cfg_lambda) : json(nullptr);
    json j = {{"sampler", s},
              {"gt_task", gt_task || vpa},
              {"vpa", vpa},
              {"probabilistic", probabilistic},
              {"prob_samples", prob_samples},
              {"max_groups", max_groups},
              {"miou_batch", miou_batch},
              {"horizons", horizons}};
    j["seeds"] = seeds.empty() ? std::vector<std::uint64_t>{seed} : seeds;
    return j;
  }
};

void print_progress(int step, double loss, double lr, void*) {
  if (step % 100 == 0 || step == 1) std::cerr << "step " << step << " loss " << loss << " lr " << lr << "\n";
}

pdpp_progress_fn progress_fn(const Common& c) { return c.quiet ? nullptr : print_progress; }

std::uint64_t env_seed(std::uint64_t fallback) {
  const char* s = std::getenv("PDPP_SEED");
  if (!s || !*s) return fallback;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (errno || *end || s[0] == '-') throw CLI::ValidationError("PDPP_SEED", std::string("not an unsigned integer: ") + s);
  return v;
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    std::size_t used = 0;
    try {
      out.push_back(std::stod(tok, &used));
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != tok.size()) throw CLI::ValidationError("--cfg-lambda", "not a number: " + tok);
  }
  return out;
}

std::string lambda_tag(double v) {
  std::ostringstream ss;
  ss << v;
  return ss.str();
}

// pipeline config assembled from flags
json pipeline_json(const std::optional<std::string>& file, bool toy, const std::optional<double>& split,
                   const TrainFlags& tf, const EvalFlags& ef, bool two_stage, bool vpa, std::uint64_t seed) {
  json j = file ? json::parse(read_file(*file)) : json::object();
  if (toy) j["data"]["preset"] = "toy";
  if (split) j["split_ratio"] = *split;
  json t = tf.train_json(seed, vpa);
  if (j.contains("train"))
    for (auto it = t.begin(); it != t.end(); ++it) j["train"][it.key()] = it.value();
  else
    j["train"] = t;
  if (!j["train"].contains("preset") && !j["train"].contains("steps")) j["train"]["preset"] = "desk";
  json m = tf.model_json();
  for (auto it = m.begin(); it != m.end(); ++it) j["model"][it.key()] = it.value();
  j["eval"] = ef.to_json(seed, vpa);
  if (two_stage) j["two_stage"] = true;
  j["seed"] = seed;
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffusion procedure planning"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(pdpp_version()));

  // gen-data
  Common gd_c;
  std::optional<std::string> gd_config;
  bool gd_toy = false;
  std::vector<int> gd_horizons = {3};
  double gd_split = 0.7;
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic benchmark and split it");
  gd_c.add(gen);
  gen->add_option("--config", gd_config, "Generator config JSON file");
  gen->add_flag("--toy", gd_toy, "Single-path benchmark (one valid plan per query)");
  gen->add_option("--horizons", gd_horizons, "Window lengths to extract")->delimiter(',');
  gen->add_option("--split", gd_split, "Train fraction of videos");

  // train-classifier
  Common tc_c;
  std::string tc_train, tc_test;
  int tc_epochs = 30, tc_batch = 32, tc_hidden = 128;
  double tc_lr = 1e-3;
  auto* tcl = app.add_subcommand("train-classifier", "Train the task classifier");
  tc_c.add(tcl);
  tcl->add_option("--train", tc_train, "Training dataset")->required();
  tcl->add_option("--test", tc_test, "Held-out dataset");
  tcl->add_option("--epochs", tc_epochs, "Epochs");
  tcl->add_option("--batch-size", tc_batch, "Batch size");
  tcl->add_option("--lr", tc_lr, "Learning rate");
  tcl->add_option("--hidden", tc_hidden, "Hidden width");

  // train
  Common tr_c;
  TrainFlags tr_f;
  std::string tr_data;
  bool tr_vpa = false;
  auto* tr = app.add_subcommand("train", "Train a planning model");
  tr_c.add(tr);
  tr_f.add(tr);
  tr->add_option("--data", tr_data, "Training dataset")->required();
  tr->add_flag("--vpa", tr_vpa, "Goal given as task label, o_g zeroed");

  // train-endpoint
  Common te_c;
  TrainFlags te_f;
  std::string te_data;
  int te_horizon = 3;
  auto* te = app.add_subcommand("train-endpoint", "Train the {a_1, a_T} model for two-stage planning");
  te_c.add(te);
  te_f.add(te);
  te->add_option("--data", te_data, "Training dataset")->required();
  te->add_option("--horizon", te_horizon, "Source horizon of the endpoint pairs");

  // sample / eval / sweep share model inputs
  struct Inputs {
    std::string model, endpoint, classifier, data, task_map;
    void add(CLI::App* a, bool model_required) {
      auto* m = a->add_option("--model", model, "Planning model checkpoint");
      if (model_required) m->required();
      a->add_option("--endpoint-model", endpoint, "Endpoint model for two-stage planning");
      a->add_option("--classifier", classifier, "Task classifier checkpoint");
      a->add_option("--data", data, "Query dataset")->required();
      a->add_option("--task-map-data", task_map, "Dataset providing the task/action map (default: --data)");
    }
  };

  Common sa_c;
  EvalFlags sa_e;
  Inputs sa_in;
  bool sa_vpa = false;
  std::string sa_out;
  auto* sa = app.add_subcommand("sample", "Sample one plan per query");
  sa_c.add(sa);
  sa_e.add(sa, false);
  sa_in.add(sa, true);
  sa->add_flag("--vpa", sa_vpa, "Goal given as task label, o_g zeroed");
  sa->add_option("--out", sa_out, "Prediction file (default: run directory)");

  Common ev_c;
  EvalFlags ev_e;
  Inputs ev_in;
  bool ev_vpa = false;
  std::string ev_preds, ev_kind, ev_train;
  int ev_batch = 1;
  bool ev_task_limited = false;
  auto* ev = app.add_subcommand("eval", "Evaluate a model, a prediction dump or a baseline");
  ev_c.add(ev);
  ev_e.add(ev, true);
  ev_in.add(ev, false);
  ev->add_flag("--vpa", ev_vpa, "Goal given as task label, o_g zeroed");
  ev->add_option("--preds", ev_preds, "Re-score this prediction file");
  ev->add_option("--batch-size", ev_batch, "mIoU batch size for --preds");
  ev->add_option("--plan-baseline", ev_kind, "random|retrieval");
  ev->add_option("--train", ev_train, "Training dataset for retrieval");
  ev->add_flag("--task-limited", ev_task_limited, "Random baseline draws from the task's actions");

  Common sw_c;
  EvalFlags sw_e;
  TrainFlags sw_f;
  Inputs sw_in;
  bool sw_vpa = false, sw_toy = false;
  std::string sw_lambdas, sw_task_conds, sw_horizon_conds, sw_horizon_list;
  std::optional<std::string> sw_pipeline;
  auto* sw = app.add_subcommand("sweep", "Ablation sweeps: guidance scale, horizon, conditioning");
  sw_c.add(sw);
  sw_e.add(sw, true, false);
  sw->add_option("--model", sw_in.model, "Planning model (guidance sweep)");
  sw->add_option("--classifier", sw_in.classifier, "Task classifier");
  sw->add_option("--data", sw_in.data, "Query dataset (guidance sweep)");
  sw->add_option("--task-map-data", sw_in.task_map, "Dataset providing the task/action map");
  sw->add_option("--cfg-lambda", sw_lambdas, "Guidance scales, comma separated");
  sw->add_option("--task-conds", sw_task_conds, "Task conditioning modes to compare");
  sw->add_option("--horizon-conds", sw_horizon_conds, "Horizon conditioning modes to compare");
  sw->add_option("--horizon-list", sw_horizon_list, "Horizons trained separately");
  sw->add_option("--pipeline-config", sw_pipeline, "Base pipeline config for training sweeps");
  sw->add_flag("--toy", sw_toy, "Single-path benchmark");
  sw->add_flag("--vpa", sw_vpa, "Goal given as task label, o_g zeroed");
  sw_f.add(sw);

  Common pl_c;
  EvalFlags pl_e;
  TrainFlags pl_f;
  std::optional<std::string> pl_config;
  std::optional<double> pl_split;
  bool pl_toy = false, pl_two = false, pl_vpa = false;
  auto* pl = app.add_subcommand("pipeline", "gen-data, train-classifier, train, sample and eval in one run");
  pl_c.add(pl);
  pl_e.add(pl, true);
  pl_f.add(pl);
  pl->add_option("--config", pl_config, "Pipeline config JSON file");
  pl->add_option("--split", pl_split, "Train fraction of videos");
  pl->add_flag("--toy", pl_toy, "Single-path benchmark");
  pl->add_flag("--two-stage", pl_two, "Endpoint model followed by an endpoint-conditioned model");
  pl->add_flag("--vpa", pl_vpa, "Goal given as task label, o_g zeroed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 1;
  }

  Run run;
  try {
    if (*gen) {
      run.command = "gen-data";
      run.seed = env_seed(gd_c.seed);
      json cfg = gd_config ? json::parse(read_file(*gd_config)) : json::object();
      if (gd_toy) cfg["preset"] = "toy";
      cfg["seed"] = run.seed;
      run.config = {{"data", cfg}, {"horizons", gd_horizons}, {"split", gd_split}};
      run.open(gd_c.run_root, gd_c.out_dir);
      Dataset train, test;
      const std::string text = cfg.dump();
      check(pdpp_dataset_generate(text.c_str(), gd_horizons.data(), gd_horizons.size(), gd_split, train.out(),
                                  test.out()),
            "generating data");
      check(pdpp_dataset_save(train.get(), run.output("train.pdpp").c_str()), "saving train split");
      check(pdpp_dataset_save(test.get(), run.output("test.pdpp").c_str()), "saving test split");
      char* s1 = nullptr;
      char* s2 = nullptr;
      check(pdpp_dataset_summary(train.get(), &s1), "summary");
      check(pdpp_dataset_summary(test.get(), &s2), "summary");
      run.metrics = {{"train", json::parse(take(s1))}, {"test", json::parse(take(s2))}};
      std::cout << run.metrics.dump(2) << "\n";
    } else if (*tcl) {
      run.command = "train-classifier";
      run.seed = env_seed(tc_c.seed);
      run.config = {{"train", tc_train}, {"test", tc_test},  {"epochs", tc_epochs}, {"batch_size", tc_batch},
                    {"lr", tc_lr},       {"hidden", tc_hidden}, {"seed", run.seed}};
      run.open(tc_c.run_root, tc_c.out_dir);
      Dataset train, test;
      load(train, tc_train);
      if (!tc_test.empty()) load(test, tc_test);
      Classifier clf;
      char* rep = nullptr;
      const std::string text = run.config.dump();
      check(pdpp_classifier_train(train.get(), test.get(), text.c_str(), clf.out(), &rep), "training classifier");
      run.metrics = json::parse(take(rep));
      check(pdpp_classifier_save(clf.get(), run.output("classifier.ckpt").c_str()), "saving classifier");
      std::cout << run.metrics.dump(2) << "\n";
    } else if (*tr || *te) {
      const bool endpoint = te->parsed();
      Common& c = endpoint ? te_c : tr_c;
      TrainFlags& f = endpoint ? te_f : tr_f;
      run.command = endpoint ? "train-endpoint" : "train";
      run.seed = env_seed(c.seed);
      const json tj = f.train_json(run.seed, !endpoint && tr_vpa);
      const json mj = f.model_json();
      run.config = {{"data", endpoint ? te_data : tr_data}, {"train", tj}, {"model", mj}};
      if (endpoint) run.config["horizon"] = te_horizon;
      run.open(c.run_root, c.out_dir);
      Dataset data;
      load(data, endpoint ? te_data : tr_data);
      Model model;
      char* rep = nullptr;
      const std::string ts = tj.dump(), ms = mj.dump();
      if (endpoint)
        check(pdpp_model_train_endpoint(data.get(), te_horizon, ts.c_str(), ms.c_str(), progress_fn(c), nullptr,
                                        model.out(), &rep),
              "training endpoint model");
      else
        check(pdpp_model_train(data.get(), ts.c_str(), ms.c_str(), progress_fn(c), nullptr, model.out(), &rep),
              "training model");
      run.metrics = json::parse(take(rep));
      check(pdpp_model_save(model.get(), run.output(endpoint ? "endpoint.ckpt" : "model.ckpt").c_str()),
            "saving model");
      std::cout << run.metrics.dump(2) << "\n";
    } else if (*sa) {
      run.command = "sample";
      run.seed = env_seed(sa_c.seed);
      const json ej = sa_e.to_json(run.seed, sa_vpa);
      run.config = {{"model", sa_in.model},       {"endpoint_model", sa_in.endpoint}, {"classifier", sa_in.classifier},
                    {"data", sa_in.data},         {"task_map_data", sa_in.task_map},  {"eval", ej}};
      run.open(sa_c.run_root, sa_c.out_dir);
      Model model, endpoint;
      Classifier clf;
      Dataset data, tm;
      load(model, sa_in.model);
      if (!sa_in.endpoint.empty()) load(endpoint, sa_in.endpoint);
      if (!sa_in.classifier.empty()) load(clf, sa_in.classifier);
      load(data, sa_in.data);
      if (!sa_in.task_map.empty()) load(tm, sa_in.task_map);
      char* tsv = nullptr;
      const std::string es = ej.dump();
      check(pdpp_sample(model.get(), endpoint.get(), clf.get(), data.get(), tm.get(), es.c_str(), &tsv), "sampling");
      const std::string preds = take(tsv);
      const fs::path out = sa_out.empty() ? run.output("predictions.tsv") : fs::path(sa_out);
      if (!sa_out.empty()) run.outputs["predictions.tsv"] = sa_out;
      write_atomic(out, preds);
      run.metrics["queries"] = std::count(preds.begin(), preds.end(), '\n');
      std::cout << out.string() << "\n";
    } else if (*ev) {
      run.command = "eval";
      run.seed = env_seed(ev_c.seed);
      char* text = nullptr;
      char* js = nullptr;
      if (!ev_preds.empty()) {
        run.config = {{"preds", ev_preds}, {"data", ev_in.data}, {"batch_size", ev_batch}};
        run.open(ev_c.run_root, ev_c.out_dir);
        Dataset data;
        load(data, ev_in.data);
        const std::string preds = read_file(ev_preds);
        check(pdpp_evaluate_predictions(data.get(), preds.c_str(), ev_batch, &text, &js), "scoring predictions");
      } else if (!ev_kind.empty()) {
        run.config = {{"baseline", ev_kind}, {"data", ev_in.data}, {"train", ev_train},
                      {"task_limited", ev_task_limited}, {"seed", run.seed}};
        run.open(ev_c.run_root, ev_c.out_dir);
        Dataset data, train;
        load(data, ev_in.data);
        if (!ev_train.empty()) load(train, ev_train);
        check(pdpp_baseline(train.get(), data.get(), ev_kind.c_str(), run.seed, ev_task_limited ? 1 : 0, &text, &js),
              "baseline");
      } else {
        if (ev_in.model.empty()) throw CLI::RequiredError("--model, --preds or --plan-baseline");
        const json ej = ev_e.to_json(run.seed, ev_vpa);
        run.config = {{"model", ev_in.model}, {"endpoint_model", ev_in.endpoint}, {"classifier", ev_in.classifier},
                      {"data", ev_in.data},   {"task_map_data", ev_in.task_map},  {"eval", ej}};
        run.open(ev_c.run_root, ev_c.out_dir);
        Model model, endpoint;
        Classifier clf;
        Dataset data, tm;
        load(model, ev_in.model);
        if (!ev_in.endpoint.empty()) load(endpoint, ev_in.endpoint);
        if (!ev_in.classifier.empty()) load(clf, ev_in.classifier);
        load(data, ev_in.data);
        if (!ev_in.task_map.empty()) load(tm, ev_in.task_map);
        const std::string es = ej.dump();
        check(pdpp_evaluate(model.get(), endpoint.get(), clf.get(), data.get(), tm.get(), es.c_str(), &text, &js),
              "evaluating");
      }
      const std::string report = take(text), rj = take(js);
      write_atomic(run.output("report.txt"), report);
      run.metrics = headline(rj);
      std::cout << report;
    } else if (*sw) {
      run.command = "sweep";
      run.seed = env_seed(sw_c.seed);
      if (!sw_lambdas.empty()) {
        const auto lambdas = parse_list(sw_lambdas);
        if (sw_in.model.empty() || sw_in.data.empty()) throw CLI::RequiredError("--model and --data");
        run.config = {{"model", sw_in.model}, {"classifier", sw_in.classifier}, {"data", sw_in.data},
                      {"lambdas", lambdas},   {"eval", sw_e.to_json(run.seed, sw_vpa)}};
        run.open(sw_c.run_root, sw_c.out_dir);
        Model model;
        Classifier clf;
        Dataset data, tm;
        load(model, sw_in.model);
        if (!sw_in.classifier.empty()) load(clf, sw_in.classifier);
        load(data, sw_in.data);
        if (!sw_in.task_map.empty()) load(tm, sw_in.task_map);
        for (double l : lambdas) {
          EvalFlags e = sw_e;
          e.cfg_lambda = l;
          const std::string es = e.to_json(run.seed, sw_vpa).dump();
          char* text = nullptr;
          char* js = nullptr;
          check(pdpp_evaluate(model.get(), nullptr, clf.get(), data.get(), tm.get(), es.c_str(), &text, &js),
                "evaluating lambda " + lambda_tag(l));
          const std::string report = take(text);
          write_atomic(run.output("report_lambda_" + lambda_tag(l) + ".txt"), report);
          run.metrics["lambda=" + lambda_tag(l)] = headline(take(js));
          std::cout << "=== lambda = " << lambda_tag(l) << "\n" << report;
        }
      } else {
        std::string key;
        std::vector<std::string> values;
        auto split_text = [](const std::string& s) {
          std::vector<std::string> out;
          std::stringstream ss(s);
          std::string t;
          while (std::getline(ss, t, ',')) out.push_back(t);
          return out;
        };
        if (!sw_task_conds.empty()) {
          key = "task_mode";
          values = split_text(sw_task_conds);
        } else if (!sw_horizon_conds.empty()) {
          key = "horizon_mode";
          values = split_text(sw_horizon_conds);
        } else if (!sw_horizon_list.empty()) {
          key = "horizons";
          values = split_text(sw_horizon_list);
        } else {
          throw CLI::RequiredError("--cfg-lambda, --task-conds, --horizon-conds or --horizon-list");
        }
        const json base = pipeline_json(sw_pipeline, sw_toy, std::nullopt, sw_f, sw_e, false, sw_vpa, run.seed);
        run.config = {{"pipeline", base}, {"axis", key}, {"values", values}};
        run.open(sw_c.run_root, sw_c.out_dir);
        for (const auto& v : values) {
          json cfg = base;
          if (key == "horizons") {
            int h = 0;
            try {
              h = std::stoi(v);
            } catch (const std::exception&) {
              throw CLI::ValidationError("--horizon-list", "not an integer: " + v);
            }
            cfg["train"]["horizons"] = std::vector<int>{h};
          } else {
            cfg["train"][key] = v;
          }
          const std::string cs = cfg.dump();
          const std::string sub = (run.dir / (key + "_" + v)).string();
          char* text = nullptr;
          char* js = nullptr;
          check(pdpp_pipeline_run(cs.c_str(), sub.c_str(), progress_fn(sw_c), nullptr, &text, &js),
                "pipeline " + key + "=" + v);
          const std::string report = take(text);
          write_atomic(run.output(key + "_" + v + "/report.txt"), report);
          run.metrics[key + "=" + v] = headline(take(js));
          std::cout << "=== " << key << " = " << v << "\n" << report;
        }
      }
    } else if (*pl) {
      run.command = "pipeline";
      run.seed = env_seed(pl_c.seed);
      run.config = pipeline_json(pl_config, pl_toy, pl_split, pl_f, pl_e, pl_two, pl_vpa, run.seed);
      run.open(pl_c.run_root, pl_c.out_dir);
      const std::string cs = run.config.dump();
      char* text = nullptr;
      char* js = nullptr;
      check(pdpp_pipeline_run(cs.c_str(), run.dir.string().c_str(), progress_fn(pl_c), nullptr, &text, &js),
            "pipeline");
      const std::string report = take(text);
      for (const char* f : {"train.pdpp", "test.pdpp", "classifier.ckpt", "model.ckpt", "endpoint.ckpt",
                            "predictions.tsv"})
        if (fs::exists(run.dir / f)) run.output(f);
      write_atomic(run.output("report.txt"), report);
      run.metrics = headline(take(js));
      std::cout << report;
    }
    run.finish();
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const RuntimeFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const json::exception& e) {
    std::cerr << "error: bad json: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
