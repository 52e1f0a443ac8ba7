#include "pdpp/pdpp.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <map>
#include <new>

#include "json.hpp"
#include "pdpp/binio.hpp"
#include "pdpp/pipeline.hpp"

#ifndef PDPP_VERSION_STRING
#define PDPP_VERSION_STRING "0.0.0"
#endif

struct pdpp_dataset {
  pdpp::Dataset ds;
};
struct pdpp_classifier {
  std::unique_ptr<pdpp::TaskClassifier> clf;
};
struct pdpp_model {
  std::unique_ptr<pdpp::Denoiser<float>> net;
};

namespace {

using nlohmann::json;

thread_local std::string g_last_error;

pdpp_status set_error(pdpp_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

template <class F>
pdpp_status guarded(F&& f) {
  g_last_error.clear();
  try {
    f();
    return PDPP_OK;
  } catch (const pdpp::Error& e) {
    return set_error(static_cast<pdpp_status>(e.code()), e.what());
  } catch (const json::exception& e) {
    return set_error(PDPP_ERR_INVALID_ARGUMENT, std::string("bad json: ") + e.what());
  } catch (const std::bad_alloc&) {
    return set_error(PDPP_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return set_error(PDPP_ERR_INTERNAL, e.what());
  }
}

char* dup(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (!p) throw std::bad_alloc();
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

void put(char** out, const std::string& s) {
  if (out) *out = dup(s);
}

void need(const void* p, const char* what) {
  pdpp::require(p != nullptr, pdpp::ErrorCode::kInvalidArgument, std::string(what) + " is null");
}

std::string text_or(const char* s, const char* fallback) { return s && *s ? s : fallback; }

pdpp::ProgressFn wrap(pdpp_progress_fn fn, void* user) {
  if (!fn) return nullptr;
  return [fn, user](int step, double loss, double lr) { fn(step, loss, lr, user); };
}

pdpp::ClassifierTrainConfig classifier_train_config(const json& j, pdpp::ClassifierTrainConfig c = {}) {
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.seed = j.value("seed", c.seed);
  return c;
}

json train_report_json(const pdpp::TrainReport& r) {
  return {{"final_loss", r.final_loss},
          {"first_loss", r.losses.empty() ? 0.0 : r.losses.front()},
          {"steps", r.losses.size()},
          {"parameters", r.parameter_count}};
}

json classifier_report_json(const pdpp::ClassifierReport& r) {
  return {{"initial_loss", r.initial_loss},
          {"final_loss", r.epoch_loss.empty() ? r.initial_loss : r.epoch_loss.back()},
          {"train_accuracy", r.train_accuracy},
          {"test_accuracy", r.test_accuracy}};
}

pdpp::ModelBundle bundle_of(const pdpp_model* model, const pdpp_model* endpoint, const pdpp_classifier* clf,
                            const pdpp_dataset* data, const pdpp_dataset* tm) {
  need(model, "model");
  need(data, "dataset");
  return {model->net.get(), endpoint ? endpoint->net.get() : nullptr, clf ? clf->clf.get() : nullptr,
          tm ? &tm->ds.task_map : &data->ds.task_map};
}

}  // namespace

extern "C" {

const char* pdpp_version(void) { return PDPP_VERSION_STRING; }

const char* pdpp_last_error(void) { return g_last_error.c_str(); }

const char* pdpp_status_name(pdpp_status s) {
  switch (s) {
    case PDPP_OK: return "ok";
    case PDPP_ERR_INVALID_ARGUMENT: return "invalid argument";
    case PDPP_ERR_SHAPE: return "shape mismatch";
    case PDPP_ERR_IO: return "io error";
    case PDPP_ERR_FORMAT: return "format error";
    case PDPP_ERR_NUMERIC: return "numeric error";
    case PDPP_ERR_INTERNAL: return "internal error";
  }
  return "unknown";
}

void pdpp_free_string(char* s) { std::free(s); }

pdpp_status pdpp_dataset_generate(const char* config_json, const int* horizons, size_t num_horizons,
                                  double split_ratio, pdpp_dataset** train, pdpp_dataset** test) {
  return guarded([&] {
    need(train, "train output");
    need(test, "test output");
    pdpp::require(horizons && num_horizons > 0, pdpp::ErrorCode::kInvalidArgument, "at least one horizon required");
    const auto cfg = pdpp::SyntheticConfig::from_json(text_or(config_json, "{}"));
    auto split = pdpp::generate_split(cfg, std::vector<int>(horizons, horizons + num_horizons), split_ratio);
    auto tr = std::make_unique<pdpp_dataset>(pdpp_dataset{std::move(split.train)});
    auto te = std::make_unique<pdpp_dataset>(pdpp_dataset{std::move(split.test)});
    *train = tr.release();
    *test = te.release();
  });
}

pdpp_status pdpp_dataset_load(const char* path, pdpp_dataset** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "output");
    *out = new pdpp_dataset{pdpp::load_dataset(path)};
  });
}

pdpp_status pdpp_dataset_save(const pdpp_dataset* ds, const char* path) {
  return guarded([&] {
    need(ds, "dataset");
    need(path, "path");
    pdpp::save_dataset(path, ds->ds);
  });
}

pdpp_status pdpp_dataset_summary(const pdpp_dataset* ds, char** out) {
  return guarded([&] {
    need(ds, "dataset");
    std::map<std::string, int> per;
    for (const auto& r : ds->ds.records) ++per[std::to_string(r.horizon())];
    json j = {{"records", ds->ds.records.size()},
              {"num_tasks", ds->ds.num_tasks},
              {"num_actions", ds->ds.num_actions},
              {"obs_dim", ds->ds.obs_dim},
              {"horizons", per}};
    put(out, j.dump());
  });
}

void pdpp_dataset_free(pdpp_dataset* ds) { delete ds; }

pdpp_status pdpp_classifier_train(const pdpp_dataset* train, const pdpp_dataset* test, const char* config_json,
                                  pdpp_classifier** out, char** report_json) {
  return guarded([&] {
    need(train, "train dataset");
    need(out, "output");
    const json j = json::parse(text_or(config_json, "{}"));
    const auto tc = classifier_train_config(j);
    pdpp::ClassifierConfig cc{train->ds.obs_dim, train->ds.num_tasks, j.value("hidden", 128), tc.seed};
    auto c = std::make_unique<pdpp_classifier>();
    c->clf = std::make_unique<pdpp::TaskClassifier>(cc);
    const auto rep = pdpp::train_classifier(*c->clf, train->ds, test ? &test->ds : nullptr, tc);
    put(report_json, classifier_report_json(rep).dump());
    *out = c.release();
  });
}

pdpp_status pdpp_classifier_save(const pdpp_classifier* c, const char* path) {
  return guarded([&] {
    need(c, "classifier");
    need(path, "path");
    pdpp::save_classifier(path, *c->clf);
  });
}

pdpp_status pdpp_classifier_load(const char* path, pdpp_classifier** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "output");
    *out = new pdpp_classifier{pdpp::load_classifier(path)};
  });
}

void pdpp_classifier_free(pdpp_classifier* c) { delete c; }

pdpp_status pdpp_model_train(const pdpp_dataset* train, const char* train_json, const char* model_json,
                             pdpp_progress_fn progress, void* user, pdpp_model** out, char** report_json) {
  return guarded([&] {
    need(train, "train dataset");
    need(out, "output");
    const auto tc = pdpp::TrainConfig::from_json(text_or(train_json, "{}"));
    const auto mo = pdpp::model_options_from_json(text_or(model_json, "{}"));
    auto m = std::make_unique<pdpp_model>();
    m->net = pdpp::build_model(train->ds, tc, mo);
    const auto rep = pdpp::train_model(*m->net, train->ds, tc, wrap(progress, user));
    put(report_json, train_report_json(rep).dump());
    *out = m.release();
  });
}

pdpp_status pdpp_model_train_endpoint(const pdpp_dataset* train, int horizon, const char* train_json,
                                      const char* model_json, pdpp_progress_fn progress, void* user,
                                      pdpp_model** out, char** report_json) {
  return guarded([&] {
    need(train, "train dataset");
    need(out, "output");
    const auto tc = pdpp::TrainConfig::from_json(text_or(train_json, "{}"));
    const auto mo = pdpp::model_options_from_json(text_or(model_json, "{}"));
    const pdpp::Dataset ends = pdpp::endpoint_dataset(train->ds, horizon);
    auto m = std::make_unique<pdpp_model>();
    m->net = std::make_unique<pdpp::Denoiser<float>>(pdpp::endpoint_model_config(mo.variant, ends, tc));
    const auto rep = pdpp::train_model(*m->net, ends, pdpp::endpoint_train_config(tc), wrap(progress, user));
    put(report_json, train_report_json(rep).dump());
    *out = m.release();
  });
}

pdpp_status pdpp_model_save(const pdpp_model* m, const char* path) {
  return guarded([&] {
    need(m, "model");
    need(path, "path");
    pdpp::save_denoiser(path, *m->net);
  });
}

pdpp_status pdpp_model_load(const char* path, pdpp_model** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "output");
    *out = new pdpp_model{pdpp::load_denoiser(path)};
  });
}

pdpp_status pdpp_model_info(const pdpp_model* m, char** out) {
  return guarded([&] {
    need(m, "model");
    json j = json::parse(m->net->config().to_json());
    j["parameters"] = m->net->params().scalar_count();
    put(out, j.dump());
  });
}

void pdpp_model_free(pdpp_model* m) { delete m; }

pdpp_status pdpp_sample(const pdpp_model* model, const pdpp_model* endpoint_model, const pdpp_classifier* classifier,
                        const pdpp_dataset* data, const pdpp_dataset* task_map_source, const char* eval_json,
                        char** predictions_tsv) {
  return guarded([&] {
    const auto bundle = bundle_of(model, endpoint_model, classifier, data, task_map_source);
    auto opts = pdpp::EvalOptions::from_json(text_or(eval_json, "{}"));
    opts.seeds.resize(1);
    opts.probabilistic = false;
    const auto preds = pdpp::predict(bundle, data->ds, opts);
    std::vector<pdpp::PredictionRow> rows;
    for (const auto& hp : preds)
      for (std::size_t i = 0; i < hp.record_index.size(); ++i)
        rows.push_back({std::to_string(hp.record_index[i]), hp.tasks[i], hp.seeds.front().plans[i]});
    put(predictions_tsv, pdpp::format_predictions(rows));
  });
}

pdpp_status pdpp_evaluate(const pdpp_model* model, const pdpp_model* endpoint_model, const pdpp_classifier* classifier,
                          const pdpp_dataset* data, const pdpp_dataset* task_map_source, const char* eval_json,
                          char** report_text, char** report_json) {
  return guarded([&] {
    const auto bundle = bundle_of(model, endpoint_model, classifier, data, task_map_source);
    const auto opts = pdpp::EvalOptions::from_json(text_or(eval_json, "{}"));
    const auto rep = pdpp::evaluate_model(bundle, data->ds, opts);
    put(report_text, rep.to_text());
    put(report_json, rep.to_json());
  });
}

pdpp_status pdpp_evaluate_predictions(const pdpp_dataset* data, const char* predictions_tsv, int miou_batch,
                                      char** report_text, char** report_json) {
  return guarded([&] {
    need(data, "dataset");
    need(predictions_tsv, "predictions");
    const auto rep = pdpp::evaluate_predictions(data->ds, pdpp::parse_predictions(predictions_tsv), miou_batch);
    put(report_text, rep.to_text());
    put(report_json, rep.to_json());
  });
}

pdpp_status pdpp_baseline(const pdpp_dataset* train, const pdpp_dataset* test, const char* kind, uint64_t seed,
                          int task_limited, char** report_text, char** report_json) {
  return guarded([&] {
    need(test, "test dataset");
    const std::string k = text_or(kind, "random");
    std::vector<pdpp::Plan> preds, gts;
    std::vector<int> hs, tasks;
    for (const auto& r : test->ds.records) {
      gts.push_back(r.actions);
      hs.push_back(r.horizon());
      tasks.push_back(r.task);
    }
    if (k == "random") {
      pdpp::Rng rng(seed);
      preds = pdpp::random_baseline(hs, test->ds.num_actions, rng, task_limited ? &test->ds.task_map : nullptr,
                                    task_limited ? &tasks : nullptr);
    } else if (k == "retrieval") {
      need(train, "train dataset");
      preds = pdpp::retrieval_baseline(train->ds.records, test->ds.records);
    } else {
      pdpp::fail(pdpp::ErrorCode::kInvalidArgument, "unknown baseline '" + k + "' (random|retrieval)");
    }
    pdpp::EvalReport rep;
    rep.seeds = {seed};
    for (int h : test->ds.horizons()) {
      std::vector<pdpp::Plan> p, g;
      for (std::size_t i = 0; i < gts.size(); ++i)
        if (hs[i] == h) {
          p.push_back(preds[i]);
          g.push_back(gts[i]);
        }
      rep.horizons.push_back({h, pdpp::score(p, g), std::nullopt});
    }
    put(report_text, rep.to_text());
    put(report_json, rep.to_json());
  });
}

pdpp_status pdpp_pipeline_run(const char* config_json, const char* out_dir, pdpp_progress_fn progress, void* user,
                              char** report_text, char** report_json) {
  return guarded([&] {
    const auto cfg = pdpp::PipelineConfig::from_json(text_or(config_json, "{}"));
    const auto res = pdpp::run_pipeline(cfg, wrap(progress, user));
    if (out_dir && *out_dir) {
      const std::filesystem::path dir(out_dir);
      std::error_code ec;
      std::filesystem::create_directories(dir, ec);
      pdpp::require(!ec, pdpp::ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());
      pdpp::save_dataset((dir / "train.pdpp").string(), res.train_data);
      pdpp::save_dataset((dir / "test.pdpp").string(), res.test_data);
      if (res.classifier_model) pdpp::save_classifier((dir / "classifier.ckpt").string(), *res.classifier_model);
      pdpp::save_denoiser((dir / "model.ckpt").string(), *res.model);
      if (res.endpoint_model) pdpp::save_denoiser((dir / "endpoint.ckpt").string(), *res.endpoint_model);
      pdpp::write_text_atomic((dir / "predictions.tsv").string(), pdpp::format_predictions(res.predictions));
    }
    put(report_text, res.report.to_text());
    put(report_json, res.report.to_json());
  });
}

}  // extern "C"
