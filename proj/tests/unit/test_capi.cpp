#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"
#include "pdpp/pdpp.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string take(char* s) {
  std::string out = s ? s : "";
  pdpp_free_string(s);
  return out;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pdpp_capi_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const char* kData = R"({"preset":"toy","videos_per_task":6,"num_actions":12,"obs_dim":8,"seed":4})";
const char* kTrain = R"({"steps":20,"batch_size":8,"warmup_steps":2,"diffusion_steps":20,"horizons":[3],"seed":1})";
const char* kModel = R"({"variant":"unet3","widths":[8,16]})";
const char* kEval = R"({"sampler":{"method":"ddim","ddim_steps":5},"seeds":[0],"gt_task":true})";

struct Split {
  pdpp_dataset* train = nullptr;
  pdpp_dataset* test = nullptr;
  Split() {
    const int hs[] = {3};
    REQUIRE(pdpp_dataset_generate(kData, hs, 1, 0.7, &train, &test) == PDPP_OK);
  }
  ~Split() {
    pdpp_dataset_free(train);
    pdpp_dataset_free(test);
  }
};

int run_cli(const std::string& args) {
  const std::string cmd = std::string(PDPP_CLI) + " " + args + " >/dev/null 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

}  // namespace

TEST_CASE("status names and version") {
  CHECK(std::string(pdpp_version()).size() > 0);
  CHECK(std::string(pdpp_status_name(PDPP_ERR_FORMAT)) == "format error");
  CHECK(std::string(pdpp_status_name(PDPP_OK)) == "ok");
}

TEST_CASE("errors come back as codes with a message") {
  pdpp_dataset* ds = nullptr;
  CHECK(pdpp_dataset_load("/nonexistent/x.pdpp", &ds) == PDPP_ERR_IO);
  CHECK(ds == nullptr);
  CHECK(std::string(pdpp_last_error()).find("/nonexistent/x.pdpp") != std::string::npos);

  pdpp_dataset *tr = nullptr, *te = nullptr;
  const int hs[] = {3};
  CHECK(pdpp_dataset_generate("{not json", hs, 1, 0.7, &tr, &te) == PDPP_ERR_INVALID_ARGUMENT);
  CHECK(pdpp_dataset_generate(kData, hs, 1, 0.7, nullptr, &te) == PDPP_ERR_INVALID_ARGUMENT);
  CHECK(pdpp_dataset_generate(kData, hs, 1, 1.5, &tr, &te) == PDPP_ERR_INVALID_ARGUMENT);

  const fs::path dir = scratch("errors");
  std::ofstream(dir / "junk.pdpp") << "garbage bytes";
  CHECK(pdpp_dataset_load((dir / "junk.pdpp").c_str(), &ds) == PDPP_ERR_FORMAT);
  fs::remove_all(dir);
}

TEST_CASE("dataset round trip") {
  Split s;
  const json sum = json::parse(take([&] {
    char* out = nullptr;
    REQUIRE(pdpp_dataset_summary(s.train, &out) == PDPP_OK);
    return out;
  }()));
  CHECK(sum["num_actions"] == 12);
  const fs::path dir = scratch("data");
  const std::string path = (dir / "train.pdpp").string();
  REQUIRE(pdpp_dataset_save(s.train, path.c_str()) == PDPP_OK);
  pdpp_dataset* back = nullptr;
  REQUIRE(pdpp_dataset_load(path.c_str(), &back) == PDPP_OK);
  char* again = nullptr;
  REQUIRE(pdpp_dataset_summary(back, &again) == PDPP_OK);
  CHECK(json::parse(take(again)) == sum);
  pdpp_dataset_free(back);
  fs::remove_all(dir);
}

TEST_CASE("train, sample and score through the C API") {
  Split s;
  int calls = 0;
  auto progress = [](int, double loss, double, void* user) {
    CHECK(loss == loss);
    ++*static_cast<int*>(user);
  };
  pdpp_model* m = nullptr;
  char* rep = nullptr;
  REQUIRE(pdpp_model_train(s.train, kTrain, kModel, progress, &calls, &m, &rep) == PDPP_OK);
  CHECK(calls == 20);
  CHECK(json::parse(take(rep))["steps"] == 20);

  char* tsv = nullptr;
  REQUIRE(pdpp_sample(m, nullptr, nullptr, s.test, nullptr, kEval, &tsv) == PDPP_OK);
  const std::string preds = take(tsv);
  CHECK(!preds.empty());

  char *text = nullptr, *js = nullptr;
  REQUIRE(pdpp_evaluate_predictions(s.test, preds.c_str(), 1, &text, &js) == PDPP_OK);
  const json scored = json::parse(take(js));
  CHECK(take(text).find("T3.SR") != std::string::npos);

  REQUIRE(pdpp_evaluate(m, nullptr, nullptr, s.test, nullptr, kEval, &text, &js) == PDPP_OK);
  const json direct = json::parse(take(js));
  take(text);
  CHECK(direct["horizons"][0]["sr"] == scored["horizons"][0]["sr"]);
  CHECK(direct["horizons"][0]["macc"] == scored["horizons"][0]["macc"]);

  const std::string bad = "0\t0\t1,2\n";
  CHECK(pdpp_evaluate_predictions(s.test, bad.c_str(), 1, &text, &js) == PDPP_ERR_SHAPE);
  CHECK(pdpp_evaluate_predictions(s.test, "zz\t0\t1,2,3\n", 1, &text, &js) == PDPP_ERR_FORMAT);

  CHECK(pdpp_sample(m, nullptr, nullptr, s.test, nullptr, "{\"sampler\":{\"method\":\"euler\"}}", &tsv) ==
        PDPP_ERR_INVALID_ARGUMENT);

  const fs::path dir = scratch("model");
  const std::string path = (dir / "m.ckpt").string();
  REQUIRE(pdpp_model_save(m, path.c_str()) == PDPP_OK);
  pdpp_model* back = nullptr;
  REQUIRE(pdpp_model_load(path.c_str(), &back) == PDPP_OK);
  char *i1 = nullptr, *i2 = nullptr;
  REQUIRE(pdpp_model_info(m, &i1) == PDPP_OK);
  REQUIRE(pdpp_model_info(back, &i2) == PDPP_OK);
  CHECK(take(i1) == take(i2));
  pdpp_model_free(back);
  pdpp_model_free(m);
  fs::remove_all(dir);
}

TEST_CASE("baselines through the C API") {
  Split s;
  char *text = nullptr, *js = nullptr;
  REQUIRE(pdpp_baseline(s.train, s.test, "retrieval", 0, 0, &text, &js) == PDPP_OK);
  take(text);
  CHECK(json::parse(take(js))["horizons"].size() == 1);
  REQUIRE(pdpp_baseline(nullptr, s.test, "random", 3, 1, &text, &js) == PDPP_OK);
  take(text);
  take(js);
  CHECK(pdpp_baseline(s.train, s.test, "oracle", 0, 0, &text, &js) == PDPP_ERR_INVALID_ARGUMENT);
}

TEST_CASE("pipeline writes its artifacts") {
  const fs::path dir = scratch("pipeline");
  const std::string cfg = std::string(R"({"data":)") + kData + R"(,"train":)" + kTrain + R"(,"model":)" + kModel +
                          R"(,"classifier":{"epochs":3},"eval":{"sampler":{"method":"ddim","ddim_steps":5}}})";
  char *text = nullptr, *js = nullptr;
  REQUIRE(pdpp_pipeline_run(cfg.c_str(), dir.c_str(), nullptr, nullptr, &text, &js) == PDPP_OK);
  take(text);
  const json r = json::parse(take(js));
  CHECK(r["extra"].contains("classifier_test_acc"));
  for (const char* f : {"train.pdpp", "test.pdpp", "classifier.ckpt", "model.ckpt", "predictions.tsv"})
    CHECK(fs::exists(dir / f));
  fs::remove_all(dir);
}

TEST_CASE("command line exit codes") {
  const fs::path dir = scratch("cli");
  CHECK(run_cli("gen-data --toy --out-dir " + (dir / "gen").string()) == 0);
  CHECK(fs::exists(dir / "gen" / "manifest.json"));
  CHECK(run_cli("gen-data --no-such-flag") == 1);
  CHECK(run_cli("") == 1);
  CHECK(run_cli("eval --preds /nonexistent.tsv --data /nonexistent.pdpp --out-dir " + (dir / "e").string()) == 2);
  CHECK(run_cli("gen-data --toy --seed 1 --out-dir " + (dir / "s").string()) == 0);
  CHECK(std::system(("PDPP_SEED=abc " + std::string(PDPP_CLI) + " gen-data --toy >/dev/null 2>&1").c_str()) != 0);
  fs::remove_all(dir);
}
