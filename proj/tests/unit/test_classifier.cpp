#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>

#include "pdpp/classifier.hpp"

using namespace pdpp;

namespace {

SplitDatasets small_split() {
  SyntheticConfig cfg;
  cfg.videos_per_task = 12;
  cfg.seed = 5;
  return generate_split(cfg, {3});
}

}  // namespace

TEST_CASE("logits shape and prediction") {
  TaskClassifier clf(ClassifierConfig{4, 3, 16, 1});
  const auto c = clf.classify({1, 2, 3, 4}, {0, 0, 0, 1});
  CHECK(c.logits.size() == 3);
  int best = 0;
  for (int k = 1; k < 3; ++k)
    if (c.logits[k] > c.logits[best]) best = k;
  CHECK(c.predicted == best);
  CHECK_THROWS_AS(clf.classify({1, 2}, {0, 0, 0, 1}), Error);
}

TEST_CASE("training separates tasks") {
  const auto s = small_split();
  TaskClassifier clf(ClassifierConfig{s.train.obs_dim, s.train.num_tasks, 64, 3});
  ClassifierTrainConfig tc;
  tc.epochs = 15;
  tc.seed = 3;
  const auto rep = train_classifier(clf, s.train, &s.test, tc);
  CHECK(rep.epoch_loss.size() == 15);
  CHECK(rep.epoch_loss.back() < rep.initial_loss);
  CHECK(rep.train_accuracy > 0.9);
  CHECK(rep.test_accuracy > 0.8);
  CHECK(classifier_accuracy(clf, s.test.records) == doctest::Approx(rep.test_accuracy));
  const auto preds = clf.predict(s.test.records);
  CHECK(preds.size() == s.test.records.size());
}

TEST_CASE("training is deterministic and checkpoints round trip") {
  const auto s = small_split();
  ClassifierTrainConfig tc;
  tc.epochs = 2;
  TaskClassifier a(ClassifierConfig{s.train.obs_dim, s.train.num_tasks, 32, 9});
  TaskClassifier b(ClassifierConfig{s.train.obs_dim, s.train.num_tasks, 32, 9});
  train_classifier(a, s.train, nullptr, tc);
  train_classifier(b, s.train, nullptr, tc);
  for (std::size_t i = 0; i < a.params().size(); ++i) CHECK(a.params()[i].value == b.params()[i].value);

  const auto path = (std::filesystem::temp_directory_path() / "pdpp_clf_test.ckpt").string();
  save_classifier(path, a);
  const auto back = load_classifier(path);
  CHECK(back->predict(s.test.records) == a.predict(s.test.records));
  CHECK(back->config().hidden == 32);
  std::filesystem::remove(path);
}

TEST_CASE("rejects mismatched data") {
  const auto s = small_split();
  TaskClassifier clf(ClassifierConfig{s.train.obs_dim + 1, s.train.num_tasks, 16, 0});
  CHECK_THROWS_AS(train_classifier(clf, s.train, nullptr, ClassifierTrainConfig{}), Error);
  ClassifierTrainConfig bad;
  bad.batch_size = 0;
  TaskClassifier ok(ClassifierConfig{s.train.obs_dim, s.train.num_tasks, 16, 0});
  CHECK_THROWS_AS(train_classifier(ok, s.train, nullptr, bad), Error);
}
