#include <gtest/gtest.h>

#include <filesystem>
#include <string>

#include "json.hpp"
#include "prdlab.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Takes ownership of a library string.
std::string take(char* s) {
  std::string out = s == nullptr ? "" : s;
  prdlab_string_free(s);
  return out;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::path(PRDLAB_TEST_TMP) / ("capi_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

const char* const kTinyConfig = R"({
  "encoder.embed_dim": 8, "encoder.subword_dim": 8, "encoder.regions": 4,
  "encoder.image_side": 16, "encoder.conv_channels": [4, 8], "encoder.ffn_dim": 16,
  "train.epochs": 2, "train.batch_size": 4, "train.lr": 0.01
})";

}  // namespace

TEST(CApi, VersionAndDefaults) {
  EXPECT_STREQ(prdlab_version(), "0.1.0");
  char* out = nullptr;
  ASSERT_EQ(prdlab_default_config_json(&out), PRDLAB_OK);
  const json config = json::parse(take(out));
  EXPECT_EQ(config["loss.beta"], 0.1);
  EXPECT_EQ(config["train.batch_size"], 64);
  EXPECT_EQ(config["encoder.regions"], 16);
}

TEST(CApi, ErrorsSetStatusAndMessage) {
  prdlab_corpus* corpus = nullptr;
  EXPECT_EQ(prdlab_corpus_generate(4, 8, 1, 0, &corpus), PRDLAB_ERR_INVALID_ARGUMENT);
  EXPECT_EQ(corpus, nullptr);
  EXPECT_NE(std::string(prdlab_last_error()).find("too small"), std::string::npos);
  EXPECT_EQ(prdlab_corpus_load("/nonexistent/corpus.jsonl", &corpus), PRDLAB_ERR_RUNTIME);
  EXPECT_EQ(prdlab_default_config_json(nullptr), PRDLAB_ERR_INVALID_ARGUMENT);

  char* out = nullptr;
  ASSERT_EQ(prdlab_default_config_json(&out), PRDLAB_OK);
  prdlab_string_free(out);
  EXPECT_STREQ(prdlab_last_error(), "");
}

TEST(CApi, CorpusHandles) {
  prdlab_corpus* corpus = nullptr;
  ASSERT_EQ(prdlab_corpus_generate(10, 16, 3, 5, &corpus), PRDLAB_OK);
  EXPECT_EQ(prdlab_corpus_size(corpus), 10u);
  prdlab_corpus* tail = nullptr;
  ASSERT_EQ(prdlab_corpus_slice(corpus, 6, 4, &tail), PRDLAB_OK);
  EXPECT_EQ(prdlab_corpus_slice(corpus, 8, 4, &tail), PRDLAB_ERR_INVALID_ARGUMENT);
  char* a = nullptr;
  char* b = nullptr;
  ASSERT_EQ(prdlab_corpus_report(corpus, 6, &a), PRDLAB_OK);
  ASSERT_EQ(prdlab_corpus_report(tail, 0, &b), PRDLAB_OK);
  EXPECT_EQ(take(a), take(b));
  EXPECT_EQ(prdlab_corpus_report(corpus, 10, &a), PRDLAB_ERR_INVALID_ARGUMENT);

  const auto dir = scratch_dir("corpus");
  ASSERT_EQ(prdlab_corpus_save(tail, dir.c_str()), PRDLAB_OK);
  prdlab_corpus* loaded = nullptr;
  ASSERT_EQ(prdlab_corpus_load((dir / "corpus.jsonl").c_str(), &loaded), PRDLAB_OK);
  EXPECT_EQ(prdlab_corpus_size(loaded), 4u);
  prdlab_corpus_free(loaded);
  prdlab_corpus_free(tail);
  prdlab_corpus_free(corpus);
  prdlab_corpus_free(nullptr);
  EXPECT_EQ(prdlab_corpus_size(nullptr), 0u);
}

TEST(CApi, PerturbJson) {
  char* out = nullptr;
  ASSERT_EQ(prdlab_perturb_json("the lungs are clear there is no pleural effusion or pneumothorax", 0, &out),
            PRDLAB_OK);
  const json set = json::parse(take(out));
  ASSERT_EQ(set["variants"].size(), 9u);
  EXPECT_EQ(set["variants"][1]["text"], "lungs the clear are is there pleural no or effusion pneumothorax");
  EXPECT_EQ(prdlab_perturb_json(" . ", 0, &out), PRDLAB_ERR_INVALID_ARGUMENT);
}

TEST(CApi, TrainCheckpointResumeEvaluate) {
  const auto dir = scratch_dir("train");
  prdlab_corpus* corpus = nullptr;
  ASSERT_EQ(prdlab_corpus_generate(8, 16, 1, 0, &corpus), PRDLAB_OK);

  prdlab_trainer* full = nullptr;
  ASSERT_EQ(prdlab_trainer_create(kTinyConfig, corpus, &full), PRDLAB_OK);
  EXPECT_EQ(prdlab_trainer_epochs_total(full), 2u);
  char* jsonl = nullptr;
  std::string full_stream;
  while (prdlab_trainer_epochs_done(full) < prdlab_trainer_epochs_total(full)) {
    ASSERT_EQ(prdlab_trainer_run_epoch(full, &jsonl), PRDLAB_OK);
    full_stream += take(jsonl);
  }

  prdlab_trainer* first = nullptr;
  ASSERT_EQ(prdlab_trainer_create(kTinyConfig, corpus, &first), PRDLAB_OK);
  ASSERT_EQ(prdlab_trainer_run_epoch(first, &jsonl), PRDLAB_OK);
  std::string resumed_stream = take(jsonl);
  const auto ckpt = dir / "epoch-0001.json";
  ASSERT_EQ(prdlab_trainer_save_checkpoint(first, ckpt.c_str()), PRDLAB_OK);
  prdlab_trainer_free(first);
  prdlab_trainer* second = nullptr;
  ASSERT_EQ(prdlab_trainer_resume(ckpt.c_str(), corpus, &second), PRDLAB_OK);
  EXPECT_EQ(prdlab_trainer_epochs_done(second), 1u);
  ASSERT_EQ(prdlab_trainer_run_epoch(second, &jsonl), PRDLAB_OK);
  resumed_stream += take(jsonl);
  EXPECT_EQ(resumed_stream, full_stream);

  prdlab_model* model = nullptr;
  ASSERT_EQ(prdlab_trainer_model(full, &model), PRDLAB_OK);
  ASSERT_EQ(prdlab_model_embed_dim(model), 8u);
  const auto model_path = dir / "model.json";
  ASSERT_EQ(prdlab_model_save(model, model_path.c_str()), PRDLAB_OK);
  prdlab_model* reloaded = nullptr;
  ASSERT_EQ(prdlab_model_load(model_path.c_str(), &reloaded), PRDLAB_OK);
  double a[8], b[8];
  ASSERT_EQ(prdlab_model_embed_text(model, "no effusion", a), PRDLAB_OK);
  ASSERT_EQ(prdlab_model_embed_text(reloaded, "no effusion", b), PRDLAB_OK);
  for (int i = 0; i < 8; ++i) EXPECT_EQ(a[i], b[i]);

  char* out = nullptr;
  ASSERT_EQ(prdlab_eval_structure(reloaded, corpus, 0, &out), PRDLAB_OK);
  const json structure = json::parse(take(out));
  EXPECT_EQ(structure["n_samples"], 8);
  EXPECT_EQ(structure["confusion"].size(), 9u);
  const size_t ks[] = {1, 5};
  ASSERT_EQ(prdlab_eval_retrieval(reloaded, corpus, ks, 2, &out), PRDLAB_OK);
  EXPECT_EQ(json::parse(take(out))["image_to_text"].size(), 2u);
  const size_t too_big[] = {50};
  EXPECT_EQ(prdlab_eval_retrieval(reloaded, corpus, too_big, 1, &out), PRDLAB_ERR_INVALID_ARGUMENT);

  prdlab_model_free(reloaded);
  prdlab_model_free(model);
  prdlab_trainer_free(second);
  prdlab_trainer_free(full);
  prdlab_trainer_free(nullptr);
  prdlab_corpus_free(corpus);
}

TEST(CApi, TrainerRejectsBadConfig) {
  prdlab_corpus* corpus = nullptr;
  ASSERT_EQ(prdlab_corpus_generate(8, 16, 1, 0, &corpus), PRDLAB_OK);
  prdlab_trainer* t = nullptr;
  EXPECT_EQ(prdlab_trainer_create("{\"train.epochz\": 1}", corpus, &t), PRDLAB_ERR_INVALID_ARGUMENT);
  EXPECT_EQ(prdlab_trainer_create("{not json", corpus, &t), PRDLAB_ERR_INVALID_ARGUMENT);
  EXPECT_EQ(prdlab_trainer_create(nullptr, corpus, &t), PRDLAB_ERR_INVALID_ARGUMENT);  // side 32 vs 16
  EXPECT_EQ(t, nullptr);
  EXPECT_EQ(prdlab_trainer_run_epoch(nullptr, nullptr), PRDLAB_ERR_INVALID_ARGUMENT);
  prdlab_corpus_free(corpus);
}

TEST(CApi, Gradcheck) {
  int passed = 0;
  char* out = nullptr;
  ASSERT_EQ(prdlab_gradcheck(5, 1, 1e-4, &passed, &out), PRDLAB_OK);
  EXPECT_EQ(passed, 1);
  const json report = json::parse(take(out));
  EXPECT_FALSE(report["cases"].empty());
}
