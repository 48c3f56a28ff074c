#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "prdlab/checkpoint.hpp"
#include "prdlab/error.hpp"

using namespace prdlab;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::path(PRDLAB_TEST_TMP) / ("checkpoint_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.encoder.embed_dim = 8;
  c.encoder.subword_dim = 8;
  c.encoder.regions = 4;
  c.encoder.image_side = 16;
  c.encoder.conv_channels = {4, 8};
  c.encoder.ffn_dim = 16;
  c.epochs = 3;
  c.batch_size = 4;
  c.lr = 0.01;
  return c;
}

void expect_same_parameters(const Model& a, const Model& b) {
  ASSERT_EQ(a.parameters().size(), b.parameters().size());
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    const auto& pa = a.parameters()[i];
    const auto& pb = b.parameters()[i];
    EXPECT_EQ(pa.name, pb.name);
    EXPECT_EQ(pa.value.shape(), pb.value.shape());
    EXPECT_TRUE(std::equal(pa.value.data().begin(), pa.value.data().end(), pb.value.data().begin())) << pa.name;
  }
}

}  // namespace

TEST(Config, RoundTripsThroughJson) {
  TrainConfig c = tiny_config();
  c.weights.beta = 0.0;
  c.weights.tau_local_contrast = 0.2;
  c.data_seed = 99;
  c.detach_negatives = true;
  c.encoder.local_layer = 0;
  TrainConfig back;
  apply_config(back, config_to_json(c));
  EXPECT_EQ(config_to_json(back), config_to_json(c));
  EXPECT_EQ(back.encoder.conv_channels, c.encoder.conv_channels);
  EXPECT_EQ(back.weights.tau_local_contrast, 0.2);
  EXPECT_EQ(back.encoder.local_layer, 0);
}

TEST(Config, NestedObjectsAreFlattened) {
  TrainConfig c;
  apply_config(c, json{{"train", {{"epochs", 7}}}, {"loss", {{"beta", 0.0}}}});
  EXPECT_EQ(c.epochs, 7u);
  EXPECT_EQ(c.weights.beta, 0.0);
  EXPECT_EQ(flatten_config(json{{"a", {{"b", {{"c", 1}}}}}}), (json{{"a.b.c", 1}}));
}

TEST(Config, UnknownKeysAndBadTypesAreRejected) {
  TrainConfig c;
  EXPECT_THROW(apply_config(c, json{{"train.epoch", 5}}), InvalidArgument);
  EXPECT_THROW(apply_config(c, json{{"train.epochs", "five"}}), InvalidArgument);
  EXPECT_THROW(apply_config(c, json{{"train.epochs", -1}}), InvalidArgument);
  EXPECT_THROW(apply_config(c, json{{"train.detach_negatives", 1}}), InvalidArgument);
  EXPECT_THROW(apply_config(c, json::array()), InvalidArgument);
  EXPECT_NO_THROW(apply_config(c, json{{"data.corpus", "x.jsonl"}, {"run.note", "hi"}}));
  EXPECT_NO_THROW(apply_config(c, json{{"loss.tau_local_contrast", nullptr}}));
  EXPECT_FALSE(c.weights.tau_local_contrast.has_value());
}

TEST(Config, MetricsRowSerialisesAllTerms) {
  const MetricsRow row{2, 9, 1.5, 2.5, 3.5, 4.5};
  const json j = metrics_to_json(row);
  EXPECT_EQ(j["epoch"], 2);
  EXPECT_EQ(j["step"], 9);
  EXPECT_EQ(j["global"], 1.5);
  EXPECT_EQ(j["local"], 2.5);
  EXPECT_EQ(j["pert"], 3.5);
  EXPECT_EQ(j["total"], 4.5);
}

TEST(ModelCheckpoint, RoundTripIsBitExact) {
  const auto dir = scratch_dir("model");
  Trainer t(tiny_config(), generate_corpus(8, 16, 1));
  t.run_epoch();
  save_model(dir / "model.json", t.model());
  const Model loaded = load_model(dir / "model.json");
  EXPECT_EQ(model_to_json(loaded)["config"], model_to_json(t.model())["config"]);
  expect_same_parameters(loaded, t.model());
}

TEST(ModelCheckpoint, LoadsFromTrainingCheckpoints) {
  Trainer t(tiny_config(), generate_corpus(8, 16, 1));
  t.run_epoch();
  expect_same_parameters(model_from_json(state_to_json(t.state())), t.model());
}

TEST(ModelCheckpoint, RejectsForeignDocuments) {
  EXPECT_THROW(model_from_json(json{{"hello", 1}}), InvalidArgument);
  json j = model_to_json(Model(tiny_config().encoder));
  j["version"] = kCheckpointVersion + 1;
  EXPECT_THROW(model_from_json(j), InvalidArgument);
  j = model_to_json(Model(tiny_config().encoder));
  j["parameters"].erase(0);
  EXPECT_THROW(model_from_json(j), InvalidArgument);
}

TEST(TrainingCheckpoint, ResumeFromFileMatchesUninterruptedRun) {
  const auto dir = scratch_dir("state");
  const auto corpus = generate_corpus(8, 16, 2);
  Trainer full(tiny_config(), corpus);
  const auto stream = train(full);

  Trainer first(tiny_config(), corpus);
  auto resumed = first.run_epoch();
  save_state(dir / "epoch-0001.json", first.state());
  const TrainingState state = load_state(dir / "epoch-0001.json");
  EXPECT_EQ(state.epochs_done, 1u);
  EXPECT_EQ(state.steps_done, 2u);
  Trainer second(state, corpus);
  const auto rest = train(second);
  resumed.insert(resumed.end(), rest.begin(), rest.end());
  EXPECT_EQ(resumed, stream);
  expect_same_parameters(second.model(), full.model());
}

TEST(Files, WriteIsAtomicAndReadReportsErrors) {
  const auto dir = scratch_dir("files");
  write_json(dir / "a.json", json{{"x", 1}});
  EXPECT_EQ(read_json(dir / "a.json"), (json{{"x", 1}}));
  EXPECT_FALSE(fs::exists(dir / "a.json.tmp"));
  EXPECT_THROW(read_json(dir / "missing.json"), RuntimeError);
  std::ofstream(dir / "broken.json") << "{\"x\": ";
  EXPECT_THROW(read_json(dir / "broken.json"), InvalidArgument);
}
