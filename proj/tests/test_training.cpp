#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "prdlab/error.hpp"
#include "prdlab/rng.hpp"
#include "prdlab/training.hpp"

using namespace prdlab;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.encoder.embed_dim = 8;
  c.encoder.subword_dim = 8;
  c.encoder.regions = 4;
  c.encoder.image_side = 16;
  c.encoder.conv_channels = {4, 8};
  c.encoder.ffn_dim = 16;
  c.epochs = 2;
  c.batch_size = 4;
  c.lr = 0.01;
  return c;
}

const std::vector<SyntheticPair>& tiny_corpus() {
  static const auto corpus = generate_corpus(12, 16, 7);
  return corpus;
}

std::vector<std::vector<double>> parameter_values(const Model& model) {
  std::vector<std::vector<double>> out;
  for (const auto& p : model.parameters()) out.emplace_back(p.value.data().begin(), p.value.data().end());
  return out;
}

double epoch_mean_total(std::span<const MetricsRow> rows) {
  double s = 0.0;
  for (const auto& r : rows) s += r.total;
  return s / static_cast<double>(rows.size());
}

}  // namespace

TEST(Sgd, TwoStepsUnrolledByHand) {
  std::vector<double> p{1.0, -2.0};
  std::vector<double> buf{0.0, 0.0};
  const double lr = 0.1, m = 0.9, wd = 0.01;
  const std::vector<double> g1{0.5, 0.25}, g2{-1.0, 2.0};
  sgd_step(p, g1, buf, lr, m, wd);
  sgd_step(p, g2, buf, lr, m, wd);
  for (std::size_t i = 0; i < 2; ++i) {
    const double p0 = i == 0 ? 1.0 : -2.0;
    const double b1 = g1[i] + wd * p0;
    const double p1 = p0 - lr * b1;
    const double b2 = m * b1 + g2[i] + wd * p1;
    EXPECT_DOUBLE_EQ(p[i], p1 - lr * b2);
    EXPECT_DOUBLE_EQ(buf[i], b2);
  }
  std::vector<double> short_grad{1.0};
  EXPECT_THROW(sgd_step(p, short_grad, buf, lr, m, wd), InvalidArgument);
}

TEST(Schedule, EpochOrderIsASeededPermutation) {
  const auto a = epoch_order(50, 3, 0);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> iota(50);
  std::iota(iota.begin(), iota.end(), 0);
  EXPECT_EQ(sorted, iota);
  EXPECT_EQ(a, epoch_order(50, 3, 0));
  EXPECT_NE(a, epoch_order(50, 3, 1));
  EXPECT_NE(a, epoch_order(50, 4, 0));
}

TEST(Schedule, PerturbationSeedNestsSampleThenEpoch) {
  EXPECT_EQ(perturbation_seed(2, 17, 5), derive_seed(derive_seed(2, 17), 5));
  EXPECT_NE(perturbation_seed(2, 17, 5), perturbation_seed(2, 17, 6));
}

TEST(TrainConfig, Validation) {
  auto bad = tiny_config();
  bad.lr = 0.0;
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = tiny_config();
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = tiny_config();
  bad.epochs = 0;
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = tiny_config();
  bad.weights.tau = -1.0;
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = tiny_config();
  bad.batch_size = 13;
  EXPECT_THROW(Trainer(bad, tiny_corpus()), InvalidArgument);
  EXPECT_THROW(Trainer(tiny_config(), generate_corpus(4, 32, 1)), InvalidArgument);
  EXPECT_THROW(Trainer(tiny_config(), std::span<const SyntheticPair>()), InvalidArgument);
}

TEST(Training, MetricRowsCoverEveryBatch) {
  Trainer t(tiny_config(), tiny_corpus());
  const auto rows = t.run_epoch();
  ASSERT_EQ(rows.size(), 3u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].epoch, 1u);
    EXPECT_EQ(rows[i].step, i + 1);
    EXPECT_NEAR(rows[i].total, rows[i].global + 0.1 * rows[i].local + 0.1 * rows[i].pert, 1e-12);
    EXPECT_GT(rows[i].pert, 0.0);
  }
  EXPECT_EQ(t.run_epoch().front().step, 4u);
}

TEST(Training, RunsAreBitIdentical) {
  Trainer a(tiny_config(), tiny_corpus());
  Trainer b(tiny_config(), tiny_corpus());
  EXPECT_EQ(train(a), train(b));
  EXPECT_EQ(parameter_values(a.model()), parameter_values(b.model()));
}

TEST(Training, ResumeMatchesUninterruptedRun) {
  auto config = tiny_config();
  config.epochs = 3;
  Trainer full(config, tiny_corpus());
  const auto stream = train(full);

  Trainer first(config, tiny_corpus());
  auto resumed_stream = first.run_epoch();
  Trainer second(first.state(), tiny_corpus());
  EXPECT_EQ(second.epochs_done(), 1u);
  const auto rest = train(second);
  resumed_stream.insert(resumed_stream.end(), rest.begin(), rest.end());

  EXPECT_EQ(resumed_stream, stream);
  EXPECT_EQ(parameter_values(second.model()), parameter_values(full.model()));
}

TEST(Training, ComputingADisabledTermDoesNotChangeTheRun) {
  auto skip = tiny_config();
  skip.weights.beta = 0.0;
  auto compute = skip;
  compute.compute_disabled_terms = true;
  Trainer a(skip, tiny_corpus());
  Trainer b(compute, tiny_corpus());
  const auto ra = train(a);
  const auto rb = train(b);
  ASSERT_EQ(ra.size(), rb.size());
  for (std::size_t i = 0; i < ra.size(); ++i) {
    EXPECT_EQ(ra[i].total, rb[i].total);
    EXPECT_EQ(ra[i].pert, 0.0);
    EXPECT_GT(rb[i].pert, 0.0);
  }
  EXPECT_EQ(parameter_values(a.model()), parameter_values(b.model()));
}

TEST(Training, DetachedNegativesChangeTheUpdate) {
  auto config = tiny_config();
  config.epochs = 1;
  auto detached = config;
  detached.detach_negatives = true;
  Trainer a(config, tiny_corpus());
  Trainer b(detached, tiny_corpus());
  train(a);
  train(b);
  EXPECT_NE(parameter_values(a.model()), parameter_values(b.model()));
}

TEST(Training, LossDecreasesOnATinyCorpus) {
  auto config = tiny_config();
  config.epochs = 15;
  Trainer t(config, tiny_corpus());
  std::vector<double> means;
  train(t, [&](const Trainer&, std::span<const MetricsRow> rows) { means.push_back(epoch_mean_total(rows)); });
  ASSERT_EQ(means.size(), 15u);
  EXPECT_LT(means.back(), means.front());
}

TEST(Training, DivergenceIsReportedAsRuntimeError) {
  auto config = tiny_config();
  config.lr = 1e12;
  config.epochs = 5;
  Trainer t(config, tiny_corpus());
  EXPECT_THROW(train(t), RuntimeError);
}

TEST(Training, StateRejectsForeignLayout) {
  Trainer t(tiny_config(), tiny_corpus());
  auto state = t.state();
  state.parameters.pop_back();
  EXPECT_THROW(Trainer(state, tiny_corpus()), InvalidArgument);
}
