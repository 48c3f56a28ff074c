#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "prdlab/encoders.hpp"
#include "prdlab/error.hpp"
#include "prdlab/losses.hpp"
#include "prdlab/synthetic.hpp"

using namespace prdlab;

namespace {

EncoderConfig small_config() {
  EncoderConfig c;
  c.embed_dim = 8;
  c.subword_dim = 8;
  c.regions = 4;
  c.image_side = 16;
  c.conv_channels = {4, 8};
  c.ffn_dim = 16;
  return c;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace

TEST(Encoders, DefaultShapes) {
  const Model model(EncoderConfig{});
  const auto pair = generate_pair(0, 32, 1);
  const auto img = model.encode_image(pair.image());
  EXPECT_EQ(img.global.shape(), (Shape{32}));
  EXPECT_EQ(img.local.shape(), (Shape{32, 16}));
  const auto report = tokenize(pair.report);
  const auto txt = model.encode_text(report);
  EXPECT_EQ(txt.global.shape(), (Shape{32}));
  EXPECT_EQ(txt.subword.shape(), (Shape{32, report.subword_count()}));
  EXPECT_EQ(txt.local.shape(), (Shape{32, report.word_count()}));
  EXPECT_FALSE(model.encode_text(report, false).local.defined());
}

TEST(Encoders, RejectsWrongImageShape) {
  const Model model(EncoderConfig{});
  EXPECT_THROW(model.encode_image(Tensor::zeros({16, 16, 1})), InvalidArgument);
}

TEST(Encoders, ConfigValidation) {
  EncoderConfig c;
  c.regions = 15;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = EncoderConfig{};
  c.image_side = 4;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = EncoderConfig{};
  c.conv_channels = {};
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = EncoderConfig{};
  c.local_layer = 3;
  EXPECT_THROW(c.validate(), InvalidArgument);
  EXPECT_NO_THROW(EncoderConfig{}.validate());
}

TEST(Encoders, AggregationAveragesWordPieces) {
  // Features (K=2, N=3); words are pieces {0,1} and {2}; identity projection.
  const Tensor features = Tensor::from({2, 3}, {1, 3, 10, 2, 4, 20});
  const WordSpan spans[] = {{0, 2}, {2, 3}};
  const Tensor out = aggregate_subwords(features, spans, Tensor::from({2, 2}, {1, 0, 0, 1}));
  ASSERT_EQ(out.shape(), (Shape{2, 2}));
  EXPECT_DOUBLE_EQ(out.at(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(out.at(1, 0), 3.0);
  EXPECT_DOUBLE_EQ(out.at(0, 1), 10.0);
  EXPECT_DOUBLE_EQ(out.at(1, 1), 20.0);
}

TEST(Encoders, AggregationRejectsBadSpans) {
  const Tensor features = Tensor::zeros({2, 3});
  const Tensor proj = Tensor::zeros({2, 2});
  const WordSpan gap[] = {{0, 1}, {2, 3}};
  const WordSpan overlap[] = {{0, 2}, {1, 3}};
  EXPECT_THROW(aggregate_subwords(features, gap, proj), InvalidArgument);
  EXPECT_THROW(aggregate_subwords(features, overlap, proj), InvalidArgument);
  const WordSpan shuffled[] = {{2, 3}, {0, 2}};
  EXPECT_NO_THROW(aggregate_subwords(features, shuffled, proj));
}

TEST(Encoders, SingleWordPieceIsItsOwnWordFeature) {
  const Model model(small_config());
  const auto report = tokenize("effusion");
  ASSERT_EQ(report.subword_count(), 1u);
  const auto txt = model.encode_text(report);
  const Tensor expected = matmul(model.parameter("text.local_proj"), txt.subword);
  EXPECT_LT(max_abs_diff(txt.local, expected), 1e-15);
}

TEST(Encoders, PositionSignalMakesWordOrderMatter) {
  const Model model(small_config());
  const auto a = model.encode_text(tokenize("the lungs are clear"));
  const auto b = model.encode_text(tokenize("lungs the are clear"));
  EXPECT_GT(max_abs_diff(a.global, b.global), 1e-6);

  EncoderConfig blind = small_config();
  blind.position_signal = false;
  const Model order_blind(blind);
  const auto c = order_blind.encode_text(tokenize("the lungs are clear"));
  const auto d = order_blind.encode_text(tokenize("lungs the are clear"));
  EXPECT_LT(max_abs_diff(c.global, d.global), 1e-12);
}

TEST(Encoders, ZeroImageGivesIdenticalRegionColumns) {
  const Model model(small_config());
  const auto img = model.encode_image(Tensor::zeros({16, 16, 1}));
  for (std::size_t r = 0; r < img.local.dim(0); ++r) {
    for (std::size_t m = 1; m < img.local.dim(1); ++m) EXPECT_DOUBLE_EQ(img.local.at(r, m), img.local.at(r, 0));
  }
}

TEST(Encoders, RegionsSeeTheirQuadrant) {
  // A glyph in the top-left quadrant must move the top-left region more than
  // the bottom-right one.
  const Model model(small_config());
  const auto blank = model.encode_image(Tensor::zeros({16, 16, 1}));
  const auto glyph = model.encode_image(Tensor::from({16, 16, 1}, render_glyph(0, 16)));
  auto column_shift = [&](std::size_t m) {
    double s = 0.0;
    for (std::size_t r = 0; r < blank.local.dim(0); ++r) s += std::abs(glyph.local.at(r, m) - blank.local.at(r, m));
    return s;
  };
  EXPECT_GT(column_shift(0), 0.0);
  EXPECT_EQ(column_shift(3), 0.0);
}

TEST(Encoders, InitIsSeeded) {
  EncoderConfig c = small_config();
  const Model a(c);
  const Model b(c);
  c.init_seed = 2;
  const Model other(c);
  const auto& pa = a.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(max_abs_diff(pa[i].value, b.parameters()[i].value), 0.0) << pa[i].name;
  }
  EXPECT_GT(max_abs_diff(a.parameter("text.embedding"), other.parameter("text.embedding")), 0.0);
}

TEST(Encoders, CloneIsIndependent) {
  Model a(small_config());
  Model b = a.clone();
  EXPECT_EQ(max_abs_diff(a.parameter("image.global_proj"), b.parameter("image.global_proj")), 0.0);
  b.parameters()[0].value.assign(std::vector<double>(b.parameters()[0].value.numel(), 0.0));
  EXPECT_GT(max_abs_diff(a.parameters()[0].value, b.parameters()[0].value), 0.0);
}

TEST(Encoders, GradientReachesEveryParameter) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    EncoderConfig c = small_config();
    c.init_seed = seed;
    Model model(c);
    const auto pairs = generate_corpus(3, 16, seed);
    std::vector<Tensor> img_rows, txt_rows, img_locals, txt_locals;
    std::vector<Tensor> perturbed;
    for (const auto& p : pairs) {
      const auto img = model.encode_image(p.image());
      const auto txt = model.encode_text(tokenize(p.report));
      img_rows.push_back(reshape(img.global, {1, c.embed_dim}));
      txt_rows.push_back(reshape(txt.global, {1, c.embed_dim}));
      img_locals.push_back(img.local);
      txt_locals.push_back(txt.local);
    }
    const Tensor global = global_contrastive_loss(concat(img_rows, 0), concat(txt_rows, 0), 0.07);
    const Tensor local = local_contrastive_loss(img_locals, txt_locals, 0.07, 1.0);
    total_loss(global, local, Tensor(), LossWeights{}).total.backward();
    for (const auto& p : model.parameters()) {
      const auto g = p.value.grad();
      EXPECT_TRUE(std::any_of(g.begin(), g.end(), [](double x) { return std::abs(x) > 0.0; }))
          << p.name << " seed " << seed;
    }
  }
}
