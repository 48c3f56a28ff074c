#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "prdlab/error.hpp"
#include "prdlab/losses.hpp"
#include "prdlab/rng.hpp"

using namespace prdlab;

namespace {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;  // row-major, Mat[row][col]

// Plain-double reference implementations, written from the definitions and
// sharing nothing with the autodiff code.

double norm(const Vec& v) { return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0)); }

double cosine(const Vec& a, const Vec& b) { return std::inner_product(a.begin(), a.end(), b.begin(), 0.0) / (norm(a) * norm(b)); }

double log_sum_exp(const Vec& x) {
  const double m = *std::max_element(x.begin(), x.end());
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

double infonce_oracle(const Mat& logits) {
  const std::size_t b = logits.size();
  double rows = 0.0, cols = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    rows += logits[i][i] - log_sum_exp(logits[i]);
    Vec col(b);
    for (std::size_t j = 0; j < b; ++j) col[j] = logits[j][i];
    cols += logits[i][i] - log_sum_exp(col);
  }
  return -0.5 * (rows / b + cols / b);
}

double global_oracle(const Mat& images, const Mat& texts, double tau) {
  Mat logits(images.size(), Vec(texts.size()));
  for (std::size_t i = 0; i < images.size(); ++i)
    for (std::size_t j = 0; j < texts.size(); ++j) logits[i][j] = cosine(images[i], texts[j]) / tau;
  return infonce_oracle(logits);
}

// regions / words given as lists of d-vectors.
double local_score_oracle(const Mat& regions, const Mat& words, double tau_local) {
  Vec scaled;
  for (const Vec& w : words) {
    Vec logits;
    for (const Vec& r : regions) logits.push_back(std::inner_product(r.begin(), r.end(), w.begin(), 0.0) / tau_local);
    const double lse = log_sum_exp(logits);
    Vec context(w.size(), 0.0);
    for (std::size_t k = 0; k < regions.size(); ++k) {
      const double a = std::exp(logits[k] - lse);
      for (std::size_t t = 0; t < w.size(); ++t) context[t] += a * regions[k][t];
    }
    scaled.push_back(cosine(context, w) / tau_local);
  }
  return log_sum_exp(scaled);
}

double pert_oracle(const Vec& image, const Vec& text, const Mat& perturbed, double tau) {
  Vec logits{cosine(image, text) / tau};
  for (const Vec& p : perturbed) logits.push_back(cosine(image, p) / tau);
  return -(logits[0] - log_sum_exp(logits));
}

Mat random_mat(Rng& rng, std::size_t n, std::size_t d) {
  Mat m(n, Vec(d));
  for (auto& row : m)
    for (double& x : row) x = rng.normal();
  return m;
}

Tensor rows_tensor(const Mat& m) {
  Vec flat;
  for (const auto& r : m) flat.insert(flat.end(), r.begin(), r.end());
  return Tensor::from({m.size(), m[0].size()}, flat);
}

// Columns of the (d, n) tensor are the vectors of m.
Tensor cols_tensor(const Mat& m) { return transpose(rows_tensor(m)); }

Tensor vec_tensor(const Vec& v) { return Tensor::from({v.size()}, v); }

Mat scaled(Mat m, double s) {
  for (auto& r : m)
    for (double& x : r) x *= s;
  return m;
}

}  // namespace

TEST(GlobalLoss, MatchesOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t b = 2 + rng.below(4), d = 2 + rng.below(7);
    const Mat img = random_mat(rng, b, d), txt = random_mat(rng, b, d);
    EXPECT_NEAR(global_contrastive_loss(rows_tensor(img), rows_tensor(txt), 0.07).item(),
                global_oracle(img, txt, 0.07), 1e-12);
  }
}

TEST(GlobalLoss, TwoByTwoByHand) {
  // Orthogonal pairs aligned with their texts: logits diag 1/tau, off-diag 0.
  const Tensor e = Tensor::from({2, 2}, {1, 0, 0, 1});
  const double tau = 0.5;
  const double expected = std::log(1.0 + std::exp(-2.0));
  EXPECT_NEAR(global_contrastive_loss(e, e, tau).item(), expected, 1e-15);
}

TEST(GlobalLoss, SingletonBatchIsExactlyZero) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Mat img = random_mat(rng, 1, 5), txt = random_mat(rng, 1, 5);
    EXPECT_EQ(global_contrastive_loss(rows_tensor(img), rows_tensor(txt), 0.07).item(), 0.0);
  }
}

TEST(GlobalLoss, RejectsBadInputs) {
  const Tensor a = Tensor::from({2, 2}, {1, 0, 0, 1});
  const Tensor b = Tensor::from({3, 2}, {1, 0, 0, 1, 1, 1});
  EXPECT_THROW(global_contrastive_loss(a, b, 0.07), InvalidArgument);
  EXPECT_THROW(global_contrastive_loss(a, a, 0.0), InvalidArgument);
  EXPECT_THROW(global_contrastive_loss(a, Tensor::from({2, 2}, {0, 0, 1, 1}), 0.07), InvalidArgument);
  EXPECT_THROW(symmetric_infonce(b), InvalidArgument);
}

TEST(LocalLoss, ScoreMatchesOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t d = 2 + rng.below(7), m = 1 + rng.below(4), w = 1 + rng.below(4);
    const Mat regions = random_mat(rng, m, d), words = random_mat(rng, w, d);
    const double tau_local = trial % 2 == 0 ? 1.0 : 0.5;
    EXPECT_NEAR(local_matching_score(cols_tensor(regions), cols_tensor(words), tau_local).item(),
                local_score_oracle(regions, words, tau_local), 1e-12);
  }
}

TEST(LocalLoss, ContrastiveMatchesOracle) {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t b = 2 + rng.below(3), d = 2 + rng.below(7);
    std::vector<Mat> regions, words;
    std::vector<Tensor> image_locals, text_locals;
    for (std::size_t i = 0; i < b; ++i) {
      regions.push_back(random_mat(rng, 1 + rng.below(4), d));
      words.push_back(random_mat(rng, 1 + rng.below(4), d));
      image_locals.push_back(cols_tensor(regions.back()));
      text_locals.push_back(cols_tensor(words.back()));
    }
    Mat logits(b, Vec(b));
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < b; ++j) logits[i][j] = local_score_oracle(regions[i], words[j], 1.0) / 0.07;
    EXPECT_NEAR(local_contrastive_loss(image_locals, text_locals, 0.07, 1.0).item(), infonce_oracle(logits), 1e-11);
  }
}

TEST(LocalLoss, SingletonBatchIsExactlyZero) {
  Rng rng(5);
  const Tensor img[] = {cols_tensor(random_mat(rng, 4, 6))};
  const Tensor txt[] = {cols_tensor(random_mat(rng, 3, 6))};
  EXPECT_EQ(local_contrastive_loss(img, txt, 0.07, 1.0).item(), 0.0);
}

TEST(LocalLoss, AttentionColumnsSumToOne) {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 2 + rng.below(7), m = 1 + rng.below(16), w = 1 + rng.below(10);
    const double magnitude = trial % 3 == 0 ? 30.0 : 1.0;
    const Tensor a = attention_weights(cols_tensor(scaled(random_mat(rng, m, d), magnitude)),
                                       cols_tensor(random_mat(rng, w, d)), 1.0);
    ASSERT_EQ(a.shape(), (Shape{m, w}));
    const Tensor sums = sum_axis(a, 0);
    for (double s : sums.data()) EXPECT_NEAR(s, 1.0, 1e-12);
    for (double v : a.data()) EXPECT_GE(v, 0.0);
  }
}

TEST(LocalLoss, RejectsMismatchedBatches) {
  Rng rng(7);
  const Tensor img[] = {cols_tensor(random_mat(rng, 4, 6)), cols_tensor(random_mat(rng, 4, 6))};
  const Tensor txt[] = {cols_tensor(random_mat(rng, 3, 6))};
  EXPECT_THROW(local_contrastive_loss(img, txt, 0.07, 1.0), InvalidArgument);
  const Tensor narrow[] = {cols_tensor(random_mat(rng, 3, 5)), cols_tensor(random_mat(rng, 3, 5))};
  EXPECT_THROW(local_contrastive_loss(img, narrow, 0.07, 1.0), InvalidArgument);
}

TEST(PertLoss, MatchesOracle) {
  Rng rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t d = 2 + rng.below(7), p = 1 + rng.below(9);
    const Mat v = random_mat(rng, 2, d);
    const Mat perturbed = random_mat(rng, p, d);
    EXPECT_NEAR(perturbation_sensitivity_loss(vec_tensor(v[0]), vec_tensor(v[1]), cols_tensor(perturbed), 0.07).item(),
                pert_oracle(v[0], v[1], perturbed, 0.07), 1e-12);
  }
}

TEST(PertLoss, NineIdenticalNegativesGiveLogTen) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const Mat v = random_mat(rng, 2, 8);
    const Mat copies(9, v[1]);
    const double loss =
        perturbation_sensitivity_loss(vec_tensor(v[0]), vec_tensor(v[1]), cols_tensor(copies), 0.07).item();
    EXPECT_NEAR(loss, std::log(10.0), 1e-9);
  }
}

TEST(PertLoss, RejectsMissingOrMisshapenNegatives) {
  const Tensor v = Tensor::from({2}, {1, 2});
  EXPECT_THROW(perturbation_sensitivity_loss(v, v, Tensor(), 0.07), InvalidArgument);
  EXPECT_THROW(perturbation_sensitivity_loss(v, v, Tensor::from({3, 1}, {1, 2, 3}), 0.07), InvalidArgument);
}

TEST(TotalLoss, WeightedSumIdentity) {
  Rng rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    LossWeights w;
    w.alpha = rng.uniform();
    w.beta = rng.uniform();
    const double g = 5 * rng.uniform(), l = 5 * rng.uniform(), p = 5 * rng.uniform();
    const auto out = total_loss(Tensor::scalar(g), Tensor::scalar(l), Tensor::scalar(p), w);
    EXPECT_NEAR(out.total.item(), g + w.alpha * l + w.beta * p, 1e-12);
    EXPECT_EQ(out.global.item(), g);
    EXPECT_EQ(out.local.item(), l);
    EXPECT_EQ(out.pert.item(), p);
  }
}

TEST(TotalLoss, MissingTermsCountAsZero) {
  const auto out = total_loss(Tensor::scalar(1.5), Tensor(), Tensor(), LossWeights{});
  EXPECT_EQ(out.total.item(), 1.5);
  EXPECT_EQ(out.local.item(), 0.0);
  EXPECT_EQ(out.pert.item(), 0.0);
}

TEST(LossWeights, Validation) {
  LossWeights w;
  w.alpha = -0.1;
  EXPECT_THROW(w.validate(), InvalidArgument);
  w = LossWeights{};
  w.tau_local = 0.0;
  EXPECT_THROW(w.validate(), InvalidArgument);
  w = LossWeights{};
  EXPECT_EQ(w.local_contrast_temperature(), w.tau);
  w.tau_local_contrast = 0.2;
  EXPECT_EQ(w.local_contrast_temperature(), 0.2);
}

TEST(Invariance, PositiveRescalingLeavesGlobalAndPertUnchanged) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t b = 2 + rng.below(4), d = 2 + rng.below(7);
    const Mat img = random_mat(rng, b, d), txt = random_mat(rng, b, d), perturbed = random_mat(rng, 4, d);
    const double s = std::exp(4.0 * rng.uniform() - 2.0);
    const double g0 = global_contrastive_loss(rows_tensor(img), rows_tensor(txt), 0.07).item();
    const double g1 = global_contrastive_loss(rows_tensor(scaled(img, s)), rows_tensor(scaled(txt, 1.0 / s)), 0.07).item();
    EXPECT_NEAR(g0, g1, 1e-12);
    const double p0 = perturbation_sensitivity_loss(vec_tensor(img[0]), vec_tensor(txt[0]), cols_tensor(perturbed), 0.07).item();
    const double p1 = perturbation_sensitivity_loss(vec_tensor(scaled(img, s)[0]), vec_tensor(scaled(txt, s)[0]),
                                                    cols_tensor(scaled(perturbed, 1.0 / s)), 0.07)
                          .item();
    EXPECT_NEAR(p0, p1, 1e-12);
  }
}

TEST(Invariance, BatchPermutationLeavesLossesUnchanged) {
  Rng rng(12);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t b = 2 + rng.below(4), d = 2 + rng.below(7);
    const Mat img = random_mat(rng, b, d), txt = random_mat(rng, b, d);
    std::vector<Tensor> regions, words;
    for (std::size_t i = 0; i < b; ++i) {
      regions.push_back(cols_tensor(random_mat(rng, 1 + rng.below(4), d)));
      words.push_back(cols_tensor(random_mat(rng, 1 + rng.below(4), d)));
    }
    std::vector<std::size_t> perm(b);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(std::span<std::size_t>(perm));
    Mat img_p, txt_p;
    std::vector<Tensor> regions_p, words_p;
    for (std::size_t i : perm) {
      img_p.push_back(img[i]);
      txt_p.push_back(txt[i]);
      regions_p.push_back(regions[i]);
      words_p.push_back(words[i]);
    }
    EXPECT_NEAR(global_contrastive_loss(rows_tensor(img), rows_tensor(txt), 0.07).item(),
                global_contrastive_loss(rows_tensor(img_p), rows_tensor(txt_p), 0.07).item(), 1e-12);
    EXPECT_NEAR(local_contrastive_loss(regions, words, 0.07, 1.0).item(),
                local_contrastive_loss(regions_p, words_p, 0.07, 1.0).item(), 1e-12);
  }
}
