#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "prdlab/encoders.hpp"
#include "prdlab/perturb.hpp"
#include "prdlab/synthetic.hpp"

namespace prdlab {

// Throws on a zero vector or mismatched lengths.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

// Anything that maps images and reports into one space of global embeddings.
class GlobalEmbedder {
 public:
  virtual ~GlobalEmbedder() = default;
  virtual std::vector<double> embed_image(const Tensor& pixels) const = 0;
  virtual std::vector<double> embed_text(const TokenizedReport& report) const = 0;
};

class ModelEmbedder final : public GlobalEmbedder {
 public:
  explicit ModelEmbedder(const Model& model) : model_(model) {}
  std::vector<double> embed_image(const Tensor& pixels) const override;
  std::vector<double> embed_text(const TokenizedReport& report) const override;

 private:
  const Model& model_;
};

// Gaussian vectors keyed on a hash of the input; identical inputs map to
// identical vectors, distinct inputs are exchangeable.
class RandomEmbedder final : public GlobalEmbedder {
 public:
  RandomEmbedder(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {}
  std::vector<double> embed_image(const Tensor& pixels) const override;
  std::vector<double> embed_text(const TokenizedReport& report) const override;

 private:
  std::vector<double> draw(std::uint64_t key) const;

  std::size_t dim_;
  std::uint64_t seed_;
};

struct StructureEvalOptions {
  std::uint64_t seed = 0;
  // Rules whose variants enter the candidate list; all nine by default.
  std::vector<Rule> rules{kAllRules.begin(), kAllRules.end()};
};

struct StructureEvalResult {
  std::size_t n_samples = 0;  // pairs with at least one usable candidate
  std::size_t n_correct = 0;
  std::size_t n_skipped = 0;  // every variant degenerate
  double accuracy = 0.0;
  // For each wrong sample, the rule of the best-scoring perturbation.
  std::array<std::size_t, kRuleCount> confusion{};
  // Expected accuracy of uniform random ranking, mean of 1 / (1 + P_i), and
  // the binomial standard deviation of that accuracy.
  double random_baseline = 0.0;
  double random_baseline_sd = 0.0;
  std::vector<std::string> warnings;
};

// Perturbations of pair `id` are drawn from derive_seed(options.seed, id).
StructureEvalResult structure_eval(std::span<const SyntheticPair> pairs, const GlobalEmbedder& embedder,
                                   const StructureEvalOptions& options = {});

struct RetrievalResult {
  std::size_t n = 0;
  std::vector<std::size_t> k_values;
  std::vector<double> image_to_text;  // recall@k per entry of k_values
  std::vector<double> text_to_image;
};

// Ties with the true partner are ranked against it.
RetrievalResult retrieval_eval(std::span<const SyntheticPair> pairs, const GlobalEmbedder& embedder,
                               std::span<const std::size_t> k_values);

struct ProbeOptions {
  std::uint64_t split_seed = 0;
  double train_fraction = 0.5;
  std::size_t epochs = 200;
  std::size_t batch_size = 16;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

struct ProbeResult {
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::array<double, kFindingCount> accuracy{};
};

// One logistic-regression classifier per finding on frozen embeddings,
// standardised with training-split statistics.
ProbeResult linear_probe(std::span<const std::vector<double>> embeddings, std::span<const Labels> labels,
                         const ProbeOptions& options = {});

std::vector<std::vector<double>> image_embeddings(std::span<const SyntheticPair> pairs,
                                                  const GlobalEmbedder& embedder);

}  // namespace prdlab
