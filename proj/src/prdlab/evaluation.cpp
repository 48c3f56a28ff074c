#include "prdlab/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "prdlab/error.hpp"
#include "prdlab/rng.hpp"
#include "prdlab/training.hpp"

namespace prdlab {

namespace {

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<double> to_vector(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

}  // namespace

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("cosine_similarity: vector lengths differ");
  double ab = 0.0;
  double aa = 0.0;
  double bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) throw InvalidArgument("cosine_similarity: zero vector");
  return std::clamp(ab / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0);
}

std::vector<double> ModelEmbedder::embed_image(const Tensor& pixels) const {
  NoGradGuard no_grad;
  return to_vector(model_.encode_image(pixels).global);
}

std::vector<double> ModelEmbedder::embed_text(const TokenizedReport& report) const {
  NoGradGuard no_grad;
  return to_vector(model_.encode_text(report, false).global);
}

std::vector<double> RandomEmbedder::draw(std::uint64_t key) const {
  Rng rng(derive_seed(seed_, key));
  std::vector<double> v(dim_);
  for (double& x : v) x = rng.normal();
  return v;
}

std::vector<double> RandomEmbedder::embed_image(const Tensor& pixels) const {
  const auto data = pixels.data();
  return draw(fnv1a(data.data(), data.size_bytes()));
}

std::vector<double> RandomEmbedder::embed_text(const TokenizedReport& report) const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& token : report.tokens) {
    h = fnv1a(token.data(), token.size(), h);
    h = fnv1a(" ", 1, h);
  }
  return draw(h);
}

StructureEvalResult structure_eval(std::span<const SyntheticPair> pairs, const GlobalEmbedder& embedder,
                                   const StructureEvalOptions& options) {
  if (pairs.empty()) throw InvalidArgument("structure_eval: no pairs");
  if (options.rules.empty()) throw InvalidArgument("structure_eval: no perturbation rules selected");
  StructureEvalResult result;
  double variance = 0.0;
  for (const auto& pair : pairs) {
    const TokenizedReport original = pos_tag(tokenize(pair.report));
    const PerturbationSet set = generate_set(original, derive_seed(options.seed, pair.id));

    std::vector<const Perturbation*> candidates;
    for (Rule rule : options.rules) {
      const Perturbation& variant = set.variants[static_cast<std::size_t>(rule)];
      if (!variant.degenerate) candidates.push_back(&variant);
    }
    if (candidates.empty()) {
      ++result.n_skipped;
      result.warnings.push_back("pair " + std::to_string(pair.id) + ": every perturbation is degenerate, skipped");
      continue;
    }

    const auto image = embedder.embed_image(pair.image());
    const double score = cosine_similarity(image, embedder.embed_text(original));
    const Perturbation* best = nullptr;
    double best_score = 0.0;
    for (const Perturbation* c : candidates) {
      const double s = cosine_similarity(image, embedder.embed_text(from_tokens(c->tokens)));
      if (best == nullptr || s > best_score) {
        best = c;
        best_score = s;
      }
    }

    ++result.n_samples;
    if (score > best_score) {
      ++result.n_correct;
    } else {
      ++result.confusion[static_cast<std::size_t>(best->rule)];
    }
    const double p = 1.0 / (1.0 + static_cast<double>(candidates.size()));
    result.random_baseline += p;
    variance += p * (1.0 - p);
  }
  if (result.n_samples > 0) {
    const auto n = static_cast<double>(result.n_samples);
    result.accuracy = static_cast<double>(result.n_correct) / n;
    result.random_baseline /= n;
    result.random_baseline_sd = std::sqrt(variance) / n;
  }
  return result;
}

RetrievalResult retrieval_eval(std::span<const SyntheticPair> pairs, const GlobalEmbedder& embedder,
                               std::span<const std::size_t> k_values) {
  if (k_values.empty()) throw InvalidArgument("retrieval_eval: no k values");
  const std::size_t n = pairs.size();
  const std::size_t max_k = *std::max_element(k_values.begin(), k_values.end());
  if (std::find(k_values.begin(), k_values.end(), std::size_t{0}) != k_values.end()) {
    throw InvalidArgument("retrieval_eval: k must be at least 1");
  }
  if (n < max_k) {
    throw InvalidArgument("retrieval_eval: " + std::to_string(n) + " pairs is fewer than k = " +
                          std::to_string(max_k));
  }
  std::vector<std::vector<double>> images;
  std::vector<std::vector<double>> texts;
  for (const auto& pair : pairs) {
    images.push_back(embedder.embed_image(pair.image()));
    texts.push_back(embedder.embed_text(tokenize(pair.report)));
  }
  std::vector<double> sim(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) sim[i * n + j] = cosine_similarity(images[i], texts[j]);
  }

  RetrievalResult result;
  result.n = n;
  result.k_values.assign(k_values.begin(), k_values.end());
  result.image_to_text.assign(k_values.size(), 0.0);
  result.text_to_image.assign(k_values.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t rank_i2t = 1;
    std::size_t rank_t2i = 1;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      if (sim[i * n + j] >= sim[i * n + i]) ++rank_i2t;
      if (sim[j * n + i] >= sim[i * n + i]) ++rank_t2i;
    }
    for (std::size_t k = 0; k < k_values.size(); ++k) {
      if (rank_i2t <= k_values[k]) result.image_to_text[k] += 1.0;
      if (rank_t2i <= k_values[k]) result.text_to_image[k] += 1.0;
    }
  }
  for (std::size_t k = 0; k < k_values.size(); ++k) {
    result.image_to_text[k] /= static_cast<double>(n);
    result.text_to_image[k] /= static_cast<double>(n);
  }
  return result;
}

ProbeResult linear_probe(std::span<const std::vector<double>> embeddings, std::span<const Labels> labels,
                         const ProbeOptions& options) {
  const std::size_t n = embeddings.size();
  if (n != labels.size()) throw InvalidArgument("linear_probe: embeddings and labels differ in count");
  if (n < 2) throw InvalidArgument("linear_probe: need at least two samples");
  if (!(options.train_fraction > 0.0 && options.train_fraction < 1.0)) {
    throw InvalidArgument("linear_probe: train fraction must lie in (0, 1)");
  }
  if (options.batch_size == 0 || options.epochs == 0 || !(options.lr > 0.0)) {
    throw InvalidArgument("linear_probe: invalid optimiser settings");
  }
  const std::size_t dim = embeddings[0].size();
  for (const auto& e : embeddings) {
    if (e.size() != dim || dim == 0) throw InvalidArgument("linear_probe: embeddings differ in width");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng split_rng(options.split_seed);
  split_rng.shuffle(std::span<std::size_t>(order));
  const std::size_t n_train = static_cast<std::size_t>(std::floor(options.train_fraction * static_cast<double>(n)));
  if (n_train == 0 || n_train == n) throw InvalidArgument("linear_probe: split leaves an empty side");
  const std::span<const std::size_t> train_idx(order.data(), n_train);
  const std::span<const std::size_t> test_idx(order.data() + n_train, n - n_train);

  std::vector<double> mu(dim, 0.0);
  std::vector<double> sd(dim, 0.0);
  for (std::size_t i : train_idx) {
    for (std::size_t c = 0; c < dim; ++c) mu[c] += embeddings[i][c];
  }
  for (double& m : mu) m /= static_cast<double>(n_train);
  for (std::size_t i : train_idx) {
    for (std::size_t c = 0; c < dim; ++c) sd[c] += (embeddings[i][c] - mu[c]) * (embeddings[i][c] - mu[c]);
  }
  for (double& s : sd) s = std::sqrt(s / static_cast<double>(n_train)) + 1e-12;
  std::vector<std::vector<double>> x(n, std::vector<double>(dim));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < dim; ++c) x[i][c] = (embeddings[i][c] - mu[c]) / sd[c];
  }

  ProbeResult result;
  result.n_train = n_train;
  result.n_test = n - n_train;
  for (std::size_t f = 0; f < kFindingCount; ++f) {
    std::size_t positives = 0;
    for (std::size_t i : train_idx) positives += labels[i][f] ? 1 : 0;
    if (positives == 0 || positives == n_train) {
      throw InvalidArgument("linear_probe: training split has a single class for " +
                            std::string(finding_name(f)));
    }
    // Weights followed by the bias.
    std::vector<double> w(dim + 1, 0.0);
    std::vector<double> buffer(dim + 1, 0.0);
    std::vector<double> grad(dim + 1);
    std::vector<std::size_t> batch_order(train_idx.begin(), train_idx.end());
    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
      Rng rng(derive_seed(derive_seed(options.split_seed, f), epoch));
      rng.shuffle(std::span<std::size_t>(batch_order));
      for (std::size_t start = 0; start < n_train; start += options.batch_size) {
        const std::size_t end = std::min(n_train, start + options.batch_size);
        std::fill(grad.begin(), grad.end(), 0.0);
        for (std::size_t b = start; b < end; ++b) {
          const auto& xi = x[batch_order[b]];
          double z = w[dim];
          for (std::size_t c = 0; c < dim; ++c) z += w[c] * xi[c];
          const double err = sigmoid(z) - (labels[batch_order[b]][f] ? 1.0 : 0.0);
          for (std::size_t c = 0; c < dim; ++c) grad[c] += err * xi[c];
          grad[dim] += err;
        }
        for (double& g : grad) g /= static_cast<double>(end - start);
        sgd_step(w, grad, buffer, options.lr, options.momentum, options.weight_decay);
      }
    }
    std::size_t correct = 0;
    for (std::size_t i : test_idx) {
      double z = w[dim];
      for (std::size_t c = 0; c < dim; ++c) z += w[c] * x[i][c];
      if ((z > 0.0) == labels[i][f]) ++correct;
    }
    result.accuracy[f] = static_cast<double>(correct) / static_cast<double>(result.n_test);
  }
  return result;
}

std::vector<std::vector<double>> image_embeddings(std::span<const SyntheticPair> pairs,
                                                  const GlobalEmbedder& embedder) {
  std::vector<std::vector<double>> out;
  out.reserve(pairs.size());
  for (const auto& pair : pairs) out.push_back(embedder.embed_image(pair.image()));
  return out;
}

}  // namespace prdlab
