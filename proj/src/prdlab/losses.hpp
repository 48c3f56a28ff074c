#pragma once

#include <optional>
#include <span>

#include "prdlab/tensor.hpp"

namespace prdlab {

struct LossWeights {
  double alpha = 0.1;      // local attentive term
  double beta = 0.1;       // perturbation sensitivity term
  double tau = 0.07;       // contrastive temperature
  double tau_local = 1.0;  // word/region attention and score aggregation temperature
  // Temperature of the local InfoNCE over matching scores; tau when unset.
  std::optional<double> tau_local_contrast;

  void validate() const;
  double local_contrast_temperature() const { return tau_local_contrast.value_or(tau); }
};

struct LossBreakdown {
  Tensor global;
  Tensor local;
  Tensor pert;
  Tensor total;
};

// Symmetric InfoNCE over a (B x B) logit matrix with the diagonal as positives.
Tensor symmetric_infonce(const Tensor& logits);

// Rows of image_global / text_global are (B x d_e) embeddings; both are
// L2-normalised here before the cosine logits are scaled by 1/tau.
Tensor global_contrastive_loss(const Tensor& image_global, const Tensor& text_global, double tau);

// (M x W) matrix of softmax_k(<region_k, word_j> / tau_local); columns sum to 1.
Tensor attention_weights(const Tensor& image_local, const Tensor& text_local, double tau_local);

// Attention-pooled region context per word, cosine with the word, then
// log-sum-exp over words with temperature tau_local.
Tensor local_matching_score(const Tensor& image_local, const Tensor& text_local, double tau_local);

// Scores of one image against several texts in one pass; returns (T).
Tensor local_matching_scores(const Tensor& image_local, std::span<const Tensor> text_locals,
                             double tau_local);

// Symmetric InfoNCE over the (B x B) matrix of local matching scores.
Tensor local_contrastive_loss(std::span<const Tensor> image_locals, std::span<const Tensor> text_locals,
                              double tau, double tau_local);

// -log softmax of the original pair's similarity against P perturbed texts.
// image, text: (d_e); perturbed: (d_e x P). Normalises internally.
Tensor perturbation_sensitivity_loss(const Tensor& image, const Tensor& text, const Tensor& perturbed,
                                     double tau);

LossBreakdown total_loss(const Tensor& global, const Tensor& local, const Tensor& pert,
                         const LossWeights& weights);

}  // namespace prdlab
