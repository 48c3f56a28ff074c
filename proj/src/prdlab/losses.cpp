#include "prdlab/losses.hpp"

#include <string>
#include <vector>

#include "prdlab/error.hpp"

namespace prdlab {

namespace {

Tensor diagonal(const Tensor& square) {
  const std::size_t b = square.dim(0);
  std::vector<std::int64_t> index(b);
  for (std::size_t i = 0; i < b; ++i) index[i] = static_cast<std::int64_t>(i * b + i);
  return gather(square, std::move(index), {b});
}

void require_temperature(double t, const char* what) {
  if (!(t > 0.0)) throw InvalidArgument(std::string(what) + " must be positive");
}

// Word columns of several texts side by side, plus their unit-norm version.
struct WordBank {
  Tensor words;       // (d, sum W)
  Tensor words_unit;  // columns L2-normalised
  std::vector<std::size_t> lengths;
};

WordBank make_bank(std::span<const Tensor> text_locals) {
  if (text_locals.empty()) throw InvalidArgument("local matching needs at least one text");
  WordBank bank;
  for (const Tensor& t : text_locals) {
    if (t.rank() != 2) throw InvalidArgument("text local embeddings must be (d_e, W)");
    bank.lengths.push_back(t.dim(1));
  }
  bank.words = text_locals.size() == 1 ? text_locals[0] : concat(text_locals, 1);
  bank.words_unit = l2_normalize(bank.words, 0);
  return bank;
}

Tensor scores_against(const Tensor& image_local, const WordBank& bank, double tau_local) {
  if (image_local.rank() != 2 || image_local.dim(0) != bank.words.dim(0)) {
    throw InvalidArgument("local matching: embedding widths differ between image " +
                          shape_str(image_local.shape()) + " and text " + shape_str(bank.words.shape()));
  }
  const Tensor attn = softmax(scale(matmul(transpose(image_local), bank.words), 1.0 / tau_local), 0);
  const Tensor context = matmul(image_local, attn);  // (d, sum W)
  const Tensor cosines = sum_axis(mul(l2_normalize(context, 0), bank.words_unit), 0);
  return segment_logsumexp(scale(cosines, 1.0 / tau_local), bank.lengths);
}

}  // namespace

void LossWeights::validate() const {
  require_temperature(tau, "tau");
  require_temperature(tau_local, "tau_local");
  if (tau_local_contrast) require_temperature(*tau_local_contrast, "tau_local_contrast");
  if (!(alpha >= 0.0) || !(beta >= 0.0)) throw InvalidArgument("loss weights alpha and beta must be >= 0");
}

Tensor symmetric_infonce(const Tensor& logits) {
  if (logits.rank() != 2 || logits.dim(0) != logits.dim(1)) {
    throw InvalidArgument("symmetric_infonce: logits must be square, got " + shape_str(logits.shape()));
  }
  const Tensor image_to_text = mean(diagonal(log_softmax(logits, 1)));
  const Tensor text_to_image = mean(diagonal(log_softmax(logits, 0)));
  return scale(add(image_to_text, text_to_image), -0.5);
}

Tensor global_contrastive_loss(const Tensor& image_global, const Tensor& text_global, double tau) {
  require_temperature(tau, "tau");
  if (image_global.rank() != 2 || text_global.rank() != 2) {
    throw InvalidArgument("global_contrastive_loss: expected (B, d_e) matrices");
  }
  if (image_global.shape() != text_global.shape()) {
    throw InvalidArgument("global_contrastive_loss: batch mismatch " + shape_str(image_global.shape()) +
                          " vs " + shape_str(text_global.shape()));
  }
  const Tensor images = l2_normalize(image_global, 1);
  const Tensor texts = l2_normalize(text_global, 1);
  return symmetric_infonce(scale(matmul(images, transpose(texts)), 1.0 / tau));
}

Tensor attention_weights(const Tensor& image_local, const Tensor& text_local, double tau_local) {
  require_temperature(tau_local, "tau_local");
  if (image_local.rank() != 2 || text_local.rank() != 2 || image_local.dim(0) != text_local.dim(0)) {
    throw InvalidArgument("attention_weights: embedding widths differ between " +
                          shape_str(image_local.shape()) + " and " + shape_str(text_local.shape()));
  }
  return softmax(scale(matmul(transpose(image_local), text_local), 1.0 / tau_local), 0);
}

Tensor local_matching_score(const Tensor& image_local, const Tensor& text_local, double tau_local) {
  return reshape(local_matching_scores(image_local, std::span<const Tensor>(&text_local, 1), tau_local), {1});
}

Tensor local_matching_scores(const Tensor& image_local, std::span<const Tensor> text_locals,
                             double tau_local) {
  require_temperature(tau_local, "tau_local");
  return scores_against(image_local, make_bank(text_locals), tau_local);
}

Tensor local_contrastive_loss(std::span<const Tensor> image_locals, std::span<const Tensor> text_locals,
                              double tau, double tau_local) {
  require_temperature(tau, "tau");
  require_temperature(tau_local, "tau_local");
  if (image_locals.empty() || image_locals.size() != text_locals.size()) {
    throw InvalidArgument("local_contrastive_loss: image and text batches differ in size");
  }
  const std::size_t b = image_locals.size();
  const WordBank bank = make_bank(text_locals);
  std::vector<Tensor> rows;
  rows.reserve(b);
  for (const Tensor& image : image_locals) rows.push_back(reshape(scores_against(image, bank, tau_local), {1, b}));
  const Tensor scores = b == 1 ? rows[0] : concat(rows, 0);
  return symmetric_infonce(scale(scores, 1.0 / tau));
}

Tensor perturbation_sensitivity_loss(const Tensor& image, const Tensor& text, const Tensor& perturbed,
                                     double tau) {
  require_temperature(tau, "tau");
  if (!perturbed.defined()) throw InvalidArgument("no perturbation negatives");
  const std::size_t d = image.numel();
  if (text.numel() != d || perturbed.rank() != 2 || perturbed.dim(0) != d) {
    throw InvalidArgument("perturbation_sensitivity_loss: embedding widths differ");
  }
  const Tensor parts[] = {reshape(text, {d, 1}), perturbed};
  const Tensor candidates = l2_normalize(concat(parts, 1), 0);  // (d, 1 + P)
  const Tensor anchor = l2_normalize(reshape(image, {1, d}), 1);
  const Tensor logits = scale(matmul(anchor, candidates), 1.0 / tau);  // (1, 1 + P)
  return neg(gather(log_softmax(logits, 1), std::vector<std::int64_t>{0}, {1}));
}

LossBreakdown total_loss(const Tensor& global, const Tensor& local, const Tensor& pert,
                         const LossWeights& weights) {
  weights.validate();
  LossBreakdown out;
  out.global = global;
  out.local = local.defined() ? local : Tensor::scalar(0.0);
  out.pert = pert.defined() ? pert : Tensor::scalar(0.0);
  Tensor total = global;
  if (local.defined()) total = add(total, scale(local, weights.alpha));
  if (pert.defined()) total = add(total, scale(pert, weights.beta));
  out.total = total;
  return out;
}

}  // namespace prdlab
