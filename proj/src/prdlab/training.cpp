#include "prdlab/training.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "prdlab/error.hpp"
#include "prdlab/perturb.hpp"
#include "prdlab/rng.hpp"

namespace prdlab {

namespace {

// Evaluates one loss component; non-finite values surface as a RuntimeError
// naming the component.
template <typename F>
Tensor component(const char* name, const MetricsRow& where, F&& compute) {
  auto fail = [&](const std::string& detail) {
    return RuntimeError("non-finite " + std::string(name) + " loss at epoch " + std::to_string(where.epoch) +
                        ", step " + std::to_string(where.step) + (detail.empty() ? "" : " (" + detail + ")"));
  };
  Tensor value;
  try {
    value = compute();
  } catch (const InvalidArgument& e) {
    if (std::string(e.what()).find("non-finite") != std::string::npos) throw fail(e.what());
    throw;
  }
  if (value.defined() && !std::isfinite(value.item())) throw fail("");
  return value;
}

Tensor as_row(const Tensor& v) { return reshape(v, {1, v.numel()}); }
Tensor as_column(const Tensor& v) { return reshape(v, {v.numel(), 1}); }

}  // namespace

void TrainConfig::validate() const {
  encoder.validate();
  weights.validate();
  if (!(lr > 0.0)) throw InvalidArgument("learning rate must be positive");
  if (batch_size == 0) throw InvalidArgument("batch size must be at least 1");
  if (epochs == 0) throw InvalidArgument("epochs must be at least 1");
  if (!(momentum >= 0.0) || !(weight_decay >= 0.0)) {
    throw InvalidArgument("momentum and weight decay must be non-negative");
  }
}

void sgd_step(std::span<double> param, std::span<const double> grad, std::span<double> buffer, double lr,
              double momentum, double weight_decay) {
  if (param.size() != grad.size() || param.size() != buffer.size()) {
    throw InvalidArgument("sgd_step: parameter, gradient and buffer sizes differ");
  }
  for (std::size_t i = 0; i < param.size(); ++i) {
    buffer[i] = momentum * buffer[i] + grad[i] + weight_decay * param[i];
    param[i] -= lr * buffer[i];
  }
}

SgdOptimizer::SgdOptimizer(const Model& model, double lr, double momentum, double weight_decay)
    : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
  for (const auto& p : model.parameters()) buffers_.emplace_back(p.value.numel(), 0.0);
}

void SgdOptimizer::step(Model& model) {
  auto& params = model.parameters();
  if (params.size() != buffers_.size()) throw InvalidArgument("optimizer does not match the model");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i].value;
    std::vector<double> values(p.data().begin(), p.data().end());
    const std::vector<double> grad = p.grad();
    sgd_step(values, grad, buffers_[i], lr_, momentum_, weight_decay_);
    p.assign(values);
  }
}

std::uint64_t perturbation_seed(std::uint64_t base, std::uint64_t sample_id, std::size_t epoch) {
  return derive_seed(derive_seed(base, sample_id), epoch);
}

std::vector<std::size_t> epoch_order(std::size_t corpus_size, std::uint64_t data_seed, std::size_t epoch) {
  std::vector<std::size_t> order(corpus_size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(data_seed, epoch));
  rng.shuffle(std::span<std::size_t>(order));
  return order;
}

Trainer::Trainer(TrainConfig config, std::span<const SyntheticPair> corpus)
    : config_(std::move(config)),
      model_((config_.validate(), config_.encoder)),
      optimizer_(model_, config_.lr, config_.momentum, config_.weight_decay) {
  if (corpus.empty()) throw InvalidArgument("training corpus is empty");
  if (config_.batch_size > corpus.size()) throw InvalidArgument("batch size exceeds the corpus size");
  for (const auto& pair : corpus) {
    if (pair.side != config_.encoder.image_side) {
      throw InvalidArgument("corpus image side " + std::to_string(pair.side) + " does not match the encoder");
    }
    images_.push_back(pair.image());
    reports_.push_back(pos_tag(tokenize(pair.report)));
    ids_.push_back(pair.id);
  }
}

Trainer::Trainer(const TrainingState& state, std::span<const SyntheticPair> corpus)
    : Trainer(state.config, corpus) {
  auto& params = model_.parameters();
  if (state.parameters.size() != params.size() || state.momentum.size() != params.size()) {
    throw InvalidArgument("training state does not match the model layout");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.parameters[i].name != params[i].name ||
        state.parameters[i].value.shape() != params[i].value.shape() ||
        state.momentum[i].size() != params[i].value.numel()) {
      throw InvalidArgument("training state parameter '" + state.parameters[i].name + "' does not match");
    }
    params[i].value.assign(state.parameters[i].value.data());
  }
  optimizer_.buffers() = state.momentum;
  epochs_done_ = state.epochs_done;
  steps_done_ = state.steps_done;
}

TrainingState Trainer::state() const {
  TrainingState s;
  s.config = config_;
  s.epochs_done = epochs_done_;
  s.steps_done = steps_done_;
  for (const auto& p : model_.parameters()) s.parameters.push_back({p.name, p.value.detach()});
  s.momentum = optimizer_.buffers();
  return s;
}

std::vector<MetricsRow> Trainer::run_epoch() {
  const auto order = epoch_order(images_.size(), config_.data_seed, epochs_done_);
  std::vector<MetricsRow> rows;
  for (std::size_t start = 0; start < order.size(); start += config_.batch_size) {
    const std::size_t end = std::min(order.size(), start + config_.batch_size);
    rows.push_back(train_step(std::span<const std::size_t>(order).subspan(start, end - start)));
  }
  ++epochs_done_;
  return rows;
}

MetricsRow Trainer::train_step(std::span<const std::size_t> batch) {
  MetricsRow row;
  row.epoch = epochs_done_ + 1;
  row.step = steps_done_ + 1;
  const LossWeights& w = config_.weights;
  const bool want_local = w.alpha > 0.0 || config_.compute_disabled_terms;
  const bool want_pert = w.beta > 0.0 || config_.compute_disabled_terms;

  std::vector<Tensor> image_rows, text_rows, image_locals, text_locals, image_globals, text_globals;
  for (std::size_t idx : batch) {
    const ImageEmbedding img = model_.encode_image(images_[idx]);
    const TextEmbedding txt = model_.encode_text(reports_[idx], want_local);
    image_rows.push_back(as_row(img.global));
    text_rows.push_back(as_row(txt.global));
    image_globals.push_back(img.global);
    text_globals.push_back(txt.global);
    if (want_local) {
      image_locals.push_back(img.local);
      text_locals.push_back(txt.local);
    }
  }

  const Tensor global = component("global", row, [&] {
    return global_contrastive_loss(concat(image_rows, 0), concat(text_rows, 0), w.tau);
  });

  Tensor local;
  if (want_local) {
    local = component("local", row, [&] {
      return local_contrastive_loss(image_locals, text_locals, w.local_contrast_temperature(), w.tau_local);
    });
  }

  Tensor pert;
  if (want_pert) {
    pert = component("pert", row, [&] {
      std::vector<Tensor> per_sample;
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const std::size_t idx = batch[b];
        const PerturbationSet set =
            generate_set(reports_[idx], perturbation_seed(config_.perturb_seed, ids_[idx], epochs_done_));
        std::vector<Tensor> negatives;
        for (const auto& variant : set.variants) {
          if (variant.degenerate) continue;
          const TokenizedReport text = from_tokens(variant.tokens);
          if (config_.detach_negatives) {
            NoGradGuard no_grad;
            negatives.push_back(as_column(model_.encode_text(text, false).global));
          } else {
            negatives.push_back(as_column(model_.encode_text(text, false).global));
          }
        }
        if (negatives.empty()) continue;
        per_sample.push_back(perturbation_sensitivity_loss(image_globals[b], text_globals[b],
                                                           concat(negatives, 1), w.tau));
      }
      if (per_sample.empty()) return Tensor::scalar(0.0);
      return mean(concat(per_sample, 0));
    });
  }

  const LossBreakdown losses = total_loss(global, local, pert, w);
  row.global = losses.global.item();
  row.local = losses.local.item();
  row.pert = losses.pert.item();
  row.total = losses.total.item();
  if (!std::isfinite(row.total)) {
    throw RuntimeError("non-finite total loss at epoch " + std::to_string(row.epoch) + ", step " +
                       std::to_string(row.step));
  }

  model_.zero_grad();
  losses.total.backward();
  optimizer_.step(model_);
  model_.zero_grad();
  ++steps_done_;
  return row;
}

std::vector<MetricsRow> train(Trainer& trainer, const EpochCallback& on_epoch) {
  std::vector<MetricsRow> all;
  while (trainer.epochs_done() < trainer.config().epochs) {
    const auto rows = trainer.run_epoch();
    all.insert(all.end(), rows.begin(), rows.end());
    if (on_epoch) on_epoch(trainer, rows);
  }
  return all;
}

}  // namespace prdlab
