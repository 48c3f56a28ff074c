#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "prdlab/encoders.hpp"
#include "prdlab/losses.hpp"
#include "prdlab/synthetic.hpp"
#include "prdlab/text.hpp"

namespace prdlab {

struct TrainConfig {
  EncoderConfig encoder;
  LossWeights weights;
  std::size_t epochs = 150;
  std::size_t batch_size = 64;
  double lr = 0.0015;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t data_seed = 1;     // epoch order
  std::uint64_t perturb_seed = 2;  // negatives for the perturbation term
  std::size_t checkpoint_every = 0;  // epochs; 0 = final checkpoint only
  bool detach_negatives = false;
  // Evaluate local/pert terms even when their weight is zero.
  bool compute_disabled_terms = false;

  void validate() const;
};

struct MetricsRow {
  std::size_t epoch = 0;  // 1-based
  std::size_t step = 0;   // 1-based, counted across epochs
  double global = 0.0;
  double local = 0.0;
  double pert = 0.0;
  double total = 0.0;

  bool operator==(const MetricsRow&) const = default;
};

// buffer <- momentum * buffer + grad + weight_decay * param
// param  <- param - lr * buffer
void sgd_step(std::span<double> param, std::span<const double> grad, std::span<double> buffer, double lr,
              double momentum, double weight_decay);

// Momentum buffers for every parameter of a model, in parameter order.
class SgdOptimizer {
 public:
  SgdOptimizer(const Model& model, double lr, double momentum, double weight_decay);

  void step(Model& model);
  std::vector<std::vector<double>>& buffers() { return buffers_; }
  const std::vector<std::vector<double>>& buffers() const { return buffers_; }

 private:
  double lr_;
  double momentum_;
  double weight_decay_;
  std::vector<std::vector<double>> buffers_;
};

// Everything needed to continue a run bit-exactly. Data-order and
// perturbation draws are derived from (seed, epoch, sample id), so the seeds
// and the epoch counter are the whole random state.
struct TrainingState {
  TrainConfig config;
  std::size_t epochs_done = 0;
  std::size_t steps_done = 0;
  std::vector<NamedTensor> parameters;
  std::vector<std::vector<double>> momentum;
};

// Perturbation seed of one sample in one epoch.
std::uint64_t perturbation_seed(std::uint64_t base, std::uint64_t sample_id, std::size_t epoch);

// Epoch order of the corpus (0-based epoch).
std::vector<std::size_t> epoch_order(std::size_t corpus_size, std::uint64_t data_seed, std::size_t epoch);

class Trainer {
 public:
  Trainer(TrainConfig config, std::span<const SyntheticPair> corpus);
  Trainer(const TrainingState& state, std::span<const SyntheticPair> corpus);

  // Runs one epoch and returns its metric rows.
  std::vector<MetricsRow> run_epoch();

  std::size_t epochs_done() const { return epochs_done_; }
  const TrainConfig& config() const { return config_; }
  Model& model() { return model_; }
  const Model& model() const { return model_; }
  TrainingState state() const;

 private:
  MetricsRow train_step(std::span<const std::size_t> batch);

  TrainConfig config_;
  Model model_;
  SgdOptimizer optimizer_;
  std::vector<Tensor> images_;
  std::vector<TokenizedReport> reports_;
  std::vector<std::uint64_t> ids_;
  std::size_t epochs_done_ = 0;
  std::size_t steps_done_ = 0;
};

using EpochCallback = std::function<void(const Trainer&, std::span<const MetricsRow>)>;

// Runs until config.epochs and returns the full metric stream.
std::vector<MetricsRow> train(Trainer& trainer, const EpochCallback& on_epoch = {});

}  // namespace prdlab
