#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "scd/autodiff.hpp"
#include "scd/dataset.hpp"
#include "scd/fusion.hpp"
#include "scd/model.hpp"

namespace scd {

struct TrainConfig {
  double lr_init = 1e-3;
  double weight_decay = 5e-5;
  double lr_min = 5e-6;
  std::size_t warmup_iters = 1000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 64;
  std::size_t total_epochs = 400;
  std::size_t tf_epochs = 300;
  Ablation ablation = Ablation::none;
  std::uint64_t seed = 1;

  std::size_t ar_epochs() const { return total_epochs - tf_epochs; }
  void validate() const;
};

// Linear warmup from 0 to lr_init over warmup_iters, then cosine decay that
// reaches lr_min at iteration total_iters - 1.
double lr_at(std::size_t iter, std::size_t total_iters, const TrainConfig& cfg);

struct OptimizerState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;
};

OptimizerState make_optimizer_state(const ParamSet& params);

// Bias-corrected Adam update with decoupled weight decay. Throws (leaving
// params and state untouched) if any gradient is not finite.
void adamw_step(ParamSet& params, const Gradients& grads, OptimizerState& state, double lr,
                const TrainConfig& cfg);

// Mean cross-entropy over all L + 1 positions. The last target must be eos.
ad::Var sequence_loss(ad::Var logits, std::span<const std::size_t> targets);

enum class Phase { teacher_forcing, autoregressive };
const char* phase_name(Phase p);

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based, continues across resumes
  Phase phase = Phase::teacher_forcing;
  double mean_loss = 0.0;
  double lr = 0.0;  // learning rate of the last step in the epoch
  double wall_s = 0.0;

  std::string to_json() const;
};

// Runs the teacher-forcing then autoregressive schedule over prepared
// examples. One conversation is one sequence; the batch gradient is the
// token-weighted mean of per-sequence gradients, reduced in batch order.
class Trainer {
 public:
  Trainer(Model& model, TrainConfig config, std::vector<Example> data);

  EpochMetrics train_epoch_tf();
  EpochMetrics train_epoch_ar();
  // The phase is chosen from the epoch number and tf_epochs.
  EpochMetrics train_next_epoch();
  // Runs all remaining epochs, calling `on_epoch` after each.
  void run(const std::function<void(const EpochMetrics&)>& on_epoch = {});

  std::size_t epochs_done() const { return epochs_done_; }
  std::size_t iterations_done() const { return iteration_; }
  std::size_t batches_per_epoch() const;
  std::size_t total_iterations() const;

  OptimizerState& optimizer() { return state_; }
  const TrainConfig& config() const { return config_; }
  // For resuming from a checkpoint.
  void restore_progress(std::size_t epochs_done, OptimizerState state);

  // Decoder prefixes used by an autoregressive epoch: the model's own greedy
  // predictions with the current parameters.
  std::vector<Label> own_prefix(const Example& ex) const;

 private:
  EpochMetrics run_epoch(Phase phase);

  Model& model_;
  TrainConfig config_;
  std::vector<Example> data_;
  OptimizerState state_;
  std::size_t epochs_done_ = 0;
  std::size_t iteration_ = 0;
};

// Loss and gradients of one sequence with the given decoder prefix.
struct SequenceGradient {
  double loss = 0.0;
  Gradients grads;
};
SequenceGradient sequence_gradient(const Model& model, const Example& ex,
                                   std::span<const Label> decoder_prefix, const RunMode& mode);

}  // namespace scd
