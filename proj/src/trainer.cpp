#include "scd/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>

#include <json.hpp>

#include "scd/error.hpp"
#include "scd/inference.hpp"
#include "scd/parallel.hpp"
#include "scd/random.hpp"
#include "scd/search.hpp"

namespace scd {

void TrainConfig::validate() const {
  require(lr_init > 0.0 && lr_min >= 0.0 && lr_min <= lr_init, "invalid_config",
          "learning rates must satisfy 0 <= lr_min <= lr_init, lr_init > 0");
  require(weight_decay >= 0.0, "invalid_config", "weight_decay must be >= 0");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "invalid_config",
          "betas must lie in [0, 1)");
  require(eps > 0.0, "invalid_config", "eps must be > 0");
  require(batch_size >= 1, "invalid_config", "batch_size must be >= 1");
  require(total_epochs >= 1, "invalid_config", "total_epochs must be >= 1");
  require(tf_epochs <= total_epochs, "invalid_config", "tf_epochs cannot exceed total_epochs");
}

double lr_at(std::size_t iter, std::size_t total_iters, const TrainConfig& cfg) {
  require(total_iters > cfg.warmup_iters, "invalid_config",
          "total iterations (" + std::to_string(total_iters) + ") must exceed warmup_iters (" +
              std::to_string(cfg.warmup_iters) + ")");
  require(iter < total_iters, "invalid_argument", "iteration beyond the schedule");
  if (iter < cfg.warmup_iters) {
    return cfg.lr_init * static_cast<double>(iter) / static_cast<double>(cfg.warmup_iters);
  }
  const std::size_t span = total_iters - 1 - cfg.warmup_iters;
  const double progress =
      span == 0 ? 1.0 : static_cast<double>(iter - cfg.warmup_iters) / static_cast<double>(span);
  // Weighted form hits lr_init at progress 0 and lr_min at progress 1 exactly.
  const double w = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return cfg.lr_init * w + cfg.lr_min * (1.0 - w);
}

OptimizerState make_optimizer_state(const ParamSet& params) {
  return OptimizerState{params.zeros_like(), params.zeros_like(), 0};
}

void adamw_step(ParamSet& params, const Gradients& grads, OptimizerState& state, double lr,
                const TrainConfig& cfg) {
  require(grads.size() == params.size() && state.m.size() == params.size() &&
              state.v.size() == params.size(),
          "shape_mismatch", "gradient/optimizer state count does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(grads[i].same_shape(params.at(i)), "shape_mismatch",
            "gradient shape mismatch for " + params.name(i));
    require(grads[i].all_finite(), "non_finite",
            "non-finite gradient in " + params.name(i) + "; step aborted");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const double decay = lr * cfg.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params.at(i);
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    const Tensor& g = grads[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      p[k] -= decay * p[k];
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      p[k] -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg.eps);
    }
  }
}

ad::Var sequence_loss(ad::Var logits, std::span<const std::size_t> targets) {
  require(!targets.empty() && targets.back() == static_cast<std::size_t>(OutputClass::eos),
          "invalid_argument", "training targets must end with eos");
  require(logits.value().rows() == targets.size(), "shape_mismatch",
          "logits have " + std::to_string(logits.value().rows()) + " positions for " +
              std::to_string(targets.size()) + " targets");
  return ad::cross_entropy(logits, targets);
}

const char* phase_name(Phase p) { return p == Phase::autoregressive ? "ar" : "tf"; }

std::string EpochMetrics::to_json() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["phase"] = phase_name(phase);
  j["mean_loss"] = mean_loss;
  j["lr"] = lr;
  j["wall_s"] = wall_s;
  return j.dump();
}

SequenceGradient sequence_gradient(const Model& model, const Example& ex,
                                   std::span<const Label> decoder_prefix, const RunMode& mode) {
  ad::Tape tape;
  const ad::Var logits = forward_with_prefix(tape, model, ex.fused, decoder_prefix, mode);
  const auto targets = training_targets(ex.labels);
  const ad::Var loss = sequence_loss(logits, targets);
  const double value = loss.value()[0];
  require(std::isfinite(value), "non_finite", "non-finite loss on " + ex.id);
  tape.backward(loss);
  return {value, tape.parameter_gradients(model.params)};
}

Trainer::Trainer(Model& model, TrainConfig config, std::vector<Example> data)
    : model_(model), config_(config), data_(std::move(data)), state_(make_optimizer_state(model.params)) {
  config_.validate();
  require(!data_.empty(), "empty_corpus", "no training conversations");
  // Validates the schedule length up front.
  (void)lr_at(0, total_iterations(), config_);
}

std::size_t Trainer::batches_per_epoch() const {
  return (data_.size() + config_.batch_size - 1) / config_.batch_size;
}

std::size_t Trainer::total_iterations() const { return batches_per_epoch() * config_.total_epochs; }

void Trainer::restore_progress(std::size_t epochs_done, OptimizerState state) {
  require(epochs_done <= config_.total_epochs, "invalid_argument", "checkpoint epoch beyond schedule");
  require(state.m.size() == model_.params.size() && state.v.size() == model_.params.size(),
          "shape_mismatch", "optimizer state does not match the model");
  epochs_done_ = epochs_done;
  iteration_ = epochs_done * batches_per_epoch();
  state_ = std::move(state);
}

std::vector<Label> Trainer::own_prefix(const Example& ex) const {
  const Tensor enc = encode_eval(model_, ex.fused);
  return greedy_decode(model_, enc, ex.length());
}

EpochMetrics Trainer::run_epoch(Phase phase) {
  require(epochs_done_ < config_.total_epochs, "invalid_argument", "training schedule already complete");
  const auto start = std::chrono::steady_clock::now();
  const std::uint64_t epoch = epochs_done_;

  std::vector<std::size_t> order(data_.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 shuffle_rng = make_rng(config_.seed, 2 * epoch);
  std::shuffle(order.begin(), order.end(), shuffle_rng);
  const std::uint64_t dropout_base = mix_seed(config_.seed, 2 * epoch + 1);

  const std::size_t total_iters = total_iterations();
  const std::size_t wave = std::max<std::size_t>(1, worker_count());
  double epoch_loss = 0.0;
  double epoch_tokens = 0.0;
  double last_lr = 0.0;

  for (std::size_t begin = 0; begin < order.size(); begin += config_.batch_size) {
    const std::size_t end = std::min(order.size(), begin + config_.batch_size);
    double batch_tokens = 0.0;
    for (std::size_t k = begin; k < end; ++k) batch_tokens += static_cast<double>(data_[order[k]].length() + 1);

    Gradients acc = model_.params.zeros_like();
    double batch_loss = 0.0;
    // Items are computed in parallel waves and reduced strictly in batch order.
    for (std::size_t w0 = begin; w0 < end; w0 += wave) {
      const std::size_t w1 = std::min(end, w0 + wave);
      std::vector<SequenceGradient> results(w1 - w0);
      parallel_for(w1 - w0, [&](std::size_t j) {
        const std::size_t pos = w0 + j;
        const Example& ex = data_[order[pos]];
        std::mt19937_64 rng = make_rng(dropout_base, pos);
        const RunMode mode = RunMode::training(model_.config.dropout, rng);
        if (phase == Phase::teacher_forcing) {
          results[j] = sequence_gradient(model_, ex, ex.labels, mode);
        } else {
          const auto prefix = own_prefix(ex);
          results[j] = sequence_gradient(model_, ex, prefix, mode);
        }
      });
      for (std::size_t j = 0; j < results.size(); ++j) {
        const double weight = static_cast<double>(data_[order[w0 + j]].length() + 1);
        const double scale = weight / batch_tokens;
        batch_loss += results[j].loss * weight;
        for (std::size_t p = 0; p < acc.size(); ++p) {
          Tensor& a = acc[p];
          const Tensor& g = results[j].grads[p];
          for (std::size_t q = 0; q < a.size(); ++q) a[q] += scale * g[q];
        }
      }
    }
    last_lr = lr_at(iteration_, total_iters, config_);
    adamw_step(model_.params, acc, state_, last_lr, config_);
    ++iteration_;
    epoch_loss += batch_loss;
    epoch_tokens += batch_tokens;
  }

  ++epochs_done_;
  EpochMetrics m;
  m.epoch = epochs_done_;
  m.phase = phase;
  m.mean_loss = epoch_loss / epoch_tokens;
  m.lr = last_lr;
  m.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return m;
}

EpochMetrics Trainer::train_epoch_tf() { return run_epoch(Phase::teacher_forcing); }

EpochMetrics Trainer::train_epoch_ar() { return run_epoch(Phase::autoregressive); }

EpochMetrics Trainer::train_next_epoch() {
  return epochs_done_ < config_.tf_epochs ? train_epoch_tf() : train_epoch_ar();
}

void Trainer::run(const std::function<void(const EpochMetrics&)>& on_epoch) {
  while (epochs_done_ < config_.total_epochs) {
    const EpochMetrics m = train_next_epoch();
    if (on_epoch) on_epoch(m);
  }
}

}  // namespace scd
