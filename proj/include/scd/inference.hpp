#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "scd/model.hpp"

namespace scd {

// Encoder forward pass in evaluation mode. Returns [L, model_dim].
Tensor encode_eval(const Model& model, const Tensor& fused_inputs);

using ClassLogits = std::array<double, kNumClasses>;

// Incremental decoder for inference: self-attention keys and values are cached
// per hypothesis, cross-attention keys and values are computed once.
class DecoderSession {
 public:
  struct State {
    std::vector<std::vector<double>> keys;    // per layer, row-major [length, dim]
    std::vector<std::vector<double>> values;  // per layer
    std::size_t length = 0;
  };

  DecoderSession(const Model& model, const Tensor& enc_hidden);

  State initial_state() const;
  // Consumes `symbol` at position state.length and returns that position's logits.
  ClassLogits step(State& state, DecoderSymbol symbol) const;

  std::size_t encoder_length() const { return enc_length_; }

 private:
  const Model& model_;
  std::size_t dim_;
  std::size_t enc_length_;
  Tensor symbol_rows_;  // projected + GELU label table rows, [3, dim]
  std::vector<Tensor> cross_keys_, cross_values_;
};

// p(change) after masking eos and renormalizing over {same, change}.
double change_probability(const ClassLogits& logits);
// log p(same), log p(change) over the two unmasked classes.
std::array<double, 2> binary_log_probs(const ClassLogits& logits);

}  // namespace scd
