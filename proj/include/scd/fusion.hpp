#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "scd/alignment.hpp"
#include "scd/autodiff.hpp"
#include "scd/tensor.hpp"

namespace scd {

// Modality ablations: the normalized slice of the removed modality is zeroed,
// so the encoder projection keeps its 1024-wide input.
enum class Ablation { none, no_audio, no_text };

const char* ablation_name(Ablation a);
Ablation parse_ablation(const std::string& text);

// Train mode enables dropout drawn from `rng`; eval mode is deterministic.
struct RunMode {
  bool train = false;
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;

  static RunMode eval() { return {}; }
  static RunMode training(double rate, std::mt19937_64& rng) { return {true, rate, &rng}; }
  bool dropout_active() const { return train && dropout > 0.0 && rng != nullptr; }
};

// v * sqrt(d) / |v|. Throws on a zero vector.
std::vector<double> magnitude_normalize(std::span<const double> v);

// Sinusoidal encoding: component 2i is sin(pos / 10000^(2i/dim)), 2i+1 the cosine.
std::vector<double> positional_encoding(std::size_t pos, std::size_t dim);
// Rows first_pos .. first_pos + count - 1 of the encoding table.
Tensor positional_table(std::size_t count, std::size_t dim, std::size_t first_pos = 0);

// Per-token normalize(speaker) ++ normalize(text), [L, 1024], with the ablated
// slice zeroed.
Tensor fused_input_matrix(const AlignedSequence& seq, Ablation ablation = Ablation::none);

// linear -> dropout (train only) -> GELU -> + positional encoding, on rows that
// sit at positions first_pos, first_pos + 1, ...
ad::Var project_with_position(ad::Var x, ad::Var weight, ad::Var bias, const RunMode& mode,
                              std::size_t first_pos = 0);

// Single-token encoder input: 256-d speaker + 768-d text -> model dim.
std::vector<double> fuse_encoder_input(std::span<const double> spk, std::span<const double> txt,
                                       std::size_t pos, const Tensor& weight, const Tensor& bias,
                                       const RunMode& mode, Ablation ablation = Ablation::none);

// Single decoder input: 768-d label embedding -> model dim.
std::vector<double> project_decoder_input(std::span<const double> label_emb, std::size_t pos,
                                          const Tensor& weight, const Tensor& bias,
                                          const RunMode& mode);

}  // namespace scd
