#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "scd/inference.hpp"
#include "scd/model.hpp"

namespace scd {

enum class DecodeMode { greedy, beam };
enum class ScoreMode { teacher_forced, autoregressive };

const char* decode_mode_name(DecodeMode m);
DecodeMode parse_decode_mode(const std::string& text);
const char* score_mode_name(ScoreMode m);
ScoreMode parse_score_mode(const std::string& text);

struct DecodeConfig {
  DecodeMode mode = DecodeMode::greedy;
  std::size_t width = 100;
  ScoreMode scores = ScoreMode::teacher_forced;
};

struct Hypothesis {
  std::vector<Label> labels;
  double score = 0.0;  // sum of log p(label_t | prefix, encoder)
};

// Exactly `length` labels; eos is masked and ties go to `same`.
std::vector<Label> greedy_decode(const Model& model, const Tensor& enc_hidden, std::size_t length);

// Beam search over {same, change}. Every hypothesis survives while the
// hypothesis count fits the width; afterwards the best `width` are kept, ties
// broken lexicographically with same < change.
std::vector<Label> beam_decode(const Model& model, const Tensor& enc_hidden, std::size_t length,
                               std::size_t width);
// The surviving hypotheses after the last step, best first.
std::vector<Hypothesis> beam_search(const Model& model, const Tensor& enc_hidden, std::size_t length,
                                    std::size_t width);

std::vector<Label> decode(const Model& model, const Tensor& enc_hidden, std::size_t length,
                          const DecodeConfig& config);

// Per-token p(change) with eos masked. Teacher-forced mode conditions on
// `labels` (required); autoregressive mode on the greedy prefix.
std::vector<double> change_scores(const Model& model, const Tensor& enc_hidden,
                                  std::span<const Label> labels, std::size_t length, ScoreMode mode);

}  // namespace scd
