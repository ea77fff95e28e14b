#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "scd/alignment.hpp"
#include "scd/attention.hpp"
#include "scd/autodiff.hpp"
#include "scd/corpus.hpp"
#include "scd/fusion.hpp"
#include "scd/params.hpp"

namespace scd {

// Output classes of the decoder head.
enum class OutputClass : std::size_t { same = 0, change = 1, eos = 2 };
// Rows of the label-embedding table fed to the decoder.
enum class DecoderSymbol : std::size_t { bos = 0, same = 1, change = 2 };

inline constexpr std::size_t kNumClasses = 3;

struct ModelConfig {
  std::size_t model_dim = 512;
  std::size_t heads = 8;
  std::size_t enc_layers = 3;
  std::size_t dec_layers = 1;
  std::size_t ff_dim = 2048;
  double dropout = 0.1;
  std::size_t num_classes = kNumClasses;
  std::size_t label_emb_dim = kTextDim;
  std::uint64_t seed = 1;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct AttentionIds {
  ParamId wq, bq, wk, bk, wv, bv, wo, bo;
};

struct FeedForwardIds {
  ParamId w1, b1, w2, b2;
};

struct EncoderLayerIds {
  ParamId ln1_gain, ln1_bias;
  AttentionIds self_attn;
  ParamId ln2_gain, ln2_bias;
  FeedForwardIds ff;
};

struct DecoderLayerIds {
  ParamId ln1_gain, ln1_bias;
  AttentionIds self_attn;
  ParamId ln2_gain, ln2_bias;
  AttentionIds cross_attn;
  ParamId ln3_gain, ln3_bias;
  FeedForwardIds ff;
};

// Parameters plus the ids that locate each array in `params`.
struct Model {
  ModelConfig config;
  ParamSet params;

  ParamId enc_proj_w, enc_proj_b;  // fusion: 1024 -> model_dim
  ParamId dec_proj_w, dec_proj_b;  // fusion: 768 -> model_dim
  std::vector<EncoderLayerIds> encoder;
  ParamId enc_norm_gain, enc_norm_bias;
  ParamId label_table;  // [3, 768]: bos, same, change
  std::vector<DecoderLayerIds> decoder;
  ParamId dec_norm_gain, dec_norm_bias;
  ParamId head_w, head_b;  // model_dim -> 3
};

// Scaled-uniform weights with bound sqrt(6 / (fan_in + fan_out)), zero biases,
// unit layer-norm gains. Deterministic in (config, config.seed).
Model init_model(const ModelConfig& config);

// Decoder input ids for a label prefix: [bos, y1, ..., yt].
std::vector<std::size_t> decoder_input_ids(std::span<const Label> prefix);
// The matching rows of the label-embedding table, [t + 1, 768].
Tensor decoder_inputs(const Model& model, std::span<const Label> prefix);
// Training targets: [y1, ..., yL, eos].
std::vector<std::size_t> training_targets(std::span<const Label> labels);

// Encoder stack over the fused inputs. Returns [L, model_dim].
ad::Var encode(ad::Tape& tape, const Model& model, const Tensor& fused_inputs, const RunMode& mode);
ad::Var encode(ad::Tape& tape, const Model& model, const AlignedSequence& seq, Ablation ablation,
               const RunMode& mode);

// Decoder over the given input ids (bos first) attending to `enc_hidden`.
// Returns logits [ids.size(), 3]; row j depends on ids[0..j] only.
ad::Var decode_logits(ad::Tape& tape, const Model& model, std::span<const std::size_t> input_ids,
                      ad::Var enc_hidden, const RunMode& mode);

// Decoder inputs [bos, y1..yL] from `labels`; logits [L + 1, 3] aligned with
// training_targets(labels).
ad::Var forward_teacher_forced(ad::Tape& tape, const Model& model, const AlignedSequence& seq,
                               std::span<const Label> labels, Ablation ablation, const RunMode& mode);

// Same as above but with an explicit decoder prefix (the autoregressive
// training feeds the model's own predictions here).
ad::Var forward_with_prefix(ad::Tape& tape, const Model& model, const Tensor& fused_inputs,
                            std::span<const Label> decoder_prefix, const RunMode& mode);

std::vector<Label> labels_of(const Conversation& conv);

}  // namespace scd
