#include "scd/model.hpp"

#include <cmath>
#include <random>
#include <string>

#include "scd/error.hpp"

namespace scd {

void ModelConfig::validate() const {
  require(model_dim > 0 && heads > 0 && enc_layers > 0 && dec_layers > 0 && ff_dim > 0,
          "invalid_config", "model dimensions and layer counts must be positive");
  require(model_dim % heads == 0, "invalid_config",
          "model_dim " + std::to_string(model_dim) + " is not divisible by heads " +
              std::to_string(heads));
  require(model_dim % 2 == 0, "invalid_config", "model_dim must be even (positional encoding)");
  require(dropout >= 0.0 && dropout < 1.0, "invalid_config", "dropout must lie in [0, 1)");
  require(num_classes == kNumClasses, "invalid_config", "num_classes must be 3 (same, change, eos)");
  require(label_emb_dim == kTextDim, "invalid_config", "label_emb_dim must be 768");
}

namespace {

class Initializer {
 public:
  Initializer(Model& model, std::uint64_t seed) : model_(model), rng_(seed) {}

  ParamId weight(const std::string& name, std::size_t fan_in, std::size_t fan_out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor w = Tensor::matrix(fan_in, fan_out);
    for (double& v : w.values()) v = dist(rng_);
    return model_.params.add(name, std::move(w));
  }
  ParamId bias(const std::string& name, std::size_t n) {
    return model_.params.add(name, Tensor({n}, 0.0));
  }
  ParamId gain(const std::string& name, std::size_t n) {
    return model_.params.add(name, Tensor({n}, 1.0));
  }

  AttentionIds attention(const std::string& prefix, std::size_t d) {
    AttentionIds a;
    a.wq = weight(prefix + ".wq", d, d);
    a.bq = bias(prefix + ".bq", d);
    a.wk = weight(prefix + ".wk", d, d);
    a.bk = bias(prefix + ".bk", d);
    a.wv = weight(prefix + ".wv", d, d);
    a.bv = bias(prefix + ".bv", d);
    a.wo = weight(prefix + ".wo", d, d);
    a.bo = bias(prefix + ".bo", d);
    return a;
  }
  FeedForwardIds feed_forward(const std::string& prefix, std::size_t d, std::size_t ff) {
    FeedForwardIds f;
    f.w1 = weight(prefix + ".w1", d, ff);
    f.b1 = bias(prefix + ".b1", ff);
    f.w2 = weight(prefix + ".w2", ff, d);
    f.b2 = bias(prefix + ".b2", d);
    return f;
  }

 private:
  Model& model_;
  std::mt19937_64 rng_;
};

AttentionVars bind(ad::Tape& tape, const ParamSet& ps, const AttentionIds& a) {
  return {tape.parameter(ps, a.wq), tape.parameter(ps, a.bq), tape.parameter(ps, a.wk),
          tape.parameter(ps, a.bk), tape.parameter(ps, a.wv), tape.parameter(ps, a.bv),
          tape.parameter(ps, a.wo), tape.parameter(ps, a.bo)};
}

ad::Var norm(ad::Tape& tape, const ParamSet& ps, ad::Var x, ParamId gain, ParamId bias) {
  return ad::layer_norm(x, tape.parameter(ps, gain), tape.parameter(ps, bias), 1e-5);
}

ad::Var maybe_dropout(ad::Var x, const RunMode& mode) {
  return mode.dropout_active() ? ad::dropout(x, mode.dropout, *mode.rng) : x;
}

ad::Var feed_forward(ad::Tape& tape, const ParamSet& ps, const FeedForwardIds& f, ad::Var x) {
  const ad::Var h = ad::gelu(ad::add_bias(ad::matmul(x, tape.parameter(ps, f.w1)), tape.parameter(ps, f.b1)));
  return ad::add_bias(ad::matmul(h, tape.parameter(ps, f.w2)), tape.parameter(ps, f.b2));
}

}  // namespace

Model init_model(const ModelConfig& config) {
  config.validate();
  Model m;
  m.config = config;
  const std::size_t d = config.model_dim;
  Initializer init(m, config.seed);

  m.enc_proj_w = init.weight("fusion.enc_proj.weight", kSpeakerDim + kTextDim, d);
  m.enc_proj_b = init.bias("fusion.enc_proj.bias", d);
  m.dec_proj_w = init.weight("fusion.dec_proj.weight", config.label_emb_dim, d);
  m.dec_proj_b = init.bias("fusion.dec_proj.bias", d);

  for (std::size_t l = 0; l < config.enc_layers; ++l) {
    const std::string p = "encoder." + std::to_string(l);
    EncoderLayerIds layer;
    layer.ln1_gain = init.gain(p + ".ln1.gain", d);
    layer.ln1_bias = init.bias(p + ".ln1.bias", d);
    layer.self_attn = init.attention(p + ".self_attn", d);
    layer.ln2_gain = init.gain(p + ".ln2.gain", d);
    layer.ln2_bias = init.bias(p + ".ln2.bias", d);
    layer.ff = init.feed_forward(p + ".ff", d, config.ff_dim);
    m.encoder.push_back(layer);
  }
  m.enc_norm_gain = init.gain("encoder.norm.gain", d);
  m.enc_norm_bias = init.bias("encoder.norm.bias", d);

  m.label_table = init.weight("decoder.label_table", kNumClasses, config.label_emb_dim);
  for (std::size_t l = 0; l < config.dec_layers; ++l) {
    const std::string p = "decoder." + std::to_string(l);
    DecoderLayerIds layer;
    layer.ln1_gain = init.gain(p + ".ln1.gain", d);
    layer.ln1_bias = init.bias(p + ".ln1.bias", d);
    layer.self_attn = init.attention(p + ".self_attn", d);
    layer.ln2_gain = init.gain(p + ".ln2.gain", d);
    layer.ln2_bias = init.bias(p + ".ln2.bias", d);
    layer.cross_attn = init.attention(p + ".cross_attn", d);
    layer.ln3_gain = init.gain(p + ".ln3.gain", d);
    layer.ln3_bias = init.bias(p + ".ln3.bias", d);
    layer.ff = init.feed_forward(p + ".ff", d, config.ff_dim);
    m.decoder.push_back(layer);
  }
  m.dec_norm_gain = init.gain("decoder.norm.gain", d);
  m.dec_norm_bias = init.bias("decoder.norm.bias", d);
  m.head_w = init.weight("head.weight", d, kNumClasses);
  m.head_b = init.bias("head.bias", kNumClasses);
  return m;
}

std::vector<std::size_t> decoder_input_ids(std::span<const Label> prefix) {
  std::vector<std::size_t> ids;
  ids.reserve(prefix.size() + 1);
  ids.push_back(static_cast<std::size_t>(DecoderSymbol::bos));
  for (Label l : prefix) {
    switch (l) {
      case Label::same: ids.push_back(static_cast<std::size_t>(DecoderSymbol::same)); break;
      case Label::change: ids.push_back(static_cast<std::size_t>(DecoderSymbol::change)); break;
      default: fail("invalid_label", "unknown label in decoder prefix");
    }
  }
  return ids;
}

Tensor decoder_inputs(const Model& model, std::span<const Label> prefix) {
  const auto ids = decoder_input_ids(prefix);
  const Tensor& table = model.params[model.label_table];
  Tensor out = Tensor::matrix(ids.size(), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto src = table.row(ids[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

std::vector<std::size_t> training_targets(std::span<const Label> labels) {
  std::vector<std::size_t> t;
  t.reserve(labels.size() + 1);
  for (Label l : labels)
    t.push_back(static_cast<std::size_t>(l == Label::change ? OutputClass::change : OutputClass::same));
  t.push_back(static_cast<std::size_t>(OutputClass::eos));
  return t;
}

ad::Var encode(ad::Tape& tape, const Model& model, const Tensor& fused_inputs, const RunMode& mode) {
  require(fused_inputs.rank() == 2 && fused_inputs.rows() > 0, "invalid_argument",
          "encoder needs a non-empty sequence");
  require(fused_inputs.cols() == kSpeakerDim + kTextDim, "shape_mismatch",
          "encoder input must be 1024 wide");
  const ParamSet& ps = model.params;
  ad::Var x = project_with_position(tape.constant(fused_inputs), tape.parameter(ps, model.enc_proj_w),
                                    tape.parameter(ps, model.enc_proj_b), mode);
  for (const auto& layer : model.encoder) {
    const ad::Var h = norm(tape, ps, x, layer.ln1_gain, layer.ln1_bias);
    const ad::Var a = multi_head_attention(h, h, bind(tape, ps, layer.self_attn), model.config.heads, false);
    x = ad::add(x, maybe_dropout(a, mode));
    const ad::Var f = feed_forward(tape, ps, layer.ff, norm(tape, ps, x, layer.ln2_gain, layer.ln2_bias));
    x = ad::add(x, maybe_dropout(f, mode));
  }
  return norm(tape, ps, x, model.enc_norm_gain, model.enc_norm_bias);
}

ad::Var encode(ad::Tape& tape, const Model& model, const AlignedSequence& seq, Ablation ablation,
               const RunMode& mode) {
  return encode(tape, model, fused_input_matrix(seq, ablation), mode);
}

ad::Var decode_logits(ad::Tape& tape, const Model& model, std::span<const std::size_t> input_ids,
                      ad::Var enc_hidden, const RunMode& mode) {
  require(!input_ids.empty(), "invalid_argument", "decoder needs at least the bos input");
  require(enc_hidden.value().rows() > 0, "invalid_argument", "encoder output is empty");
  require(enc_hidden.value().cols() == model.config.model_dim, "shape_mismatch",
          "encoder output width does not match model_dim");
  const ParamSet& ps = model.params;
  // Only three distinct inputs exist, so the table rows are normalized and
  // projected once and then gathered per position.
  const ad::Var table = ad::normalize_rows(tape.parameter(ps, model.label_table),
                                           std::sqrt(static_cast<double>(model.config.label_emb_dim)));
  const ad::Var projected =
      ad::add_bias(ad::matmul(table, tape.parameter(ps, model.dec_proj_w)), tape.parameter(ps, model.dec_proj_b));
  ad::Var x = ad::gather_rows(projected, input_ids);
  if (mode.dropout_active()) x = ad::dropout(x, mode.dropout, *mode.rng);
  x = ad::gelu(x);
  x = ad::add_constant(x, positional_table(input_ids.size(), model.config.model_dim));

  for (const auto& layer : model.decoder) {
    const ad::Var h1 = norm(tape, ps, x, layer.ln1_gain, layer.ln1_bias);
    x = ad::add(x, maybe_dropout(multi_head_attention(h1, h1, bind(tape, ps, layer.self_attn),
                                                      model.config.heads, true),
                                 mode));
    const ad::Var h2 = norm(tape, ps, x, layer.ln2_gain, layer.ln2_bias);
    x = ad::add(x, maybe_dropout(multi_head_attention(h2, enc_hidden, bind(tape, ps, layer.cross_attn),
                                                      model.config.heads, false),
                                 mode));
    const ad::Var f = feed_forward(tape, ps, layer.ff, norm(tape, ps, x, layer.ln3_gain, layer.ln3_bias));
    x = ad::add(x, maybe_dropout(f, mode));
  }
  x = norm(tape, ps, x, model.dec_norm_gain, model.dec_norm_bias);
  return ad::add_bias(ad::matmul(x, tape.parameter(ps, model.head_w)), tape.parameter(ps, model.head_b));
}

ad::Var forward_with_prefix(ad::Tape& tape, const Model& model, const Tensor& fused_inputs,
                            std::span<const Label> decoder_prefix, const RunMode& mode) {
  require(decoder_prefix.size() == fused_inputs.rows(), "shape_mismatch",
          "decoder prefix has " + std::to_string(decoder_prefix.size()) + " labels for " +
              std::to_string(fused_inputs.rows()) + " tokens");
  const ad::Var enc = encode(tape, model, fused_inputs, mode);
  const auto ids = decoder_input_ids(decoder_prefix);
  return decode_logits(tape, model, ids, enc, mode);
}

ad::Var forward_teacher_forced(ad::Tape& tape, const Model& model, const AlignedSequence& seq,
                               std::span<const Label> labels, Ablation ablation, const RunMode& mode) {
  return forward_with_prefix(tape, model, fused_input_matrix(seq, ablation), labels, mode);
}

std::vector<Label> labels_of(const Conversation& conv) {
  std::vector<Label> out;
  out.reserve(conv.tokens.size());
  for (const auto& t : conv.tokens) out.push_back(t.label);
  return out;
}

}  // namespace scd
