#include "scd/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "scd/error.hpp"

namespace scd {

Tensor encode_eval(const Model& model, const Tensor& fused_inputs) {
  ad::Tape tape(false);
  return encode(tape, model, fused_inputs, RunMode::eval()).value();
}

namespace {

std::vector<double> linear(std::span<const double> x, const Tensor& w, const Tensor& b) {
  const std::size_t m = w.cols();
  std::vector<double> out(b.values().begin(), b.values().end());
  for (std::size_t p = 0; p < x.size(); ++p) {
    const double xv = x[p];
    if (xv == 0.0) continue;
    const double* wr = w.data() + p * m;
    for (std::size_t j = 0; j < m; ++j) out[j] += xv * wr[j];
  }
  return out;
}

std::vector<double> layer_norm_row(std::span<const double> x, const Tensor& gain, const Tensor& bias) {
  const std::size_t m = x.size();
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(m);
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(m);
  const double inv = 1.0 / std::sqrt(var + 1e-5);
  std::vector<double> out(m);
  for (std::size_t j = 0; j < m; ++j) out[j] = (x[j] - mean) * inv * gain[j] + bias[j];
  return out;
}

// Attention of one query row over `rows` cached key/value rows.
std::vector<double> attend(std::span<const double> q, const double* keys, const double* values,
                           std::size_t rows, std::size_t dim, std::size_t heads) {
  const std::size_t hd = dim / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<double> out(dim, 0.0);
  std::vector<double> scores(rows);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * hd;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      const double* kr = keys + r * dim + off;
      for (std::size_t j = 0; j < hd; ++j) s += q[off + j] * kr[j];
      scores[r] = s * scale;
      mx = std::max(mx, scores[r]);
    }
    double z = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      scores[r] = std::exp(scores[r] - mx);
      z += scores[r];
    }
    for (std::size_t r = 0; r < rows; ++r) {
      const double p = scores[r] / z;
      const double* vr = values + r * dim + off;
      for (std::size_t j = 0; j < hd; ++j) out[off + j] += p * vr[j];
    }
  }
  return out;
}

void add_into(std::vector<double>& x, const std::vector<double>& y) {
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += y[i];
}

}  // namespace

DecoderSession::DecoderSession(const Model& model, const Tensor& enc_hidden)
    : model_(model), dim_(model.config.model_dim), enc_length_(enc_hidden.rows()) {
  require(enc_hidden.rank() == 2 && enc_hidden.rows() > 0 && enc_hidden.cols() == dim_,
          "shape_mismatch", "encoder output does not match the model dimension");
  const ParamSet& ps = model.params;
  const Tensor& table = ps[model.label_table];
  symbol_rows_ = Tensor::matrix(table.rows(), dim_);
  for (std::size_t r = 0; r < table.rows(); ++r) {
    const auto normalized = magnitude_normalize(table.row(r));
    auto projected = linear(normalized, ps[model.dec_proj_w], ps[model.dec_proj_b]);
    for (double& v : projected) v = ops::gelu(v);
    std::copy(projected.begin(), projected.end(), symbol_rows_.row(r).begin());
  }
  for (const auto& layer : model.decoder) {
    Tensor k = ops::matmul(enc_hidden, ps[layer.cross_attn.wk]);
    ops::add_row_inplace(k, ps[layer.cross_attn.bk]);
    Tensor v = ops::matmul(enc_hidden, ps[layer.cross_attn.wv]);
    ops::add_row_inplace(v, ps[layer.cross_attn.bv]);
    cross_keys_.push_back(std::move(k));
    cross_values_.push_back(std::move(v));
  }
}

DecoderSession::State DecoderSession::initial_state() const {
  State s;
  s.keys.resize(model_.decoder.size());
  s.values.resize(model_.decoder.size());
  return s;
}

ClassLogits DecoderSession::step(State& state, DecoderSymbol symbol) const {
  const ParamSet& ps = model_.params;
  const std::size_t heads = model_.config.heads;
  const auto sym = static_cast<std::size_t>(symbol);
  require(sym < symbol_rows_.rows(), "invalid_argument", "unknown decoder symbol");

  std::vector<double> x(symbol_rows_.row(sym).begin(), symbol_rows_.row(sym).end());
  const auto pe = positional_encoding(state.length, dim_);
  add_into(x, pe);

  for (std::size_t l = 0; l < model_.decoder.size(); ++l) {
    const DecoderLayerIds& layer = model_.decoder[l];
    const AttentionIds& sa = layer.self_attn;
    const auto h1 = layer_norm_row(x, ps[layer.ln1_gain], ps[layer.ln1_bias]);
    const auto q = linear(h1, ps[sa.wq], ps[sa.bq]);
    const auto k = linear(h1, ps[sa.wk], ps[sa.bk]);
    const auto v = linear(h1, ps[sa.wv], ps[sa.bv]);
    state.keys[l].insert(state.keys[l].end(), k.begin(), k.end());
    state.values[l].insert(state.values[l].end(), v.begin(), v.end());
    const auto ctx = attend(q, state.keys[l].data(), state.values[l].data(), state.length + 1, dim_, heads);
    add_into(x, linear(ctx, ps[sa.wo], ps[sa.bo]));

    const AttentionIds& ca = layer.cross_attn;
    const auto h2 = layer_norm_row(x, ps[layer.ln2_gain], ps[layer.ln2_bias]);
    const auto cq = linear(h2, ps[ca.wq], ps[ca.bq]);
    const auto cctx = attend(cq, cross_keys_[l].data(), cross_values_[l].data(), enc_length_, dim_, heads);
    add_into(x, linear(cctx, ps[ca.wo], ps[ca.bo]));

    const auto h3 = layer_norm_row(x, ps[layer.ln3_gain], ps[layer.ln3_bias]);
    auto f = linear(h3, ps[layer.ff.w1], ps[layer.ff.b1]);
    for (double& val : f) val = ops::gelu(val);
    add_into(x, linear(f, ps[layer.ff.w2], ps[layer.ff.b2]));
  }
  ++state.length;
  const auto out = layer_norm_row(x, ps[model_.dec_norm_gain], ps[model_.dec_norm_bias]);
  const auto logits = linear(out, ps[model_.head_w], ps[model_.head_b]);
  return {logits[0], logits[1], logits[2]};
}

std::array<double, 2> binary_log_probs(const ClassLogits& logits) {
  const double a = logits[static_cast<std::size_t>(OutputClass::same)];
  const double b = logits[static_cast<std::size_t>(OutputClass::change)];
  const double mx = std::max(a, b);
  const double lse = mx + std::log(std::exp(a - mx) + std::exp(b - mx));
  return {a - lse, b - lse};
}

double change_probability(const ClassLogits& logits) {
  const double a = logits[static_cast<std::size_t>(OutputClass::same)];
  const double b = logits[static_cast<std::size_t>(OutputClass::change)];
  // logistic of the logit difference
  return 1.0 / (1.0 + std::exp(a - b));
}

}  // namespace scd
