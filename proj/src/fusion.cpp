#include "scd/fusion.hpp"

#include <cmath>
#include <map>

#include "scd/corpus.hpp"
#include "scd/error.hpp"

namespace scd {

const char* ablation_name(Ablation a) {
  switch (a) {
    case Ablation::no_audio: return "no_audio";
    case Ablation::no_text: return "no_text";
    case Ablation::none: break;
  }
  return "none";
}

Ablation parse_ablation(const std::string& text) {
  if (text == "none") return Ablation::none;
  if (text == "no_audio") return Ablation::no_audio;
  if (text == "no_text") return Ablation::no_text;
  fail("invalid_argument", "unknown ablation '" + text + "' (expected none|no_audio|no_text)");
}

std::vector<double> magnitude_normalize(std::span<const double> v) {
  require(!v.empty(), "invalid_argument", "cannot normalize an empty vector");
  double sq = 0.0;
  for (double x : v) sq += x * x;
  const double norm = std::sqrt(sq);
  require(norm > 0.0 && std::isfinite(norm), "invalid_argument",
          "cannot normalize a zero or non-finite vector");
  const double s = std::sqrt(static_cast<double>(v.size())) / norm;
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x *= s;
  return out;
}

std::vector<double> positional_encoding(std::size_t pos, std::size_t dim) {
  require(dim > 0 && dim % 2 == 0, "invalid_argument", "positional encoding needs an even dimension");
  std::vector<double> pe(dim);
  for (std::size_t i = 0; i < dim; i += 2) {
    const double angle =
        static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(dim));
    pe[i] = std::sin(angle);
    pe[i + 1] = std::cos(angle);
  }
  return pe;
}

Tensor positional_table(std::size_t count, std::size_t dim, std::size_t first_pos) {
  // Per-thread cache of the table rows computed so far for each width.
  thread_local std::map<std::size_t, std::vector<std::vector<double>>> cache;
  auto& rows = cache[dim];
  while (rows.size() < first_pos + count) rows.push_back(positional_encoding(rows.size(), dim));
  Tensor table = Tensor::matrix(count, dim);
  for (std::size_t r = 0; r < count; ++r) {
    const auto& pe = rows[first_pos + r];
    std::copy(pe.begin(), pe.end(), table.row(r).begin());
  }
  return table;
}

Tensor fused_input_matrix(const AlignedSequence& seq, Ablation ablation) {
  const std::size_t n = seq.length();
  require(n > 0, "invalid_argument", "empty aligned sequence");
  require(seq.speaker.cols() == kSpeakerDim && seq.text.cols() == kTextDim, "shape_mismatch",
          "aligned sequence must carry 256-d speaker and 768-d text embeddings");
  Tensor x = Tensor::matrix(n, kSpeakerDim + kTextDim);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = x.row(i);
    if (ablation != Ablation::no_audio) {
      const auto spk = magnitude_normalize(seq.speaker.row(i));
      std::copy(spk.begin(), spk.end(), row.begin());
    }
    if (ablation != Ablation::no_text) {
      const auto txt = magnitude_normalize(seq.text.row(i));
      std::copy(txt.begin(), txt.end(), row.begin() + kSpeakerDim);
    }
  }
  return x;
}

ad::Var project_with_position(ad::Var x, ad::Var weight, ad::Var bias, const RunMode& mode,
                              std::size_t first_pos) {
  ad::Var h = ad::add_bias(ad::matmul(x, weight), bias);
  if (mode.dropout_active()) h = ad::dropout(h, mode.dropout, *mode.rng);
  h = ad::gelu(h);
  const Tensor& hv = h.value();
  return ad::add_constant(h, positional_table(hv.rows(), hv.cols(), first_pos));
}

namespace {

std::vector<double> project_row(std::span<const double> input, std::size_t pos, const Tensor& weight,
                                const Tensor& bias, const RunMode& mode) {
  require(weight.rank() == 2 && weight.rows() == input.size(), "shape_mismatch",
          "projection expects input width " + std::to_string(weight.rows()) + ", got " +
              std::to_string(input.size()));
  ad::Tape tape;
  ParamSet ps;
  const ParamId w = ps.add("w", weight);
  const ParamId b = ps.add("b", bias);
  const ad::Var x = tape.constant(Tensor({1, input.size()}, std::vector<double>(input.begin(), input.end())));
  const ad::Var out = project_with_position(x, tape.parameter(ps, w), tape.parameter(ps, b), mode, pos);
  return out.value().storage();
}

}  // namespace

std::vector<double> fuse_encoder_input(std::span<const double> spk, std::span<const double> txt,
                                       std::size_t pos, const Tensor& weight, const Tensor& bias,
                                       const RunMode& mode, Ablation ablation) {
  require(spk.size() == kSpeakerDim, "shape_mismatch", "speaker embedding must be 256-d");
  require(txt.size() == kTextDim, "shape_mismatch", "text embedding must be 768-d");
  std::vector<double> fused(kSpeakerDim + kTextDim, 0.0);
  if (ablation != Ablation::no_audio) {
    const auto s = magnitude_normalize(spk);
    std::copy(s.begin(), s.end(), fused.begin());
  }
  if (ablation != Ablation::no_text) {
    const auto t = magnitude_normalize(txt);
    std::copy(t.begin(), t.end(), fused.begin() + kSpeakerDim);
  }
  return project_row(fused, pos, weight, bias, mode);
}

std::vector<double> project_decoder_input(std::span<const double> label_emb, std::size_t pos,
                                          const Tensor& weight, const Tensor& bias,
                                          const RunMode& mode) {
  require(label_emb.size() == kTextDim, "shape_mismatch", "label embedding must be 768-d");
  return project_row(magnitude_normalize(label_emb), pos, weight, bias, mode);
}

}  // namespace scd
