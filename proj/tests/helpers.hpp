#pragma once

#include <cmath>
#include <algorithm>
#include <functional>
#include <limits>
#include <span>
#include <utility>
#include <random>
#include <vector>

#include "scd/autodiff.hpp"
#include "scd/corpus.hpp"
#include "scd/model.hpp"
#include "scd/tensor.hpp"

namespace scd::testing {

inline Tensor random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.values()) v = n(rng);
  return t;
}

// Builds a scalar loss from input leaves on a fresh tape.
using Builder = std::function<ad::Var(ad::Tape&, std::vector<ad::Var>&)>;

// Largest per-input relative error (2-norm) between reverse-mode gradients
// and central differences.
inline double max_fd_error(const Builder& build, std::vector<Tensor> inputs, double step = 1e-6) {
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.input(t));
  const ad::Var loss = build(tape, leaves);
  tape.backward(loss);
  std::vector<Tensor> analytic;
  for (std::size_t a = 0; a < leaves.size(); ++a) {
    const Tensor& g = tape.grad(leaves[a]);
    analytic.push_back(g.empty() ? Tensor(inputs[a].shape(), 0.0) : g);  // unused leaf
  }

  auto eval = [&](const std::vector<Tensor>& xs) {
    ad::Tape t;
    std::vector<ad::Var> ls;
    for (const auto& x : xs) ls.push_back(t.input(x));
    return build(t, ls).value()[0];
  };
  double worst = 0.0;
  for (std::size_t a = 0; a < inputs.size(); ++a) {
    double diff2 = 0.0, an2 = 0.0, num2 = 0.0;
    for (std::size_t i = 0; i < inputs[a].size(); ++i) {
      const double saved = inputs[a][i];
      inputs[a][i] = saved + step;
      const double up = eval(inputs);
      inputs[a][i] = saved - step;
      const double down = eval(inputs);
      inputs[a][i] = saved;
      const double num = (up - down) / (2 * step);
      const double an = analytic[a][i];
      diff2 += (an - num) * (an - num);
      an2 += an * an;
      num2 += num * num;
    }
    const double scale = std::sqrt(std::max(an2, num2));
    // Gradients that vanish identically (e.g. a key bias under softmax) are
    // compared absolutely.
    worst = std::max(worst, scale > 1e-7 ? std::sqrt(diff2) / scale : std::sqrt(diff2));
  }
  return worst;
}

// Weighted sum with fixed pseudo-random weights: a scalar loss whose gradient
// exercises every output element differently.
inline ad::Var probe_loss(ad::Tape& tape, ad::Var out, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  const Tensor& v = out.value();
  Tensor w = random_matrix(v.rows(), v.cols(), rng);
  if (v.rank() == 1) w = Tensor(v.shape(), w.storage());
  return ad::sum(ad::mul(out, tape.constant(w)));
}

// Equal error rate from first principles: every distinct score (and +inf) as
// a threshold, O(n^2) counting, linear interpolation where the false-alarm
// and miss curves cross.
inline double brute_eer(std::span<const double> scores, std::span<const Label> labels) {
  std::vector<double> thresholds(scores.begin(), scores.end());
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  thresholds.push_back(std::numeric_limits<double>::infinity());
  double pos = 0, neg = 0;
  for (Label l : labels) (l == Label::change ? pos : neg) += 1;
  double prev_fa = 1.0, prev_miss = 0.0;
  for (double t : thresholds) {
    double fa = 0, miss = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (labels[i] == Label::change && scores[i] < t) miss += 1;
      if (labels[i] == Label::same && scores[i] >= t) fa += 1;
    }
    fa /= neg;
    miss /= pos;
    if (fa <= miss) {
      if (fa == miss) return fa;
      const double d0 = prev_fa - prev_miss, d1 = fa - miss;
      return prev_fa + d0 / (d0 - d1) * (fa - prev_fa);
    }
    prev_fa = fa;
    prev_miss = miss;
  }
  return prev_fa;
}

// log p(labels) from one full teacher-forced decoder pass, eos masked.
inline double sequence_log_prob(const Model& model, const ad::Var& enc, ad::Tape& tape,
                                std::span<const Label> labels) {
  const auto ids = decoder_input_ids(labels.first(labels.size() - 1));
  const Tensor logits = decode_logits(tape, model, ids, enc, RunMode::eval()).value();
  double total = 0.0;
  for (std::size_t t = 0; t < labels.size(); ++t) {
    const double a = logits(t, 0), b = logits(t, 1);
    const double m = std::max(a, b);
    const double lse = m + std::log(std::exp(a - m) + std::exp(b - m));
    total += (labels[t] == Label::same ? a : b) - lse;
  }
  return total;
}

// Best label sequence over all 2^length candidates; ties keep the
// lexicographically smaller sequence (same < change).
inline std::pair<std::vector<Label>, double> exhaustive_decode(const Model& model, const Tensor& fused,
                                                               std::size_t length) {
  ad::Tape tape;
  const ad::Var enc = encode(tape, model, fused, RunMode::eval());
  std::vector<Label> best;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t code = 0; code < (std::size_t{1} << length); ++code) {
    std::vector<Label> y(length);
    for (std::size_t t = 0; t < length; ++t)
      y[t] = (code >> (length - 1 - t)) & 1 ? Label::change : Label::same;
    const double s = sequence_log_prob(model, enc, tape, y);
    if (s > best_score) {
      best_score = s;
      best = y;
    }
  }
  return {best, best_score};
}

}  // namespace scd::testing
