#include "scd/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "scd/error.hpp"

namespace scd {

ParamId ParamSet::add(std::string name, Tensor value) {
  require(!find(name).has_value(), "invalid_argument", "duplicate parameter name " + name);
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return ParamId{values_.size() - 1};
}

std::optional<ParamId> ParamSet::find(const std::string& name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) return std::nullopt;
  return ParamId{static_cast<std::size_t>(it - names_.begin())};
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : values_) n += t.size();
  return n;
}

std::vector<Tensor> ParamSet::zeros_like() const {
  std::vector<Tensor> out;
  out.reserve(values_.size());
  for (const auto& t : values_) out.emplace_back(t.shape(), 0.0);
  return out;
}

namespace ad {

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Tape::input(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = record_gradients_;
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Tape::parameter(const ParamSet& params, ParamId id) {
  if (auto it = param_nodes_.find(id.index); it != param_nodes_.end()) {
    return Var{this, it->second};
  }
  Node n;
  n.external = &params[id];
  n.requires_grad = record_gradients_;
  nodes_.push_back(std::move(n));
  param_nodes_.emplace(id.index, nodes_.size() - 1);
  return Var{this, nodes_.size() - 1};
}

const Tensor& Tape::value(Var v) const { return node_value(nodes_[v.id]); }

const Tensor& Tape::grad(Var v) const { return nodes_[v.id].grad; }

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(node_value(n).shape(), 0.0);
  return n.grad;
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (const Var& in : inputs) {
    require(in.tape == this, "invalid_argument", "op mixes values from different tapes");
    n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

void Tape::backward(Var loss) {
  require(loss.tape == this, "invalid_argument", "loss belongs to another tape");
  require(value(loss).size() == 1, "not_scalar",
          "backward needs a scalar loss, got shape " + shape_string(value(loss).shape()));
  require(!backward_done_, "invalid_argument", "backward already ran on this tape");
  backward_done_ = true;
  grad_buffer(loss.id).fill(1.0);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    n.backward(*this, n.grad);
  }
}

Gradients Tape::parameter_gradients(const ParamSet& params) const {
  Gradients out = params.zeros_like();
  for (const auto& [param, node] : param_nodes_) {
    if (!nodes_[node].grad.empty()) out[param] = nodes_[node].grad;
  }
  return out;
}

namespace {

void accumulate(Tape& tape, Var v, const Tensor& g) {
  if (!tape.requires_grad(v)) return;
  ops::add_inplace(tape.grad_buffer(v.id), g);
}

void check_matrix(const Tensor& t, const char* op) {
  require(t.rank() == 2, "shape_mismatch",
          std::string(op) + " expects a matrix, got " + shape_string(t.shape()));
}

}  // namespace

Var matmul(Var a, Var b) {
  Tensor out = ops::matmul(a.value(), b.value());
  const Var in[] = {a, b};
  return a.tape->record(std::move(out), in, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) ops::add_inplace(t.grad_buffer(a.id), ops::matmul_nt(g, t.value(b)));
    if (t.requires_grad(b)) ops::add_inplace(t.grad_buffer(b.id), ops::matmul_tn(t.value(a), g));
  });
}

Var matmul_nt(Var a, Var b) {
  Tensor out = ops::matmul_nt(a.value(), b.value());
  const Var in[] = {a, b};
  return a.tape->record(std::move(out), in, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) ops::add_inplace(t.grad_buffer(a.id), ops::matmul(g, t.value(b)));
    if (t.requires_grad(b)) ops::add_inplace(t.grad_buffer(b.id), ops::matmul_tn(g, t.value(a)));
  });
}

Var add(Var a, Var b) {
  require(a.value().same_shape(b.value()), "shape_mismatch",
          "add " + shape_string(a.value().shape()) + " + " + shape_string(b.value().shape()));
  Tensor out = a.value();
  ops::add_inplace(out, b.value());
  const Var in[] = {a, b};
  return a.tape->record(std::move(out), in, [a, b](Tape& t, const Tensor& g) {
    accumulate(t, a, g);
    accumulate(t, b, g);
  });
}

Var add_bias(Var a, Var bias) {
  Tensor out = a.value();
  ops::add_row_inplace(out, bias.value());
  const Var in[] = {a, bias};
  return a.tape->record(std::move(out), in, [a, bias](Tape& t, const Tensor& g) {
    accumulate(t, a, g);
    if (t.requires_grad(bias)) {
      Tensor& gb = t.grad_buffer(bias.id);
      const std::size_t m = g.cols();
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < m; ++j) gb[j] += g(i, j);
    }
  });
}

Var add_constant(Var a, const Tensor& c) {
  require(a.value().size() == c.size(), "shape_mismatch",
          "add_constant " + shape_string(a.value().shape()) + " + " + shape_string(c.shape()));
  Tensor out = a.value();
  ops::add_inplace(out, c);
  const Var in[] = {a};
  return a.tape->record(std::move(out), in, [a](Tape& t, const Tensor& g) { accumulate(t, a, g); });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= s;
  const Var in[] = {a};
  return a.tape->record(std::move(out), in, [a, s](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

Var mul(Var a, Var b) {
  require(a.value().same_shape(b.value()), "shape_mismatch", "mul operands differ in shape");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const Var in[] = {a, b};
  return a.tape->record(std::move(out), in, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad_buffer(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * t.value(b)[i];
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad_buffer(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * t.value(a)[i];
    }
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const Var in[] = {a};
  return a.tape->record(Tensor({1}, s), in, [a](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a.id);
    for (double& v : ga.values()) v += g[0];
  });
}

Var softmax_rows(Var a) {
  check_matrix(a.value(), "softmax_rows");
  Tensor out = a.value();
  ops::softmax_rows_inplace(out);
  const Var in[] = {a};
  // The backward rule reads the softmax output, which is the node being recorded.
  const Var self{a.tape, a.tape->size()};
  return a.tape->record(std::move(out), in, [a, self](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(self);
    Tensor& ga = t.grad_buffer(a.id);
    const std::size_t m = y.cols();
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < m; ++j) ga(i, j) += y(i, j) * (g(i, j) - dot);
    }
  });
}

Var gelu(Var a) {
  require(a.value().all_finite(), "non_finite", "gelu input is not finite");
  Tensor out = a.value();
  ops::gelu_inplace(out);
  const Var in[] = {a};
  return a.tape->record(std::move(out), in, [a](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(a);
    Tensor& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * ops::gelu_derivative(x[i]);
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const Tensor& xv = x.value();
  const std::size_t m = xv.cols();
  require(m >= 2, "invalid_argument", "layer_norm needs a normalized axis of length >= 2");
  require(gain.value().size() == m && bias.value().size() == m, "shape_mismatch",
          "layer_norm affine parameters do not match " + shape_string(xv.shape()));
  Tensor xhat(xv.shape());
  std::vector<double> inv_std(xv.rows());
  Tensor out(xv.shape());
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < m; ++j) mean += xv(i, j);
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t j = 0; j < m; ++j) var += (xv(i, j) - mean) * (xv(i, j) - mean);
    var /= static_cast<double>(m);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < m; ++j) {
      xhat(i, j) = (xv(i, j) - mean) * inv_std[i];
      out(i, j) = xhat(i, j) * gv[j] + bv[j];
    }
  }
  const Var in[] = {x, gain, bias};
  return x.tape->record(
      std::move(out), in,
      [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t,
                                                                             const Tensor& g) {
        const std::size_t m = g.cols();
        const Tensor& gv = t.value(gain);
        if (t.requires_grad(bias)) {
          Tensor& gb = t.grad_buffer(bias.id);
          for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < m; ++j) gb[j] += g(i, j);
        }
        if (t.requires_grad(gain)) {
          Tensor& gg = t.grad_buffer(gain.id);
          for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < m; ++j) gg[j] += g(i, j) * xhat(i, j);
        }
        if (t.requires_grad(x)) {
          Tensor& gx = t.grad_buffer(x.id);
          std::vector<double> dxhat(m);
          for (std::size_t i = 0; i < g.rows(); ++i) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t j = 0; j < m; ++j) {
              dxhat[j] = g(i, j) * gv[j];
              mean_d += dxhat[j];
              mean_dx += dxhat[j] * xhat(i, j);
            }
            mean_d /= static_cast<double>(m);
            mean_dx /= static_cast<double>(m);
            for (std::size_t j = 0; j < m; ++j)
              gx(i, j) += inv_std[i] * (dxhat[j] - mean_d - xhat(i, j) * mean_dx);
          }
        }
      });
}

Var dropout(Var a, double rate, std::mt19937_64& rng) {
  require(rate >= 0.0 && rate < 1.0, "invalid_argument", "dropout rate must lie in [0, 1)");
  if (rate == 0.0) return a;
  std::bernoulli_distribution keep(1.0 - rate);
  const double inv = 1.0 / (1.0 - rate);
  Tensor mask(a.value().shape());
  for (double& v : mask.values()) v = keep(rng) ? inv : 0.0;
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  const Var in[] = {a};
  return a.tape->record(std::move(out), in, [a, mask = std::move(mask)](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
  });
}

Var slice_cols(Var a, std::size_t start, std::size_t count) {
  const Tensor& av = a.value();
  check_matrix(av, "slice_cols");
  require(count > 0 && start + count <= av.cols(), "shape_mismatch", "slice_cols out of range");
  Tensor out = Tensor::matrix(av.rows(), count);
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = av(i, start + j);
  const Var in[] = {a};
  return a.tape->record(std::move(out), in, [a, start](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) ga(i, start + j) += g(i, j);
  });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "invalid_argument", "concat_cols of nothing");
  const std::size_t n = parts.front().value().rows();
  std::size_t total = 0;
  for (const Var& p : parts) {
    check_matrix(p.value(), "concat_cols");
    require(p.value().rows() == n, "shape_mismatch", "concat_cols row counts differ");
    total += p.value().cols();
  }
  Tensor out = Tensor::matrix(n, total);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < pv.cols(); ++j) out(i, offset + j) = pv(i, j);
    offset += pv.cols();
  }
  std::vector<Var> owned(parts.begin(), parts.end());
  return parts.front().tape->record(std::move(out), parts, [owned](Tape& t, const Tensor& g) {
    std::size_t offset = 0;
    for (const Var& p : owned) {
      const std::size_t w = t.value(p).cols();
      if (t.requires_grad(p)) {
        Tensor& gp = t.grad_buffer(p.id);
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < w; ++j) gp(i, j) += g(i, offset + j);
      }
      offset += w;
    }
  });
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  const Tensor& av = a.value();
  check_matrix(av, "gather_rows");
  require(!rows.empty(), "invalid_argument", "gather_rows with no indices");
  const std::size_t m = av.cols();
  Tensor out = Tensor::matrix(rows.size(), m);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < av.rows(), "invalid_argument", "gather_rows index out of range");
    for (std::size_t j = 0; j < m; ++j) out(i, j) = av(rows[i], j);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  const Var in[] = {a};
  return a.tape->record(std::move(out), in, [a, idx = std::move(idx)](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) ga(idx[i], j) += g(i, j);
  });
}

Var normalize_rows(Var a, double target) {
  const Tensor& av = a.value();
  check_matrix(av, "normalize_rows");
  const std::size_t m = av.cols();
  std::vector<double> norms(av.rows());
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < m; ++j) sq += av(i, j) * av(i, j);
    norms[i] = std::sqrt(sq);
    require(norms[i] > 0.0, "invalid_argument", "cannot normalize a zero vector");
    for (std::size_t j = 0; j < m; ++j) out(i, j) = av(i, j) * (target / norms[i]);
  }
  const Var in[] = {a};
  return a.tape->record(
      std::move(out), in, [a, target, norms = std::move(norms)](Tape& t, const Tensor& g) {
        const Tensor& x = t.value(a);
        Tensor& ga = t.grad_buffer(a.id);
        const std::size_t m = x.cols();
        for (std::size_t i = 0; i < x.rows(); ++i) {
          double proj = 0.0;
          for (std::size_t j = 0; j < m; ++j) proj += x(i, j) * g(i, j);
          proj /= norms[i] * norms[i];
          const double s = target / norms[i];
          for (std::size_t j = 0; j < m; ++j) ga(i, j) += s * (g(i, j) - x(i, j) * proj);
        }
      });
}

Var attention_heads(Var q, Var k, Var v, std::size_t heads, bool causal) {
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  check_matrix(qv, "attention_heads");
  const std::size_t n = qv.rows(), m = kv.rows(), d = qv.cols();
  require(heads > 0 && d % heads == 0, "invalid_argument",
          "model dim " + std::to_string(d) + " is not divisible by " + std::to_string(heads) + " heads");
  require(kv.cols() == d && vv.cols() == d && vv.rows() == m, "shape_mismatch",
          "attention query/key/value shapes disagree");
  require(!causal || n == m, "shape_mismatch", "causal attention needs square scores");
  const std::size_t hd = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const double neg_inf = -std::numeric_limits<double>::infinity();

  // probs[h] is the [n, m] attention matrix of head h.
  std::vector<Tensor> probs(heads, Tensor::matrix(n, m));
  Tensor out = Tensor::matrix(n, d);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * hd;
    Tensor& p = probs[h];
    for (std::size_t i = 0; i < n; ++i) {
      const double* qi = qv.data() + i * d + off;
      for (std::size_t j = 0; j < m; ++j) {
        if (causal && j > i) {
          p(i, j) = neg_inf;
          continue;
        }
        const double* kj = kv.data() + j * d + off;
        double s = 0.0;
        for (std::size_t c = 0; c < hd; ++c) s += qi[c] * kj[c];
        p(i, j) = s * scale;
      }
    }
    ops::softmax_rows_inplace(p);
    for (std::size_t i = 0; i < n; ++i) {
      double* oi = out.data() + i * d + off;
      for (std::size_t j = 0; j < m; ++j) {
        const double w = p(i, j);
        if (w == 0.0) continue;
        const double* vj = vv.data() + j * d + off;
        for (std::size_t c = 0; c < hd; ++c) oi[c] += w * vj[c];
      }
    }
  }

  const Var in[] = {q, k, v};
  return q.tape->record(
      std::move(out), in,
      [q, k, v, heads, hd, scale, probs = std::move(probs)](Tape& t, const Tensor& g) {
        const Tensor& qv = t.value(q);
        const Tensor& kv = t.value(k);
        const Tensor& vv = t.value(v);
        const std::size_t n = qv.rows(), m = kv.rows(), d = qv.cols();
        Tensor* gq = t.requires_grad(q) ? &t.grad_buffer(q.id) : nullptr;
        Tensor* gk = t.requires_grad(k) ? &t.grad_buffer(k.id) : nullptr;
        Tensor* gv = t.requires_grad(v) ? &t.grad_buffer(v.id) : nullptr;
        std::vector<double> dp(m);
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t off = h * hd;
          const Tensor& p = probs[h];
          for (std::size_t i = 0; i < n; ++i) {
            const double* gi = g.data() + i * d + off;
            // dP = dO * V^T, then the softmax Jacobian gives dS.
            double dot = 0.0;
            for (std::size_t j = 0; j < m; ++j) {
              const double* vj = vv.data() + j * d + off;
              double s = 0.0;
              for (std::size_t c = 0; c < hd; ++c) s += gi[c] * vj[c];
              dp[j] = s;
              dot += s * p(i, j);
            }
            const double* qi = qv.data() + i * d + off;
            for (std::size_t j = 0; j < m; ++j) {
              const double w = p(i, j);
              if (w == 0.0) continue;
              if (gv) {
                double* gvj = gv->data() + j * d + off;
                for (std::size_t c = 0; c < hd; ++c) gvj[c] += w * gi[c];
              }
              const double ds = w * (dp[j] - dot) * scale;
              if (gq) {
                double* gqi = gq->data() + i * d + off;
                const double* kj = kv.data() + j * d + off;
                for (std::size_t c = 0; c < hd; ++c) gqi[c] += ds * kj[c];
              }
              if (gk) {
                double* gkj = gk->data() + j * d + off;
                for (std::size_t c = 0; c < hd; ++c) gkj[c] += ds * qi[c];
              }
            }
          }
        }
      });
}

Var cross_entropy(Var logits, std::span<const std::size_t> targets) {
  const Tensor& lv = logits.value();
  check_matrix(lv, "cross_entropy");
  require(lv.rows() == targets.size(), "shape_mismatch",
          "cross_entropy has " + std::to_string(lv.rows()) + " rows but " +
              std::to_string(targets.size()) + " targets");
  Tensor probs = lv;
  ops::softmax_rows_inplace(probs);
  const std::size_t n = lv.rows();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    require(targets[i] < lv.cols(), "invalid_argument", "cross_entropy target out of range");
    // log-softmax evaluated directly for accuracy with confident logits
    const auto row = lv.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    total += -(row[targets[i]] - mx - std::log(z));
  }
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  const Var in[] = {logits};
  return logits.tape->record(
      Tensor({1}, total / static_cast<double>(n)), in,
      [logits, probs = std::move(probs), tgt = std::move(tgt)](Tape& t, const Tensor& g) {
        Tensor& gl = t.grad_buffer(logits.id);
        const double s = g[0] / static_cast<double>(tgt.size());
        for (std::size_t i = 0; i < probs.rows(); ++i)
          for (std::size_t j = 0; j < probs.cols(); ++j)
            gl(i, j) += s * (probs(i, j) - (j == tgt[i] ? 1.0 : 0.0));
      });
}

}  // namespace ad
}  // namespace scd
