#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>

#include "helpers.hpp"
#include "scd/attention.hpp"
#include "scd/error.hpp"

using namespace scd;
using scd::testing::max_fd_error;
using scd::testing::probe_loss;
using scd::testing::random_matrix;

namespace {

// Maclaurin series of erf, independent of the library erf/erfc.
double series_erf(double x) {
  double term = x, sum = x;
  for (int n = 1; n < 60; ++n) {
    term *= -x * x / n;
    sum += term / (2 * n + 1);
  }
  return 2.0 / std::sqrt(std::acos(-1.0)) * sum;
}

Tensor row(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({1, n}, std::move(v));
}

}  // namespace

TEST_CASE("gelu fixed points and the exact erf form") {
  CHECK(ops::gelu(0.0) == 0.0);
  CHECK(std::abs(ops::gelu(10.0) - 10.0) < 1e-6);
  const double expected = 1.0 * 0.5 * (1.0 + series_erf(1.0 / std::sqrt(2.0)));
  CHECK(ops::gelu(1.0) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(ops::gelu(1.0) == doctest::Approx(0.8413).epsilon(1e-4));
  for (double x : {-3.0, -0.7, 0.2, 2.5}) {
    CHECK(ops::gelu(x) == doctest::Approx(x * 0.5 * (1.0 + series_erf(x / std::sqrt(2.0)))).epsilon(1e-12));
  }
}

TEST_CASE("gelu rejects non-finite input") {
  ad::Tape tape;
  const ad::Var x = tape.input(row({1.0, std::numeric_limits<double>::quiet_NaN()}));
  CHECK_THROWS_AS(ad::gelu(x), Error);
  const ad::Var y = tape.input(row({std::numeric_limits<double>::infinity()}));
  CHECK_THROWS_AS(ad::gelu(y), Error);
}

TEST_CASE("softmax examples") {
  Tensor a = row({0.0, 0.0});
  ops::softmax_rows_inplace(a);
  CHECK(a[0] == doctest::Approx(0.5));
  CHECK(a[1] == doctest::Approx(0.5));

  Tensor b = row({std::log(1.0), std::log(2.0), std::log(3.0)});
  ops::softmax_rows_inplace(b);
  CHECK(b[0] == doctest::Approx(1.0 / 6).epsilon(1e-14));
  CHECK(b[1] == doctest::Approx(1.0 / 3).epsilon(1e-14));
  CHECK(b[2] == doctest::Approx(1.0 / 2).epsilon(1e-14));

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor v = random_matrix(3, 7, rng, 5.0);
    Tensor shifted = v;
    for (double& x : shifted.values()) x += 123.25;
    ops::softmax_rows_inplace(v);
    ops::softmax_rows_inplace(shifted);
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0.0;
      for (double x : v.row(r)) {
        CHECK(x > 0.0);
        CHECK(x < 1.0);
        s += x;
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::abs(v[i] - shifted[i]) < 1e-12);
  }
}

TEST_CASE("softmax rejects an empty axis") {
  CHECK_THROWS_AS(Tensor::matrix(2, 0), Error);
  Tensor empty;
  CHECK_THROWS_AS(ops::softmax_rows_inplace(empty), Error);
}

TEST_CASE("layer norm examples") {
  const Tensor c = ops::layer_norm(row({4.0, 4.0, 4.0}), Tensor({3}, 1.0), Tensor({3}, 0.0), 1e-5);
  for (double v : c.values()) CHECK(v == 0.0);

  const Tensor bias({3}, std::vector<double>{0.5, -1.0, 2.0});
  const Tensor g = ops::layer_norm(row({3.0, -7.0, 1.5}), Tensor({3}, 0.0), bias, 1e-5);
  for (std::size_t i = 0; i < 3; ++i) CHECK(g[i] == bias[i]);

  std::mt19937_64 rng(11);
  const Tensor x = random_matrix(4, 64, rng, 3.0);
  const Tensor y = ops::layer_norm(x, Tensor({64}, 1.0), Tensor({64}, 0.0), 1e-5);
  for (std::size_t r = 0; r < 4; ++r) {
    double mean = 0.0, var = 0.0;
    for (double v : y.row(r)) mean += v;
    mean /= 64;
    for (double v : y.row(r)) var += (v - mean) * (v - mean);
    var /= 64;
    CHECK(std::abs(mean) < 1e-9);
    // eps shifts the variance by roughly eps / var(x).
    CHECK(std::abs(var - 1.0) < 1e-5);
  }
}

TEST_CASE("layer norm needs two columns") {
  ad::Tape tape;
  const ad::Var x = tape.input(Tensor::matrix(2, 1, 1.0));
  CHECK_THROWS_AS(ad::layer_norm(x, tape.input(Tensor({1}, 1.0)), tape.input(Tensor({1}, 0.0))), Error);
}

TEST_CASE("backward of simple losses") {
  {
    ad::Tape tape;
    const ad::Var x = tape.input(Tensor::matrix(2, 3, 0.25));
    tape.backward(ad::sum(x));
    for (double g : tape.grad(x).values()) CHECK(g == 1.0);
  }
  {
    std::mt19937_64 rng(2);
    ad::Tape tape;
    const ad::Var x = tape.input(random_matrix(3, 4, rng));
    const ad::Var f = ad::gelu(ad::matmul_nt(x, x));
    tape.backward(ad::scale(ad::sum(f), 0.0));
    for (double g : tape.grad(x).values()) CHECK(g == 0.0);
  }
  {
    ad::Tape tape;
    const ad::Var x = tape.input(Tensor::matrix(2, 2, 1.0));
    CHECK_THROWS_AS(tape.backward(x), Error);
  }
}

TEST_CASE("finite differences: elementwise and matrix ops") {
  std::mt19937_64 rng(3);
  const Tensor a = random_matrix(3, 4, rng), b = random_matrix(4, 5, rng), c = random_matrix(5, 4, rng);
  const Tensor bias = Tensor({5}, random_matrix(1, 5, rng).storage());

  CHECK(max_fd_error([](ad::Tape& t, auto& x) { return probe_loss(t, ad::matmul(x[0], x[1])); }, {a, b}) < 1e-7);
  CHECK(max_fd_error([](ad::Tape& t, auto& x) { return probe_loss(t, ad::matmul_nt(x[0], x[1])); }, {a, c}) < 1e-7);
  CHECK(max_fd_error([](ad::Tape& t, auto& x) { return probe_loss(t, ad::add_bias(ad::matmul(x[0], x[1]), x[2])); },
                     {a, b, bias}) < 1e-7);
  CHECK(max_fd_error([](ad::Tape& t, auto& x) { return probe_loss(t, ad::mul(x[0], x[1])); }, {a, a}) < 1e-7);
  CHECK(max_fd_error([](ad::Tape& t, auto& x) { return probe_loss(t, ad::gelu(x[0])); }, {a}) < 1e-7);
  CHECK(max_fd_error([](ad::Tape& t, auto& x) { return probe_loss(t, ad::softmax_rows(x[0])); }, {a}) < 1e-7);
  CHECK(max_fd_error([](ad::Tape& t, auto& x) { return probe_loss(t, ad::normalize_rows(x[0], 3.0)); }, {a}) < 1e-7);
  CHECK(max_fd_error([](ad::Tape& t, auto& x) { return probe_loss(t, ad::scale(ad::add(x[0], x[1]), -1.5)); },
                     {a, a}) < 1e-7);
  CHECK(max_fd_error(
            [](ad::Tape& t, auto& x) {
              const ad::Var parts[] = {ad::slice_cols(x[0], 1, 2), x[1]};
              return probe_loss(t, ad::concat_cols(parts));
            },
            {a, random_matrix(3, 2, rng)}) < 1e-7);
  CHECK(max_fd_error(
            [](ad::Tape& t, auto& x) {
              const std::size_t rows[] = {2, 0, 2, 1};
              return probe_loss(t, ad::gather_rows(x[0], rows));
            },
            {a}) < 1e-7);
}

TEST_CASE("finite differences: layer norm and cross-entropy") {
  std::mt19937_64 rng(4);
  const Tensor x = random_matrix(3, 6, rng);
  const Tensor g = Tensor({6}, random_matrix(1, 6, rng).storage());
  const Tensor b = Tensor({6}, random_matrix(1, 6, rng).storage());
  CHECK(max_fd_error([](ad::Tape& t, auto& v) { return probe_loss(t, ad::layer_norm(v[0], v[1], v[2])); },
                     {x, g, b}) < 1e-6);
  CHECK(max_fd_error(
            [](ad::Tape&, auto& v) {
              const std::size_t targets[] = {0, 2, 1};
              return ad::cross_entropy(v[0], targets);
            },
            {random_matrix(3, 3, rng, 2.0)}) < 1e-7);
}

TEST_CASE("uniform logits give cross-entropy ln 3") {
  ad::Tape tape;
  const ad::Var z = tape.input(Tensor::matrix(4, 3, 0.7));
  const std::size_t targets[] = {0, 1, 2, 2};
  CHECK(ad::cross_entropy(z, targets).value()[0] == doctest::Approx(std::log(3.0)).epsilon(1e-15));
}

namespace {

// Attention assembled from primitive ops, one head at a time.
ad::Var composite_attention(ad::Var q, ad::Var k, ad::Var v, std::size_t heads, bool causal) {
  const std::size_t d = q.value().cols(), hd = d / heads;
  std::vector<ad::Var> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    const ad::Var qh = ad::slice_cols(q, h * hd, hd);
    const ad::Var kh = ad::slice_cols(k, h * hd, hd);
    const ad::Var vh = ad::slice_cols(v, h * hd, hd);
    ad::Var s = ad::scale(ad::matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(hd)));
    if (causal) s = ad::add_constant(s, causal_mask(q.value().rows()));
    outs.push_back(ad::matmul(ad::softmax_rows(s), vh));
  }
  return ad::concat_cols(outs);
}

}  // namespace

TEST_CASE("fused attention matches the composite oracle") {
  std::mt19937_64 rng(8);
  for (bool causal : {false, true}) {
    const std::size_t n = 5, m = causal ? 5 : 7, d = 8, heads = 2;
    const Tensor q = random_matrix(n, d, rng), k = random_matrix(m, d, rng), v = random_matrix(m, d, rng);
    ad::Tape t1, t2;
    const ad::Var q1 = t1.input(q), k1 = t1.input(k), v1 = t1.input(v);
    const ad::Var q2 = t2.input(q), k2 = t2.input(k), v2 = t2.input(v);
    const ad::Var o1 = ad::attention_heads(q1, k1, v1, heads, causal);
    const ad::Var o2 = composite_attention(q2, k2, v2, heads, causal);
    for (std::size_t i = 0; i < o1.value().size(); ++i) CHECK(o1.value()[i] == doctest::Approx(o2.value()[i]).epsilon(1e-13));
    t1.backward(probe_loss(t1, o1));
    t2.backward(probe_loss(t2, o2));
    for (auto [a, b] : {std::pair{q1, q2}, std::pair{k1, k2}, std::pair{v1, v2}}) {
      for (std::size_t i = 0; i < t1.grad(a).size(); ++i)
        CHECK(t1.grad(a)[i] == doctest::Approx(t2.grad(b)[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("multi-head attention gradients match finite differences") {
  std::mt19937_64 rng(9);
  const std::size_t d = 6;
  std::vector<Tensor> in = {random_matrix(4, d, rng), random_matrix(3, d, rng)};
  for (int i = 0; i < 4; ++i) {
    in.push_back(random_matrix(d, d, rng, 0.5));
    in.push_back(Tensor({d}, random_matrix(1, d, rng, 0.1).storage()));
  }
  auto build = [](bool causal) {
    return [causal](ad::Tape& t, std::vector<ad::Var>& x) {
      const AttentionVars w{x[2], x[3], x[4], x[5], x[6], x[7], x[8], x[9]};
      const ad::Var kv = causal ? x[0] : x[1];
      return probe_loss(t, multi_head_attention(x[0], kv, w, 3, causal));
    };
  };
  CHECK(max_fd_error(build(false), in) < 1e-5);
  CHECK(max_fd_error(build(true), in) < 1e-5);
}

TEST_CASE("attention properties with identity projections") {
  const std::size_t d = 4;
  Tensor eye = Tensor::matrix(d, d);
  for (std::size_t i = 0; i < d; ++i) eye(i, i) = 1.0;
  std::mt19937_64 rng(10);
  ad::Tape tape;
  auto c = [&](const Tensor& t) { return tape.constant(t); };
  const ad::Var zero = c(Tensor({d}, 0.0));
  const AttentionVars w{c(eye), zero, c(eye), zero, c(eye), zero, c(eye), zero};

  // Identical key rows: every query weighs the value rows uniformly.
  const Tensor q = random_matrix(3, d, rng);
  const Tensor keys = Tensor::matrix(5, d, 0.3);
  const Tensor values = random_matrix(5, d, rng);
  const ad::Var scores_same = ad::attention_heads(c(q), c(keys), c(values), 2, false);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      double mean = 0.0;
      for (std::size_t i = 0; i < 5; ++i) mean += values(i, j) / 5.0;
      CHECK(scores_same.value()(r, j) == doctest::Approx(mean).epsilon(1e-12));
    }
  }

  // Causal: position 0 only sees itself.
  const Tensor x = random_matrix(4, d, rng);
  const ad::Var out = multi_head_attention(c(x), c(x), w, 2, true);
  for (std::size_t j = 0; j < d; ++j) CHECK(out.value()(0, j) == doctest::Approx(x(0, j)).epsilon(1e-14));

  // Each output row is a convex combination of value rows.
  const ad::Var o = multi_head_attention(c(x), c(x), w, 1, false);
  for (std::size_t j = 0; j < d; ++j) {
    double lo = 1e9, hi = -1e9;
    for (std::size_t i = 0; i < 4; ++i) lo = std::min(lo, x(i, j)), hi = std::max(hi, x(i, j));
    for (std::size_t r = 0; r < 4; ++r) {
      CHECK(o.value()(r, j) >= lo - 1e-12);
      CHECK(o.value()(r, j) <= hi + 1e-12);
    }
  }
}

TEST_CASE("attention rejects heads that do not divide the width") {
  ad::Tape tape;
  const ad::Var x = tape.input(Tensor::matrix(2, 6, 1.0));
  CHECK_THROWS_AS(ad::attention_heads(x, x, x, 4, false), Error);
}

TEST_CASE("dropout is seeded and uses inverted scaling") {
  ad::Tape tape;
  const ad::Var x = tape.input(Tensor::matrix(200, 50, 1.0));
  std::mt19937_64 r1(17), r2(17);
  const Tensor a = ad::dropout(x, 0.25, r1).value();
  const Tensor b = ad::dropout(x, 0.25, r2).value();
  CHECK(a == b);
  double mean = 0.0;
  std::size_t zeros = 0;
  for (double v : a.values()) {
    CHECK((v == 0.0 || v == doctest::Approx(1.0 / 0.75)));
    zeros += v == 0.0;
    mean += v;
  }
  mean /= static_cast<double>(a.size());
  CHECK(std::abs(mean - 1.0) < 0.03);
  CHECK(std::abs(static_cast<double>(zeros) / static_cast<double>(a.size()) - 0.25) < 0.02);
}

TEST_CASE("identical inputs give bit-identical forward and backward passes") {
  std::mt19937_64 rng(21);
  const Tensor a = random_matrix(4, 6, rng), w = random_matrix(6, 6, rng);
  auto run = [&] {
    ad::Tape tape;
    const ad::Var x = tape.input(a), p = tape.input(w);
    const ad::Var h = ad::gelu(ad::matmul(x, p));
    const ad::Var y = ad::attention_heads(h, h, h, 3, true);
    const ad::Var loss = probe_loss(tape, ad::softmax_rows(y));
    tape.backward(loss);
    return std::pair{loss.value()[0], tape.grad(p)};
  };
  const auto r1 = run();
  const auto r2 = run();
  CHECK(r1.first == r2.first);
  CHECK(r1.second == r2.second);
}
