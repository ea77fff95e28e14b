#include "scd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "scd/error.hpp"

namespace scd {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(shape_product(shape_), fill) {
  for (std::size_t d : shape_) require(d > 0, "invalid_shape", "tensor extents must be positive");
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (std::size_t d : shape_) require(d > 0, "invalid_shape", "tensor extents must be positive");
  require(shape_product(shape_) == data_.size(), "invalid_shape",
          "tensor data length does not match shape " + shape_string(shape_));
}

Tensor Tensor::matrix_from(std::size_t rows, std::size_t cols,
                           std::initializer_list<double> values) {
  return Tensor({rows, cols}, std::vector<double>(values));
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

namespace ops {

namespace {
void check_rank2(const Tensor& t, const char* what) {
  require(t.rank() == 2, "shape_mismatch", std::string(what) + " expects a matrix, got " +
                                               shape_string(t.shape()));
}
}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank2(a, "matmul");
  check_rank2(b, "matmul");
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  require(b.rows() == k, "shape_mismatch",
          "matmul " + shape_string(a.shape()) + " * " + shape_string(b.shape()));
  Tensor c = Tensor::matrix(n, m);
  // Four output rows share each pass over b; each element still sums over p
  // in ascending order.
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    double* __restrict c0 = c.data() + i * m;
    double* __restrict c1 = c0 + m;
    double* __restrict c2 = c1 + m;
    double* __restrict c3 = c2 + m;
    const double* a0 = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double v0 = a0[p], v1 = a0[k + p], v2 = a0[2 * k + p], v3 = a0[3 * k + p];
      const double* __restrict brow = b.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) {
        const double bv = brow[j];
        c0[j] += v0 * bv;
        c1[j] += v1 * bv;
        c2[j] += v2 * bv;
        c3[j] += v3 * bv;
      }
    }
  }
  for (; i < n; ++i) {
    double* __restrict crow = c.data() + i * m;
    const double* arow = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* __restrict brow = b.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  check_rank2(a, "matmul_nt");
  check_rank2(b, "matmul_nt");
  require(b.cols() == a.cols(), "shape_mismatch",
          "matmul_nt " + shape_string(a.shape()) + " * " + shape_string(b.shape()) + "^T");
  // Transposing first keeps the inner loop contiguous; the per-element
  // summation order is unchanged.
  const std::size_t m = b.rows(), k = b.cols();
  Tensor bt = Tensor::matrix(k, m);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t p = 0; p < k; ++p) bt(p, j) = b(j, p);
  return matmul(a, bt);
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  check_rank2(a, "matmul_tn");
  check_rank2(b, "matmul_tn");
  const std::size_t k = a.rows(), n = a.cols(), m = b.cols();
  require(b.rows() == k, "shape_mismatch",
          "matmul_tn " + shape_string(a.shape()) + "^T * " + shape_string(b.shape()));
  Tensor c = Tensor::matrix(n, m);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    double* __restrict c0 = c.data() + i * m;
    double* __restrict c1 = c0 + m;
    double* __restrict c2 = c1 + m;
    double* __restrict c3 = c2 + m;
    for (std::size_t r = 0; r < k; ++r) {
      const double* arow = a.data() + r * n + i;
      const double v0 = arow[0], v1 = arow[1], v2 = arow[2], v3 = arow[3];
      const double* __restrict brow = b.data() + r * m;
      for (std::size_t j = 0; j < m; ++j) {
        const double bv = brow[j];
        c0[j] += v0 * bv;
        c1[j] += v1 * bv;
        c2[j] += v2 * bv;
        c3[j] += v3 * bv;
      }
    }
  }
  for (; i < n; ++i) {
    double* __restrict crow = c.data() + i * m;
    for (std::size_t r = 0; r < k; ++r) {
      const double av = a.data()[r * n + i];
      const double* __restrict brow = b.data() + r * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

void add_row_inplace(Tensor& a, const Tensor& row) {
  require(row.size() == a.cols(), "shape_mismatch",
          "row broadcast " + shape_string(row.shape()) + " onto " + shape_string(a.shape()));
  const std::size_t m = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* arow = a.data() + i * m;
    for (std::size_t j = 0; j < m; ++j) arow[j] += row[j];
  }
}

void add_inplace(Tensor& a, const Tensor& b) {
  require(a.size() == b.size(), "shape_mismatch",
          "add " + shape_string(a.shape()) + " + " + shape_string(b.shape()));
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

void softmax_rows_inplace(Tensor& a) {
  require(a.cols() > 0, "invalid_argument", "softmax over an empty axis");
  const std::size_t m = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* r = a.data() + i * m;
    const double mx = *std::max_element(r, r + m);
    double sum = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      r[j] = std::exp(r[j] - mx);
      sum += r[j];
    }
    for (std::size_t j = 0; j < m; ++j) r[j] /= sum;
  }
}

double standard_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double gelu(double x) { return x * standard_normal_cdf(x); }

double gelu_derivative(double x) {
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return standard_normal_cdf(x) + x * pdf;
}

void gelu_inplace(Tensor& a) {
  for (double& v : a.values()) v = gelu(v);
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t m = x.cols();
  require(gain.size() == m && bias.size() == m, "shape_mismatch",
          "layer_norm affine parameters do not match " + shape_string(x.shape()));
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double* xr = x.data() + i * m;
    double* yr = y.data() + i * m;
    double mean = 0.0;
    for (std::size_t j = 0; j < m; ++j) mean += xr[j];
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t j = 0; j < m; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(m);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < m; ++j) yr[j] = (xr[j] - mean) * inv * gain[j] + bias[j];
  }
  return y;
}

}  // namespace ops
}  // namespace scd
