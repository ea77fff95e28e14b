#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace scd {

// Dense row-major tensor of doubles. The model only needs rank 1 and 2, but
// the shape is kept general so parameters and gradients share one type.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }
  static Tensor vector(std::vector<double> data) {
    const std::size_t n = data.size();
    return Tensor({n}, std::move(data));
  }
  static Tensor matrix_from(std::size_t rows, std::size_t cols,
                            std::initializer_list<double> values);

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // Rank-2 views. A rank-1 tensor is treated as a single row.
  std::size_t rows() const noexcept { return shape_.size() == 1 ? 1 : shape_.front(); }
  std::size_t cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols(), cols()};
  }

  void fill(double value);
  bool all_finite() const noexcept;
  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::string shape_string(const std::vector<std::size_t>& shape);
std::size_t shape_product(const std::vector<std::size_t>& shape);

// Plain (non-recording) kernels shared by the autodiff ops and the inference
// path. All take rank-2 operands.
namespace ops {

Tensor matmul(const Tensor& a, const Tensor& b);     // a[n,k] * b[k,m]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a[n,k] * b[m,k]^T
Tensor matmul_tn(const Tensor& a, const Tensor& b);  // a[k,n]^T * b[k,m]
void add_row_inplace(Tensor& a, const Tensor& row);
void add_inplace(Tensor& a, const Tensor& b);
void softmax_rows_inplace(Tensor& a);
void gelu_inplace(Tensor& a);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

double gelu(double x);
double gelu_derivative(double x);
double standard_normal_cdf(double x);

}  // namespace ops
}  // namespace scd
