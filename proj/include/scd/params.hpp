#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "scd/tensor.hpp"

namespace scd {

struct ParamId {
  std::size_t index = 0;
  friend bool operator==(ParamId, ParamId) = default;
};

// Ordered collection of named trainable arrays. Order is the registration
// order, which fixes checkpoint layout and optimizer state alignment.
class ParamSet {
 public:
  ParamId add(std::string name, Tensor value);

  std::size_t size() const noexcept { return values_.size(); }
  const std::string& name(ParamId id) const { return names_[id.index]; }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor& operator[](ParamId id) { return values_[id.index]; }
  const Tensor& operator[](ParamId id) const { return values_[id.index]; }
  Tensor& at(std::size_t i) { return values_[i]; }
  const Tensor& at(std::size_t i) const { return values_[i]; }

  std::optional<ParamId> find(const std::string& name) const;
  std::size_t scalar_count() const;

  const std::vector<std::string>& names() const noexcept { return names_; }
  const std::vector<Tensor>& tensors() const noexcept { return values_; }
  std::vector<Tensor>& tensors() noexcept { return values_; }

  // Zero-filled tensors shaped like every parameter.
  std::vector<Tensor> zeros_like() const;

  friend bool operator==(const ParamSet&, const ParamSet&) = default;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

using Gradients = std::vector<Tensor>;

}  // namespace scd
