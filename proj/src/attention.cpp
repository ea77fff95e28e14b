#include "scd/attention.hpp"

#include <cmath>
#include <limits>

#include "scd/error.hpp"

namespace scd {

Tensor causal_mask(std::size_t n) {
  Tensor mask = Tensor::matrix(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) mask(i, j) = -std::numeric_limits<double>::infinity();
  return mask;
}

ad::Var multi_head_attention(ad::Var query_in, ad::Var kv_in, const AttentionVars& w,
                             std::size_t heads, bool causal) {
  const std::size_t dim = query_in.value().cols();
  require(heads > 0 && dim % heads == 0, "invalid_argument",
          "model dim " + std::to_string(dim) + " is not divisible by " + std::to_string(heads) +
              " heads");
  require(kv_in.value().cols() == dim, "shape_mismatch", "attention key/value width differs");
  require(!causal || query_in.value().rows() == kv_in.value().rows(), "shape_mismatch",
          "causal attention needs square scores");

  const ad::Var q = ad::add_bias(ad::matmul(query_in, w.wq), w.bq);
  const ad::Var k = ad::add_bias(ad::matmul(kv_in, w.wk), w.bk);
  const ad::Var v = ad::add_bias(ad::matmul(kv_in, w.wv), w.bv);

  return ad::add_bias(ad::matmul(ad::attention_heads(q, k, v, heads, causal), w.wo), w.bo);
}

}  // namespace scd
