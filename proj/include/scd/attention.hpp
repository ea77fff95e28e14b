#pragma once

#include <cstddef>

#include "scd/autodiff.hpp"

namespace scd {

// Projection weights of one attention block, already bound to a tape.
struct AttentionVars {
  ad::Var wq, bq, wk, bk, wv, bv, wo, bo;
};

// Scaled dot-product attention with `heads` heads over the projected inputs.
// Queries come from `query_in` [n, d], keys and values from `kv_in` [m, d].
// With `causal`, query row t sees key rows 0..t only (requires n == m).
ad::Var multi_head_attention(ad::Var query_in, ad::Var kv_in, const AttentionVars& w,
                             std::size_t heads, bool causal);

// Additive mask: 0 on and below the diagonal, -inf above it.
Tensor causal_mask(std::size_t n);

}  // namespace scd
