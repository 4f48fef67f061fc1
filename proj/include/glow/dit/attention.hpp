#pragma once

#include "glow/core/tensor.hpp"

namespace glow::dit {

// ReLU-kernel linear attention over a single token matrix:
//   O_i = ReLU(Q_i) Sv / (ReLU(Q_i) sk + eps)
// with Sv = sum_j ReLU(K_j)^T V_j and sk = sum_j ReLU(K_j)^T shared across
// queries (O(N d dv)). q [N,d], k [M,d], v [M,dv].
Tensor linear_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        double eps);

// Test oracle: direct evaluation of the pre-factorization form with an
// explicit per-pair (i, j) double loop, O(N^2 d). Numerically equals
// linear_attention up to floating reassociation.
Tensor reference_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                           double eps);

}  // namespace glow::dit
