#pragma once

#include <span>
#include <vector>

#include "bssm/autograd.hpp"

namespace bssm {

// Differentiable primitives. Binary elementwise ops broadcast `b` over `a`
// when b's shape is a trailing suffix of a's (a scalar shape `()` included).

template <typename S> Var<S> add(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> sub(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> mul(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> div(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> scale(const Var<S>& a, S factor);
template <typename S> Var<S> add_scalar(const Var<S>& a, S value);
template <typename S> Var<S> neg(const Var<S>& a);

template <typename S> Var<S> exp(const Var<S>& a);
template <typename S> Var<S> log(const Var<S>& a);
template <typename S> Var<S> square(const Var<S>& a);
template <typename S> Var<S> sigmoid(const Var<S>& a);
template <typename S> Var<S> softplus(const Var<S>& a);
template <typename S> Var<S> silu(const Var<S>& a);

/// (..., k) x (k, n) -> (..., n).
template <typename S> Var<S> matmul(const Var<S>& a, const Var<S>& b);
/// Rank-2 transpose.
template <typename S> Var<S> transpose(const Var<S>& a);
template <typename S> Var<S> reshape(const Var<S>& a, Shape shape);
/// Concatenation along the last axis; leading dimensions must agree.
template <typename S> Var<S> concat(const std::vector<Var<S>>& parts);
/// Columns [start, start + length) of the last axis.
template <typename S> Var<S> slice(const Var<S>& a, Index start, Index length);

template <typename S> Var<S> sum(const Var<S>& a);
template <typename S> Var<S> mean(const Var<S>& a);

/// Max-subtracted softmax along `axis` (last axis, or axis 0 of a matrix).
template <typename S> Var<S> softmax(const Var<S>& a, int axis = -1);
template <typename S> Var<S> log_softmax(const Var<S>& a);

/// Per-row normalization over the last axis, then gain * x_hat + bias.
template <typename S> Var<S> layer_norm(const Var<S>& x, const Var<S>& gain, const Var<S>& bias, S eps = S(1e-5));

/// Rows of `table` (vocab x d) selected by `ids`; result (n, d).
template <typename S> Var<S> embedding_lookup(const Var<S>& table, std::span<const int> ids);

/// x: (batch*seq_len, channels), kernel: (width, channels), bias: (channels).
/// out[t] = bias + sum_j kernel[j] * x[t - width + 1 + j] within each sequence.
template <typename S>
Var<S> causal_depthwise_conv(const Var<S>& x, const Var<S>& kernel, const Var<S>& bias, Index seq_len);

/// Scales row i of x (rows = leading dims folded) by the constant mask[i].
template <typename S> Var<S> mask_rows(const Var<S>& x, std::span<const S> mask);

/// Mean of the rows of each sequence where mask is 1. x: (batch*seq_len, d).
template <typename S> Var<S> masked_mean_pool(const Var<S>& x, std::span<const S> mask, Index seq_len);

/// Sum over rows of weight[i] * -log softmax(logits[i])[target[i]]; rows
/// with weight 0 are skipped.
template <typename S>
Var<S> sparse_cross_entropy(const Var<S>& logits, std::span<const int> targets, std::span<const S> weights);

/// -sum(coef * log_softmax(logits)) with a constant coefficient matrix.
template <typename S>
Var<S> soft_cross_entropy(const Var<S>& logits, const Tensor<S>& coef);

}  // namespace bssm
