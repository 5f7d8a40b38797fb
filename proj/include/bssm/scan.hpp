#pragma once

#include "bssm/autograd.hpp"

namespace bssm {

/// Row/column layout shared by the scan kernels. Rows are batch-major
/// (batch * seq_len); heads of width `head_dim` are packed along columns.
/// B and C hold `groups` blocks of `state` columns; head h reads group
/// h / (heads / groups).
struct ScanLayout {
  Index batch = 1;
  Index seq_len = 1;
  Index heads = 1;
  Index head_dim = 1;
  Index groups = 1;
  Index state = 1;

  Index group_of(Index head) const { return head / (heads / groups); }
};

/// Per head h, with H_0 = 0:
///   H_t = exp(delta_t * a_h) H_{t-1} + delta_t * x_t B_t^T     (head_dim x state)
///   y_t = H_t C_t + D_h x_t
/// x: (batch*T, heads*head_dim), delta: (batch*T, heads), a, D: (heads),
/// B, C: (batch*T, groups*state).
template <typename S>
Tensor<S> ssd_scan_sequential(const Tensor<S>& x, const Tensor<S>& delta, const Tensor<S>& a, const Tensor<S>& B,
                              const Tensor<S>& C, const Tensor<S>& D, const ScanLayout& layout);

/// Same recurrence evaluated chunk by chunk: a masked decay matrix inside
/// each chunk, plus the state carried in from the previous chunk.
template <typename S>
Tensor<S> ssd_scan_chunked(const Tensor<S>& x, const Tensor<S>& delta, const Tensor<S>& a, const Tensor<S>& B,
                           const Tensor<S>& C, const Tensor<S>& D, const ScanLayout& layout, Index chunk_size);

/// Differentiable sequential scan. Gradients flow to all six inputs.
template <typename S>
Var<S> ssd_scan(const Var<S>& x, const Var<S>& delta, const Var<S>& a, const Var<S>& B, const Var<S>& C,
                const Var<S>& D, const ScanLayout& layout);

}  // namespace bssm
