#pragma once

#include <cstddef>
#include <vector>

#include "tosa/tape.hpp"
#include "tosa/tensor.hpp"

namespace tosa {

// Differentiable op suite. Every op validates shapes, checks its output
// for NaN/Inf, and records its backward step on the active GradTape when
// any input requires gradients.

// ---- matrix products ----------------------------------------------------

/// a[m×k] · b[k×n] -> [m×n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// a[m×k] · b[n×k]^T -> [m×n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);
/// a[m×k]^T · b[m×n] -> [k×n]
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// ---- normalizers ---------------------------------------------------------

/// Max-subtracted softmax along `axis`; rows sum to 1.
Tensor softmax(const Tensor& x, std::size_t axis);
/// log(softmax(x)) computed directly; exp of each lane sums to 1.
Tensor log_softmax(const Tensor& x, std::size_t axis);

/// Per-lane normalization to mean 0 / variance 1 (biased variance),
/// then the affine map gain * xhat + bias. gain/bias have the axis
/// extent as their shape.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  std::size_t axis, double eps = 1e-6);

// ---- 1D convolution -------------------------------------------------------

/// Cross-correlation of x[C_in×L] with kernels[C_out×C_in×k] plus bias,
/// zero-padded by (k-1)/2 so the length L is preserved. k must be odd.
Tensor conv1d(const Tensor& x, const Tensor& kernels, const Tensor& bias);

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor relu(const Tensor& x);
/// Exact erf-based GELU, 0.5 x (1 + erf(x/sqrt(2))).
Tensor gelu(const Tensor& x);

/// x[L×N] + bias[N] broadcast over rows.
Tensor add_rows(const Tensor& x, const Tensor& bias);

// ---- reshaping / routing ----------------------------------------------------

/// Copies the listed rows of x, in list order. Indices need not be
/// sorted here; sortedness is enforced by the token-routing layer.
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& indices);
Tensor row(const Tensor& x, std::size_t i);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
/// Columns [c0, c1) of a rank-2 tensor.
Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1);

// ---- reductions / losses ----------------------------------------------------

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

/// KL(p_true || exp(log_p_pred)) along `axis`, averaged over the other
/// dims: mean over lanes of sum_i p_i (log p_i - log_pred_i), with
/// 0 log 0 = 0. p_true must be normalized along axis within 1e-6 and is
/// treated as a constant (teacher signal); it must not require grad.
Tensor kl_divergence(const Tensor& log_p_pred, const Tensor& p_true, std::size_t axis);

/// Mean of -log_p[b, labels[b]] over rows. log_p is a log-distribution
/// per row (e.g. log_softmax output).
Tensor nll_from_log_probs(const Tensor& log_p, const std::vector<int>& labels);

/// Mean squared error against a constant target.
Tensor mse_loss(const Tensor& pred, const Tensor& target);

// ---- lane iteration helper --------------------------------------------------

/// Decomposes a shape around `axis` into outer × len × inner. A lane is
/// the `len` elements at fixed (outer, inner); element j of lane (o, i)
/// lives at flat index (o * len + j) * inner + i.
struct LaneView {
  std::size_t outer = 1, len = 1, inner = 1;
  std::size_t lane_count() const { return outer * inner; }
  std::size_t lane_base(std::size_t lane) const {
    const std::size_t o = lane / inner, i = lane % inner;
    return o * len * inner + i;
  }
  std::size_t stride() const { return inner; }
};
LaneView lane_view(const std::vector<std::size_t>& shape, std::size_t axis);

}  // namespace tosa
