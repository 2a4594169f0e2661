#pragma once

#include <vector>

#include <Eigen/Dense>

#include "ssub/tape.hpp"

namespace ssub {

// ---- elementwise -----------------------------------------------------------

Value add(Value a, Value b);
Value sub(Value a, Value b);
Value mul(Value a, Value b);
Value add_scalar(Value a, float c);
Value scale(Value a, float c);
Value relu(Value a);
Value exp_op(Value a);
Value log_op(Value a);
Value square(Value a);
Value clamp(Value a, float lo, float hi);

// ---- reductions ------------------------------------------------------------

Value reduce_sum(Value a);   // scalar, float64 accumulation
Value reduce_mean(Value a);

// ---- linear algebra --------------------------------------------------------

// (m,k)x(k,n) -> (m,n), or (m,k)x(k) -> (m).
Value matmul(Value a, Value b);
Value transpose(Value a);
// Select rows of a rank-1 or rank-2 tensor; indices must be in range.
Value gather_rows(Value a, std::vector<int> rows);
Value reshape(Value a, Shape shape);

// Solve sym(A) x = b with sym(A) = (A + A^T)/2 via a float64 Cholesky
// factorization. Differentiable in both A and b.
Value solve_spd(Value a, Value b);
// log det sym(A) and tr(sym(A)^-1), both via the same factorization.
Value spd_logdet(Value a);
Value spd_trace_inverse(Value a);

// ---- images (rank-3 C,H,W feature maps) ------------------------------------

enum class Pad { Same, Valid };

// 2-D cross-correlation of x (Ci,H,W) with kernel (Co,Ci,Kh,Kw); `Same`
// requires odd kernel extents and zero-pads, `Valid` shrinks. Implemented as
// im2col + one float GEMM per call.
Value conv2d(Value x, Value kernel, Pad pad = Pad::Same);
// x (C,H,W) + bias (C), broadcast over pixels.
Value add_channel_bias(Value x, Value bias);
// Adds bias_c only at pixels where mask (H,W) is 1.
Value add_channel_bias_masked(Value x, Value bias, const Tensor& mask);
// Multiply every channel of x (C,H,W) by a constant per-pixel weight (H,W).
Value mul_spatial(Value x, const Tensor& weights);
// 2x2 max pooling, stride 2; spatial extents must be even.
Value maxpool2d(Value x);
// Nearest-neighbor 2x upsampling.
Value upsample2x(Value x);
Value concat_channels(Value a, Value b);
// Zero-pad at the bottom/right edges only.
Value pad2d(Value x, int bottom, int right);
// Keep the top-left (h,w) window of every channel.
Value crop2d(Value x, int h, int w);

// ---- stochastic ------------------------------------------------------------

// z = mu + exp(0.5*logvar) .* eps. The first form draws eps from `rng` when
// the node is recorded; the second takes eps explicitly (eps = 0 gives
// z = mu bit-exactly, the deterministic "mean mode").
Value gaussian_sample(Value mu, Value logvar, SeededRng& rng);
Value gaussian_sample(Value mu, Value logvar, Tensor eps);

// ---- float64 Cholesky helpers (shared by solve_spd and the sparse/linear
// ---- posterior paths) ------------------------------------------------------

// Lower-triangular factor of an SPD matrix; throws NumericError naming the
// first leading minor that fails positive definiteness.
Eigen::MatrixXd cholesky_lower(const Eigen::MatrixXd& a);
Eigen::VectorXd cholesky_solve(const Eigen::MatrixXd& l, Eigen::VectorXd b);
Eigen::MatrixXd cholesky_solve_mat(const Eigen::MatrixXd& l, Eigen::MatrixXd b);

}  // namespace ssub
