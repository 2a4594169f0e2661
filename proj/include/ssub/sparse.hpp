#pragma once

#include <vector>

#include <Eigen/Dense>

#include "ssub/ops.hpp"

namespace ssub {

// One partially observed image: `values` carry the observed pixels (zero at
// missing sites), `mask` is 1 where observed / 0 where missing. Shapes match
// and the mask is strictly binary.
struct SparseSample {
  Tensor values;  // (H,W)
  Tensor mask;    // (H,W)
};

// Validates binary mask entries and shape agreement; throws on violation.
void check_mask(const Tensor& mask);
void check_sample(const SparseSample& s);

// Indices (ascending) of the non-zero mask entries, flat order.
std::vector<int> observed_indices(const Tensor& mask);

// ---- sparsity-aware fully connected layer -----------------------------------

// Linear-readout layer that solves a ridge-regularized least-squares fit of
// its weight columns to the observed entries:
//   r = (Wo^T Wo + ridge I)^-1 Wo^T (y - mu)_o
// where Wo keeps only the rows of W at observed sites. Differentiable in W,
// mu and y. The normal equations are assembled in float64 with the observed
// rows summed in a canonical content-derived order, which makes the result
// bit-identical under any permutation of the input pixels (applied jointly
// to rows of W, mu, y and the mask).
struct SparseFcLayer {
  Parameter weight;  // (D,d): columns span the subspace
  Parameter offset;  // (D): per-pixel offset subtracted from the input
  float ridge;

  // Weight entries are drawn from N(0, (gain/sqrt(D))^2). Because the
  // least-squares response scales inversely with the weight norm, a gain
  // above 1 yields proportionally smaller initial codes.
  SparseFcLayer(const std::string& prefix, int input_dim, int code_dim, float ridge_,
                SeededRng& rng, float gain = 1.0f);
};

// Tape version; `y` must be rank-1 of length D, `mask` a constant of the same
// length (any rank; flattened). Returns the rank-1 code of length d.
Value sparse_fc_forward(Tape& tape, SparseFcLayer& layer, Value y, const Tensor& mask);

// Shared assembly of the observed-row normal equations (float64).
struct NormalEq {
  std::vector<int> obs;      // ascending observed flat indices
  Eigen::MatrixXd gram;      // Wo^T Wo + ridge I
  Eigen::VectorXd rhs;       // Wo^T (y - mu)_o
  Eigen::MatrixXd w_obs;     // Wo
  Eigen::VectorXd resid_obs; // (y - mu)_o
};

NormalEq assemble_normal_eq(const Tensor& weight, const Tensor& offset, const Tensor& y,
                            const Tensor& mask, double ridge);

// Plain-tensor version of the layer response (no tape, no gradients).
Tensor sparse_fc_response(const Tensor& weight, const Tensor& offset, const Tensor& y,
                          const Tensor& mask, double ridge);

// ---- sparsity-aware convolution ---------------------------------------------

// Binary dilation of the mask by the (extent x extent) kernel footprint:
// output 1 wherever at least one observed site falls under the window.
Tensor propagate_mask(const Tensor& mask, int extent);

struct SparseConvOut {
  Value response;
  Tensor mask;  // propagated (H,W)
};

// Same-padded convolution that sees only observed values and renormalizes by
// the local mask occupancy:
//   r_k = (|N(k)| / sum_{j in N(k)} m_{k-j}) * sum_j m_{k-j} y_{k-j} c_j
// with |N(k)| the number of in-bounds taps at k (smaller near borders).
// Pixels whose window holds no observation get response 0 and stay masked
// out; the bias is added only where the propagated mask is 1.
SparseConvOut sparse_conv2d(Tape& tape, Value x, const Tensor& mask, Value kernel, Value bias);

// 2x2 max pooling restricted to observed sites: each output takes the max
// over observed entries of its window (0 if none), and the pooled mask is the
// OR of the window.
struct MaskedPoolOut {
  Value values;
  Tensor mask;
};

MaskedPoolOut masked_maxpool(Tape& tape, Value x, const Tensor& mask);

// ---- fill-in front ends ------------------------------------------------------

// Missing sites -> 0 (observed values pass through).
Tensor fill_zero(const SparseSample& s);
// Missing sites -> per-pixel mean from `pixel_mean` (e.g. the training-set
// observed mean image).
Tensor fill_mean(const SparseSample& s, const Tensor& pixel_mean);
// Separable linear interpolation: one pass along rows and one along columns,
// each interpolating between observed anchors (outside the anchor span the
// line through the two nearest anchors is extended, so affine profiles are
// reconstructed exactly, stride masks included). Per missing pixel the passes
// with at least two anchors on their line are averaged; if neither pass has
// two, single-anchor (constant) passes are averaged instead, and a pixel with
// no anchor in either direction falls back to the mean of all observed pixels
// in the image (0 if the image is empty). Observed values pass through.
Tensor fill_interp(const SparseSample& s);

}  // namespace ssub
