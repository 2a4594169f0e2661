#include "ssub/sparse.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ssub {

void check_mask(const Tensor& mask) {
  for (int i = 0; i < mask.size(); ++i)
    if (mask[i] != 0.0f && mask[i] != 1.0f)
      throw DataError("mask entries must be 0 or 1; found " + std::to_string(mask[i]) +
                      " at flat index " + std::to_string(i));
}

void check_sample(const SparseSample& s) {
  require_shape(s.values.same_shape(s.mask), "sample values " + shape_str(s.values.shape()) +
                                                 " and mask " + shape_str(s.mask.shape()) +
                                                 " must share a shape");
  check_mask(s.mask);
  for (int i = 0; i < s.values.size(); ++i)
    if (s.mask[i] == 0.0f && s.values[i] != 0.0f)
      throw DataError("sample carries a nonzero value at masked-out index " + std::to_string(i));
}

std::vector<int> observed_indices(const Tensor& mask) {
  std::vector<int> obs;
  for (int i = 0; i < mask.size(); ++i)
    if (mask[i] != 0.0f) obs.push_back(i);
  return obs;
}

// ---- sparse fully connected --------------------------------------------------

SparseFcLayer::SparseFcLayer(const std::string& prefix, int input_dim, int code_dim, float ridge_,
                             SeededRng& rng, float gain)
    : weight(prefix + ".weight",
             rng.gaussian_tensor({input_dim, code_dim},
                                 gain / std::sqrt(static_cast<float>(input_dim)))),
      offset(prefix + ".offset", Tensor({input_dim})),
      ridge(ridge_) {
  require_shape(input_dim > 0 && code_dim > 0, "SparseFcLayer requires positive dimensions");
  require_shape(ridge_ > 0.0f, "SparseFcLayer ridge must be positive");
  require_shape(gain > 0.0f, "SparseFcLayer gain must be positive");
}

namespace {

// Canonical summation order for the observed rows: argsort by row content
// (the weight row, then the residual). The order is a function of the row
// values alone, never of the row indices, so permuting the input pixels
// permutes the rows but leaves the sorted sequence — and therefore every
// float64 sum taken in this order — bit-identical. Rows that tie in all
// components contribute equal addends, so their relative order is moot.
std::vector<int> canonical_row_order(const Eigen::MatrixXd& w_obs,
                                     const Eigen::VectorXd& resid_obs) {
  std::vector<int> order(static_cast<size_t>(w_obs.rows()));
  std::iota(order.begin(), order.end(), 0);
  const int code = static_cast<int>(w_obs.cols());
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    for (int i = 0; i < code; ++i)
      if (w_obs(a, i) != w_obs(b, i)) return w_obs(a, i) < w_obs(b, i);
    return resid_obs(a) < resid_obs(b);
  });
  return order;
}

}  // namespace

NormalEq assemble_normal_eq(const Tensor& weight, const Tensor& offset, const Tensor& y,
                            const Tensor& mask, double ridge) {
  require_shape(weight.rank() == 2, "sparse fc weight must be rank 2, got " + shape_str(weight.shape()));
  const int dim = weight.dim(0), code = weight.dim(1);
  require_shape(offset.size() == dim && y.size() == dim && mask.size() == dim,
                "sparse fc: offset/input/mask sizes must equal weight rows " + std::to_string(dim));
  NormalEq eq;
  eq.obs = observed_indices(mask);
  const int n = static_cast<int>(eq.obs.size());
  eq.w_obs.resize(n, code);
  eq.resid_obs.resize(n);
  for (int r = 0; r < n; ++r) {
    const int p = eq.obs[static_cast<size_t>(r)];
    for (int i = 0; i < code; ++i) eq.w_obs(r, i) = static_cast<double>(weight.at(p, i));
    eq.resid_obs(r) = static_cast<double>(y[p]) - static_cast<double>(offset[p]);
  }
  eq.gram.resize(code, code);
  eq.rhs.resize(code);
  const std::vector<int> order = canonical_row_order(eq.w_obs, eq.resid_obs);
  for (int i = 0; i < code; ++i) {
    for (int j = i; j < code; ++j) {
      double s = 0.0;
      for (int r : order) s += eq.w_obs(r, i) * eq.w_obs(r, j);
      eq.gram(i, j) = s + (i == j ? ridge : 0.0);
      eq.gram(j, i) = eq.gram(i, j);
    }
    double s = 0.0;
    for (int r : order) s += eq.w_obs(r, i) * eq.resid_obs(r);
    eq.rhs(i) = s;
  }
  return eq;
}

Tensor sparse_fc_response(const Tensor& weight, const Tensor& offset, const Tensor& y,
                          const Tensor& mask, double ridge) {
  check_mask(mask);
  NormalEq eq = assemble_normal_eq(weight, offset, y, mask, ridge);
  const int code = weight.dim(1);
  Tensor out({code});
  if (eq.obs.empty()) return out;  // no information: code 0
  Eigen::MatrixXd l = cholesky_lower(eq.gram);
  Eigen::VectorXd r = cholesky_solve(l, eq.rhs);
  out.flat() = r.cast<float>();
  return out;
}

Value sparse_fc_forward(Tape& tape, SparseFcLayer& layer, Value y, const Tensor& mask) {
  const Tensor& yt = y.tensor();
  require_shape(yt.rank() == 1, "sparse_fc_forward input must be rank 1, got " + shape_str(yt.shape()));
  check_mask(mask);
  Value w = tape.param(layer.weight);
  Value mu = tape.param(layer.offset);
  NormalEq eq = assemble_normal_eq(w.tensor(), mu.tensor(), yt, mask, layer.ridge);
  const int code = layer.weight.value.dim(1);
  Tensor out({code});
  if (eq.obs.empty()) {
    // No observed sites: the ridge system has zero right-hand side, so the
    // code and all its partials vanish.
    return tape.record(std::move(out), {w, mu, y}, [](Tape&, const Tensor&) {});
  }
  Eigen::MatrixXd l = cholesky_lower(eq.gram);
  Eigen::VectorXd r = cholesky_solve(l, eq.rhs);
  out.flat() = r.cast<float>();
  auto fn = [w, mu, y, obs = std::move(eq.obs), w_obs = std::move(eq.w_obs),
             resid = std::move(eq.resid_obs), l = std::move(l),
             r = std::move(r)](Tape& t, const Tensor& g) {
    const Eigen::VectorXd s = cholesky_solve(l, g.flat().cast<double>());
    const Eigen::VectorXd wr = w_obs * r;   // Wo r
    const Eigen::VectorXd ws = w_obs * s;   // Wo s
    if (t.needs_grad(w)) {
      // dL/dWo = (e - Wo r) s^T - (Wo s) r^T, scattered back to observed rows.
      const Eigen::MatrixXd dw = (resid - wr) * s.transpose() - ws * r.transpose();
      Tensor& acc = t.grad_acc(w);
      const int code = static_cast<int>(r.size());
      for (size_t k = 0; k < obs.size(); ++k) {
        float* row = acc.data() + static_cast<size_t>(obs[k]) * code;
        for (int i = 0; i < code; ++i) row[i] += static_cast<float>(dw(static_cast<Eigen::Index>(k), i));
      }
    }
    const bool ny = t.needs_grad(y), nm = t.needs_grad(mu);
    if (ny || nm) {
      for (size_t k = 0; k < obs.size(); ++k) {
        const float v = static_cast<float>(ws(static_cast<Eigen::Index>(k)));
        if (ny) t.grad_acc(y)[obs[k]] += v;
        if (nm) t.grad_acc(mu)[obs[k]] -= v;
      }
    }
  };
  return tape.record(std::move(out), {w, mu, y}, std::move(fn));
}

// ---- sparse convolution --------------------------------------------------------

Tensor propagate_mask(const Tensor& mask, int extent) {
  require_shape(mask.rank() == 2, "propagate_mask needs a (H,W) mask, got " + shape_str(mask.shape()));
  require_shape(extent >= 1 && extent % 2 == 1, "propagate_mask extent must be odd and positive");
  check_mask(mask);
  const int h = mask.dim(0), w = mask.dim(1), half = extent / 2;
  Tensor out({h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float any = 0.0f;
      for (int dy = -half; dy <= half && any == 0.0f; ++dy) {
        const int sy = y + dy;
        if (sy < 0 || sy >= h) continue;
        for (int dx = -half; dx <= half; ++dx) {
          const int sx = x + dx;
          if (sx < 0 || sx >= w) continue;
          if (mask[sy * w + sx] != 0.0f) {
            any = 1.0f;
            break;
          }
        }
      }
      out[y * w + x] = any;
    }
  }
  return out;
}

SparseConvOut sparse_conv2d(Tape&, Value x, const Tensor& mask, Value kernel, Value bias) {
  const Tensor& xt = x.tensor();
  const Tensor& kt = kernel.tensor();
  require_shape(xt.rank() == 3, "sparse_conv2d input must be (C,H,W), got " + shape_str(xt.shape()));
  require_shape(kt.rank() == 4, "sparse_conv2d kernel must be (Cout,Cin,Kh,Kw)");
  require_shape(kt.dim(2) % 2 == 1 && kt.dim(3) % 2 == 1,
                "sparse_conv2d requires odd kernel extents");
  const int h = xt.dim(1), w = xt.dim(2);
  require_shape(mask.rank() == 2 && mask.dim(0) == h && mask.dim(1) == w,
                "sparse_conv2d: mask shape " + shape_str(mask.shape()) + " does not match input " +
                    shape_str(xt.shape()));
  check_mask(mask);
  const int kh = kt.dim(2), kw = kt.dim(3), hh = kh / 2, hw = kw / 2;

  // Local window statistics: observed count and in-bounds tap count.
  Tensor weights({h, w});
  Tensor out_mask({h, w});
  for (int y = 0; y < h; ++y) {
    for (int xi = 0; xi < w; ++xi) {
      int cnt = 0, taps = 0;
      for (int dy = -hh; dy <= hh; ++dy) {
        const int sy = y + dy;
        if (sy < 0 || sy >= h) continue;
        for (int dx = -hw; dx <= hw; ++dx) {
          const int sx = xi + dx;
          if (sx < 0 || sx >= w) continue;
          ++taps;
          if (mask[sy * w + sx] != 0.0f) ++cnt;
        }
      }
      weights[y * w + xi] = cnt > 0 ? static_cast<float>(taps) / static_cast<float>(cnt) : 0.0f;
      out_mask[y * w + xi] = cnt > 0 ? 1.0f : 0.0f;
    }
  }

  Value masked_in = mul_spatial(x, mask);
  Value summed = conv2d(masked_in, kernel, Pad::Same);
  Value scaled = mul_spatial(summed, weights);
  Value out = add_channel_bias_masked(scaled, bias, out_mask);
  return {out, std::move(out_mask)};
}

MaskedPoolOut masked_maxpool(Tape& tape, Value x, const Tensor& mask) {
  const Tensor& xt = x.tensor();
  require_shape(xt.rank() == 3, "masked_maxpool input must be (C,H,W), got " + shape_str(xt.shape()));
  const int c = xt.dim(0), h = xt.dim(1), w = xt.dim(2);
  require_shape(h % 2 == 0 && w % 2 == 0, "masked_maxpool requires even spatial extents");
  require_shape(mask.rank() == 2 && mask.dim(0) == h && mask.dim(1) == w,
                "masked_maxpool: mask shape " + shape_str(mask.shape()) + " does not match input");
  check_mask(mask);
  const int ho = h / 2, wo = w / 2;
  Tensor out({c, ho, wo});
  Tensor pooled_mask({ho, wo});
  std::vector<int> argmax(static_cast<size_t>(c) * ho * wo, -1);
  for (int y = 0; y < ho; ++y) {
    for (int xo = 0; xo < wo; ++xo) {
      int window[4] = {(2 * y) * w + 2 * xo, (2 * y) * w + 2 * xo + 1, (2 * y + 1) * w + 2 * xo,
                       (2 * y + 1) * w + 2 * xo + 1};
      bool any = false;
      for (int idx : window) any = any || mask[idx] != 0.0f;
      pooled_mask[y * wo + xo] = any ? 1.0f : 0.0f;
      if (!any) continue;  // outputs stay 0, gradients blocked
      for (int ch = 0; ch < c; ++ch) {
        const float* plane = xt.data() + static_cast<size_t>(ch) * h * w;
        int best = -1;
        float bv = 0.0f;
        for (int idx : window) {
          if (mask[idx] == 0.0f) continue;
          if (best < 0 || plane[idx] > bv) {
            best = idx;
            bv = plane[idx];
          }
        }
        out[(ch * ho + y) * wo + xo] = bv;
        argmax[static_cast<size_t>(ch * ho + y) * wo + xo] = ch * h * w + best;
      }
    }
  }
  Value v = tape.record(std::move(out), {x}, [x, argmax = std::move(argmax)](Tape& t, const Tensor& g) {
    if (!t.needs_grad(x)) return;
    Tensor& acc = t.grad_acc(x);
    for (size_t i = 0; i < argmax.size(); ++i)
      if (argmax[i] >= 0) acc[argmax[i]] += g[static_cast<int>(i)];
  });
  return {v, std::move(pooled_mask)};
}

// ---- fill-in front ends ----------------------------------------------------------

Tensor fill_zero(const SparseSample& s) {
  check_sample(s);
  Tensor out(s.values.shape());
  out.flat() = s.values.flat().cwiseProduct(s.mask.flat());
  return out;
}

Tensor fill_mean(const SparseSample& s, const Tensor& pixel_mean) {
  check_sample(s);
  require_shape(pixel_mean.size() == s.values.size(),
                "fill_mean: pixel mean size " + std::to_string(pixel_mean.size()) +
                    " does not match sample size " + std::to_string(s.values.size()));
  Tensor out(s.values.shape());
  for (int i = 0; i < out.size(); ++i)
    out[i] = s.mask[i] != 0.0f ? s.values[i] : pixel_mean[i];
  return out;
}

namespace {

// 1-d interpolation along one line of `n` strided entries. Fills `fill` (same
// stride) and returns the anchor count. Between anchors: linear
// interpolation; beyond the first/last anchor the line through the two
// nearest anchors is extended, so affine profiles are reconstructed exactly.
// One anchor: constant. No anchors: `fill` is left untouched.
int interp_line(const float* src, const float* mask, float* fill, int n, int stride) {
  std::vector<int> anchors;
  for (int x = 0; x < n; ++x)
    if (mask[static_cast<size_t>(x) * stride] != 0.0f) anchors.push_back(x);
  const auto src_at = [&](int x) { return src[static_cast<size_t>(x) * stride]; };
  if (anchors.empty()) return 0;
  if (anchors.size() == 1) {
    for (int x = 0; x < n; ++x) fill[static_cast<size_t>(x) * stride] = src_at(anchors[0]);
    return 1;
  }
  size_t seg = 0;
  for (int x = 0; x < n; ++x) {
    while (seg + 2 < anchors.size() && x > anchors[seg + 1]) ++seg;
    const int x0 = anchors[seg], x1 = anchors[seg + 1];
    const double v0 = src_at(x0), v1 = src_at(x1);
    fill[static_cast<size_t>(x) * stride] =
        static_cast<float>(v0 + (v1 - v0) * (static_cast<double>(x - x0) / (x1 - x0)));
  }
  return static_cast<int>(anchors.size());
}

}  // namespace

Tensor fill_interp(const SparseSample& s) {
  check_sample(s);
  require_shape(s.values.rank() == 2, "fill_interp expects a (H,W) sample, got " +
                                          shape_str(s.values.shape()));
  const int h = s.values.dim(0), w = s.values.dim(1);

  double image_sum = 0.0;
  long long image_cnt = 0;
  for (int i = 0; i < s.mask.size(); ++i)
    if (s.mask[i] != 0.0f) {
      image_sum += s.values[i];
      ++image_cnt;
    }
  const float image_mean =
      image_cnt > 0 ? static_cast<float>(image_sum / static_cast<double>(image_cnt)) : 0.0f;

  // Independent passes along rows and along columns, then a per-pixel merge
  // that prefers real interpolations (two or more anchors on the line) over
  // single-anchor constants.
  Tensor row_pass({h, w}), col_pass({h, w});
  std::vector<int> row_anchors(static_cast<size_t>(h)), col_anchors(static_cast<size_t>(w));
  for (int y = 0; y < h; ++y)
    row_anchors[static_cast<size_t>(y)] =
        interp_line(s.values.data() + static_cast<size_t>(y) * w,
                    s.mask.data() + static_cast<size_t>(y) * w,
                    row_pass.data() + static_cast<size_t>(y) * w, w, 1);
  for (int x = 0; x < w; ++x)
    col_anchors[static_cast<size_t>(x)] =
        interp_line(s.values.data() + x, s.mask.data() + x, col_pass.data() + x, h, w);

  Tensor out({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int i = y * w + x;
      if (s.mask[i] != 0.0f) {
        out[i] = s.values[i];  // observed values pass through untouched
        continue;
      }
      const int ra = row_anchors[static_cast<size_t>(y)], ca = col_anchors[static_cast<size_t>(x)];
      if (ra >= 2 && ca >= 2)
        out[i] = static_cast<float>(0.5 * (static_cast<double>(row_pass[i]) + col_pass[i]));
      else if (ra >= 2)
        out[i] = row_pass[i];
      else if (ca >= 2)
        out[i] = col_pass[i];
      else if (ra == 1 && ca == 1)
        out[i] = static_cast<float>(0.5 * (static_cast<double>(row_pass[i]) + col_pass[i]));
      else if (ra == 1)
        out[i] = row_pass[i];
      else if (ca == 1)
        out[i] = col_pass[i];
      else
        out[i] = image_mean;
    }
  return out;
}

}  // namespace ssub
