#include "ssub/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <utility>

namespace ssub {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  // Runs on every elementwise op: build the message only on failure.
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

}  // namespace

// ---- elementwise -----------------------------------------------------------

Value add(Value a, Value b) {
  Tape& t = a.tape();
  require_same_shape(a.tensor(), b.tensor(), "add");
  Tensor out(a.shape());
  out.flat() = a.tensor().flat() + b.tensor().flat();
  return t.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.add_grad(a, g);
    t.add_grad(b, g);
  });
}

Value sub(Value a, Value b) {
  Tape& t = a.tape();
  require_same_shape(a.tensor(), b.tensor(), "sub");
  Tensor out(a.shape());
  out.flat() = a.tensor().flat() - b.tensor().flat();
  return t.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.add_grad(a, g);
    if (t.needs_grad(b)) t.grad_acc(b).flat() -= g.flat();
  });
}

Value mul(Value a, Value b) {
  Tape& t = a.tape();
  require_same_shape(a.tensor(), b.tensor(), "mul");
  Tensor out(a.shape());
  out.flat() = a.tensor().flat().cwiseProduct(b.tensor().flat());
  return t.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.needs_grad(a)) t.grad_acc(a).flat() += g.flat().cwiseProduct(t.value(b).flat());
    if (t.needs_grad(b)) t.grad_acc(b).flat() += g.flat().cwiseProduct(t.value(a).flat());
  });
}

Value add_scalar(Value a, float c) {
  Tape& t = a.tape();
  Tensor out(a.shape());
  out.flat() = a.tensor().flat().array() + c;
  return t.record(std::move(out), {a}, [a](Tape& t, const Tensor& g) { t.add_grad(a, g); });
}

Value scale(Value a, float c) {
  Tape& t = a.tape();
  Tensor out(a.shape());
  out.flat() = c * a.tensor().flat();
  return t.record(std::move(out), {a}, [a, c](Tape& t, const Tensor& g) {
    if (t.needs_grad(a)) t.grad_acc(a).flat() += c * g.flat();
  });
}

Value relu(Value a) {
  Tape& t = a.tape();
  Tensor out(a.shape());
  out.flat() = a.tensor().flat().cwiseMax(0.0f);
  return t.record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    if (!t.needs_grad(a)) return;
    Tensor& acc = t.grad_acc(a);
    const Tensor& x = t.value(a);
    for (int i = 0; i < x.size(); ++i)
      if (x[i] > 0.0f) acc[i] += g[i];
  });
}

Value exp_op(Value a) {
  Tape& t = a.tape();
  Tensor out(a.shape());
  out.flat() = a.tensor().flat().array().exp();
  Tensor saved = out;  // d exp(x)/dx = exp(x), reuse the forward result
  return t.record(std::move(out), {a}, [a, saved = std::move(saved)](Tape& t, const Tensor& g) {
    if (!t.needs_grad(a)) return;
    t.grad_acc(a).flat() += g.flat().cwiseProduct(saved.flat());
  });
}

Value log_op(Value a) {
  Tape& t = a.tape();
  const Tensor& x = a.tensor();
  for (int i = 0; i < x.size(); ++i)
    if (x[i] <= 0.0f) throw NumericError("log of non-positive value at flat index " + std::to_string(i));
  Tensor out(a.shape());
  out.flat() = x.flat().array().log();
  return t.record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    if (!t.needs_grad(a)) return;
    t.grad_acc(a).flat() += g.flat().cwiseQuotient(t.value(a).flat());
  });
}

Value square(Value a) {
  Tape& t = a.tape();
  Tensor out(a.shape());
  out.flat() = a.tensor().flat().cwiseProduct(a.tensor().flat());
  return t.record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    if (!t.needs_grad(a)) return;
    t.grad_acc(a).flat() += 2.0f * g.flat().cwiseProduct(t.value(a).flat());
  });
}

Value clamp(Value a, float lo, float hi) {
  require_shape(lo <= hi, "clamp: lo must not exceed hi");
  Tape& t = a.tape();
  Tensor out(a.shape());
  out.flat() = a.tensor().flat().cwiseMax(lo).cwiseMin(hi);
  return t.record(std::move(out), {a}, [a, lo, hi](Tape& t, const Tensor& g) {
    if (!t.needs_grad(a)) return;
    Tensor& acc = t.grad_acc(a);
    const Tensor& x = t.value(a);
    for (int i = 0; i < x.size(); ++i)
      if (x[i] >= lo && x[i] <= hi) acc[i] += g[i];
  });
}

// ---- reductions ------------------------------------------------------------

Value reduce_sum(Value a) {
  Tape& t = a.tape();
  const Tensor& x = a.tensor();
  double s = 0.0;
  for (int i = 0; i < x.size(); ++i) s += x[i];
  return t.record(Tensor::scalar(static_cast<float>(s)), {a}, [a](Tape& t, const Tensor& g) {
    if (!t.needs_grad(a)) return;
    t.grad_acc(a).flat().array() += g[0];
  });
}

Value reduce_mean(Value a) {
  return scale(reduce_sum(a), 1.0f / static_cast<float>(a.tensor().size()));
}

// ---- linear algebra --------------------------------------------------------

Value matmul(Value a, Value b) {
  Tape& t = a.tape();
  const Tensor& at = a.tensor();
  const Tensor& bt = b.tensor();
  require_shape(at.rank() == 2, "matmul: left operand must be rank 2, got " + shape_str(at.shape()));
  const int m = at.dim(0), k = at.dim(1);
  if (bt.rank() == 1) {
    require_shape(bt.dim(0) == k, "matmul: inner dimensions disagree, " + shape_str(at.shape()) +
                                      " x " + shape_str(bt.shape()));
    Tensor out({m});
    out.flat().noalias() = at.mat() * bt.flat();
    return t.record(std::move(out), {a, b}, [a, b, m, k](Tape& t, const Tensor& g) {
      if (t.needs_grad(a))
        t.grad_acc(a).mat().noalias() += g.flat() * t.value(b).flat().transpose();
      if (t.needs_grad(b))
        t.grad_acc(b).flat().noalias() += t.value(a).mat().transpose() * g.flat();
    });
  }
  require_shape(bt.rank() == 2 && bt.dim(0) == k,
                "matmul: inner dimensions disagree, " + shape_str(at.shape()) + " x " +
                    shape_str(bt.shape()));
  const int n = bt.dim(1);
  Tensor out({m, n});
  out.mat().noalias() = at.mat() * bt.mat();
  return t.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.needs_grad(a))
      t.grad_acc(a).mat().noalias() += g.mat() * t.value(b).mat().transpose();
    if (t.needs_grad(b))
      t.grad_acc(b).mat().noalias() += t.value(a).mat().transpose() * g.mat();
  });
}

Value transpose(Value a) {
  Tape& t = a.tape();
  const Tensor& at = a.tensor();
  require_shape(at.rank() == 2, "transpose requires rank 2, got " + shape_str(at.shape()));
  Tensor out({at.dim(1), at.dim(0)});
  out.mat() = at.mat().transpose();
  return t.record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    if (t.needs_grad(a)) t.grad_acc(a).mat() += g.mat().transpose();
  });
}

Value gather_rows(Value a, std::vector<int> rows) {
  Tape& t = a.tape();
  const Tensor& at = a.tensor();
  require_shape(at.rank() == 1 || at.rank() == 2,
                "gather_rows requires rank 1 or 2, got " + shape_str(at.shape()));
  const int n_in = at.dim(0);
  const int cols = at.rank() == 2 ? at.dim(1) : 1;
  for (int r : rows)
    if (r < 0 || r >= n_in)
      throw ShapeError("gather_rows: index " + std::to_string(r) + " out of range for " +
                       shape_str(at.shape()));
  const int n_out = static_cast<int>(rows.size());
  require_shape(n_out > 0, "gather_rows: empty index list");
  Shape out_shape = at.rank() == 2 ? Shape{n_out, cols} : Shape{n_out};
  Tensor out(out_shape);
  for (int i = 0; i < n_out; ++i)
    std::memcpy(out.data() + static_cast<size_t>(i) * cols,
                at.data() + static_cast<size_t>(rows[static_cast<size_t>(i)]) * cols,
                sizeof(float) * static_cast<size_t>(cols));
  return t.record(std::move(out), {a}, [a, rows = std::move(rows), cols](Tape& t, const Tensor& g) {
    if (!t.needs_grad(a)) return;
    Tensor& acc = t.grad_acc(a);
    for (size_t i = 0; i < rows.size(); ++i) {
      float* dst = acc.data() + static_cast<size_t>(rows[i]) * cols;
      const float* src = g.data() + i * cols;
      for (int c = 0; c < cols; ++c) dst[c] += src[c];
    }
  });
}

Value reshape(Value a, Shape shape) {
  Tape& t = a.tape();
  Tensor out = a.tensor().reshaped(shape);
  return t.record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    if (t.needs_grad(a)) t.grad_acc(a).flat() += g.flat();
  });
}

// ---- float64 Cholesky ------------------------------------------------------

Eigen::MatrixXd cholesky_lower(const Eigen::MatrixXd& a) {
  const Eigen::Index n = a.rows();
  if (a.cols() != n) throw ShapeError("cholesky_lower requires a square matrix");
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      double s = a(i, j);
      for (Eigen::Index k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      if (i == j) {
        if (!(s > 0.0) || !std::isfinite(s))
          throw NumericError("matrix is not positive definite: leading minor " +
                             std::to_string(i + 1) + " failed");
        l(i, i) = std::sqrt(s);
      } else {
        l(i, j) = s / l(j, j);
      }
    }
  }
  return l;
}

Eigen::VectorXd cholesky_solve(const Eigen::MatrixXd& l, Eigen::VectorXd b) {
  l.triangularView<Eigen::Lower>().solveInPlace(b);
  l.triangularView<Eigen::Lower>().transpose().solveInPlace(b);
  return b;
}

Eigen::MatrixXd cholesky_solve_mat(const Eigen::MatrixXd& l, Eigen::MatrixXd b) {
  l.triangularView<Eigen::Lower>().solveInPlace(b);
  l.triangularView<Eigen::Lower>().transpose().solveInPlace(b);
  return b;
}

// ---- SPD solves on the tape --------------------------------------------------

namespace {

Eigen::MatrixXd sym_double(const Tensor& a) {
  const int d = a.dim(0);
  Eigen::MatrixXd s(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      s(i, j) = 0.5 * (static_cast<double>(a.at(i, j)) + static_cast<double>(a.at(j, i)));
  return s;
}

void check_square(const Tensor& a, const char* op) {
  require_shape(a.rank() == 2 && a.dim(0) == a.dim(1),
                std::string(op) + " requires a square rank-2 matrix, got " + shape_str(a.shape()));
}

}  // namespace

Value solve_spd(Value a, Value b) {
  Tape& t = a.tape();
  const Tensor& at = a.tensor();
  const Tensor& bt = b.tensor();
  check_square(at, "solve_spd");
  const int d = at.dim(0);
  require_shape(bt.rank() == 1 && bt.dim(0) == d,
                "solve_spd: rhs shape " + shape_str(bt.shape()) + " does not match matrix " +
                    shape_str(at.shape()));
  Eigen::MatrixXd l = cholesky_lower(sym_double(at));
  Eigen::VectorXd x = cholesky_solve(l, bt.flat().cast<double>());
  Tensor out({d});
  out.flat() = x.cast<float>();
  auto fn = [a, b, d, l = std::move(l), x = std::move(x)](Tape& t, const Tensor& g) {
    Eigen::VectorXd s = cholesky_solve(l, g.flat().cast<double>());
    if (t.needs_grad(b)) t.grad_acc(b).flat() += s.cast<float>();
    if (t.needs_grad(a)) {
      Tensor& acc = t.grad_acc(a);
      Eigen::MatrixXd da = -0.5 * (s * x.transpose() + x * s.transpose());
      acc.mat() += da.cast<float>();
    }
  };
  return t.record(std::move(out), {a, b}, std::move(fn));
}

Value spd_logdet(Value a) {
  Tape& t = a.tape();
  const Tensor& at = a.tensor();
  check_square(at, "spd_logdet");
  const int d = at.dim(0);
  Eigen::MatrixXd l = cholesky_lower(sym_double(at));
  double ld = 0.0;
  for (int i = 0; i < d; ++i) ld += 2.0 * std::log(l(i, i));
  auto fn = [a, d, l = std::move(l)](Tape& t, const Tensor& g) {
    if (!t.needs_grad(a)) return;
    Eigen::MatrixXd sinv = cholesky_solve_mat(l, Eigen::MatrixXd::Identity(d, d));
    t.grad_acc(a).mat() += (static_cast<double>(g[0]) * sinv).cast<float>();
  };
  return t.record(Tensor::scalar(static_cast<float>(ld)), {a}, std::move(fn));
}

Value spd_trace_inverse(Value a) {
  Tape& t = a.tape();
  const Tensor& at = a.tensor();
  check_square(at, "spd_trace_inverse");
  const int d = at.dim(0);
  Eigen::MatrixXd l = cholesky_lower(sym_double(at));
  Eigen::MatrixXd sinv = cholesky_solve_mat(l, Eigen::MatrixXd::Identity(d, d));
  double tr = sinv.trace();
  auto fn = [a, sinv = std::move(sinv)](Tape& t, const Tensor& g) {
    if (!t.needs_grad(a)) return;
    Eigen::MatrixXd da = -static_cast<double>(g[0]) * (sinv * sinv);
    t.grad_acc(a).mat() += da.cast<float>();
  };
  return t.record(Tensor::scalar(static_cast<float>(tr)), {a}, std::move(fn));
}

// ---- convolution -----------------------------------------------------------

namespace {

struct ConvDims {
  int ci, hi, wi;  // input
  int co, kh, kw;  // kernel
  int ho, wo;      // output
  int ph, pw;      // top/left implicit zero padding
};

ConvDims conv_dims(const Shape& xs, const Shape& ks, Pad pad) {
  require_shape(xs.size() == 3, "conv2d input must be (C,H,W), got " + shape_str(xs));
  require_shape(ks.size() == 4, "conv2d kernel must be (Cout,Cin,Kh,Kw), got " + shape_str(ks));
  ConvDims d{};
  d.ci = xs[0];
  d.hi = xs[1];
  d.wi = xs[2];
  d.co = ks[0];
  d.kh = ks[2];
  d.kw = ks[3];
  require_shape(ks[1] == d.ci, "conv2d: kernel expects " + std::to_string(ks[1]) +
                                   " input channels, input has " + std::to_string(d.ci));
  if (pad == Pad::Same) {
    require_shape(d.kh % 2 == 1 && d.kw % 2 == 1, "same-padded conv2d requires odd kernel extents");
    d.ph = (d.kh - 1) / 2;
    d.pw = (d.kw - 1) / 2;
    d.ho = d.hi;
    d.wo = d.wi;
  } else {
    d.ph = d.pw = 0;
    d.ho = d.hi - d.kh + 1;
    d.wo = d.wi - d.kw + 1;
    require_shape(d.ho >= 1 && d.wo >= 1, "valid conv2d: kernel larger than input");
  }
  return d;
}

// col is (Ci*Kh*Kw, Ho*Wo): row (c,i,j) holds the input window value at tap
// (i,j) of channel c for every output pixel, zero outside the image.
void im2col(const float* x, const ConvDims& d, float* col) {
  const size_t plane_out = static_cast<size_t>(d.ho) * d.wo;
  for (int c = 0; c < d.ci; ++c) {
    const float* chan = x + static_cast<size_t>(c) * d.hi * d.wi;
    for (int i = 0; i < d.kh; ++i) {
      for (int j = 0; j < d.kw; ++j) {
        float* row = col + (static_cast<size_t>(c) * d.kh * d.kw + static_cast<size_t>(i) * d.kw + j) * plane_out;
        const int x0 = std::max(0, d.pw - j);
        const int x1 = std::min(d.wo, d.wi + d.pw - j);
        for (int y = 0; y < d.ho; ++y) {
          float* dst = row + static_cast<size_t>(y) * d.wo;
          const int sy = y + i - d.ph;
          if (sy < 0 || sy >= d.hi || x0 >= x1) {
            std::memset(dst, 0, sizeof(float) * static_cast<size_t>(d.wo));
            continue;
          }
          if (x0 > 0) std::memset(dst, 0, sizeof(float) * static_cast<size_t>(x0));
          std::memcpy(dst + x0, chan + static_cast<size_t>(sy) * d.wi + (x0 + j - d.pw),
                      sizeof(float) * static_cast<size_t>(x1 - x0));
          if (x1 < d.wo) std::memset(dst + x1, 0, sizeof(float) * static_cast<size_t>(d.wo - x1));
        }
      }
    }
  }
}

void col2im_add(const float* col, const ConvDims& d, float* dx) {
  const size_t plane_out = static_cast<size_t>(d.ho) * d.wo;
  for (int c = 0; c < d.ci; ++c) {
    float* chan = dx + static_cast<size_t>(c) * d.hi * d.wi;
    for (int i = 0; i < d.kh; ++i) {
      for (int j = 0; j < d.kw; ++j) {
        const float* row = col + (static_cast<size_t>(c) * d.kh * d.kw + static_cast<size_t>(i) * d.kw + j) * plane_out;
        const int x0 = std::max(0, d.pw - j);
        const int x1 = std::min(d.wo, d.wi + d.pw - j);
        if (x0 >= x1) continue;
        for (int y = 0; y < d.ho; ++y) {
          const int sy = y + i - d.ph;
          if (sy < 0 || sy >= d.hi) continue;
          const float* src = row + static_cast<size_t>(y) * d.wo + x0;
          float* dst = chan + static_cast<size_t>(sy) * d.wi + (x0 + j - d.pw);
          for (int k = 0; k < x1 - x0; ++k) dst[k] += src[k];
        }
      }
    }
  }
}

}  // namespace

Value conv2d(Value x, Value kernel, Pad pad) {
  Tape& t = x.tape();
  const Tensor& xt = x.tensor();
  const Tensor& kt = kernel.tensor();
  const ConvDims d = conv_dims(xt.shape(), kt.shape(), pad);
  const int krows = d.ci * d.kh * d.kw;
  Tensor col({krows, d.ho * d.wo});
  im2col(xt.data(), d, col.data());
  Tensor out({d.co, d.ho, d.wo});
  out.as_mat(d.co, d.ho * d.wo).noalias() = kt.as_mat(d.co, krows) * col.mat();
  auto fn = [x, kernel, d, krows, col = std::move(col)](Tape& t, const Tensor& g) {
    auto gm = g.as_mat(d.co, d.ho * d.wo);
    if (t.needs_grad(kernel)) {
      Tensor& kg = t.grad_acc(kernel);
      kg.as_mat(d.co, krows).noalias() += gm * col.mat().transpose();
    }
    if (t.needs_grad(x)) {
      Tensor dcol({krows, d.ho * d.wo});
      dcol.mat().noalias() = t.value(kernel).as_mat(d.co, krows).transpose() * gm;
      col2im_add(dcol.data(), d, t.grad_acc(x).data());
    }
  };
  return t.record(std::move(out), {x, kernel}, std::move(fn));
}

Value add_channel_bias(Value x, Value bias) {
  Tape& t = x.tape();
  const Tensor& xt = x.tensor();
  const Tensor& bt = bias.tensor();
  require_shape(xt.rank() == 3, "add_channel_bias input must be (C,H,W), got " + shape_str(xt.shape()));
  require_shape(bt.rank() == 1 && bt.dim(0) == xt.dim(0),
                "add_channel_bias: bias shape " + shape_str(bt.shape()) + " does not match " +
                    shape_str(xt.shape()));
  const int c = xt.dim(0), plane = xt.dim(1) * xt.dim(2);
  Tensor out(xt.shape());
  for (int ch = 0; ch < c; ++ch)
    out.as_mat(c, plane).row(ch) = xt.as_mat(c, plane).row(ch).array() + bt[ch];
  return t.record(std::move(out), {x, bias}, [x, bias, c, plane](Tape& t, const Tensor& g) {
    t.add_grad(x, g);
    if (t.needs_grad(bias)) {
      Tensor& acc = t.grad_acc(bias);
      for (int ch = 0; ch < c; ++ch)
        acc[ch] += static_cast<float>(g.as_mat(c, plane).row(ch).cast<double>().sum());
    }
  });
}

Value add_channel_bias_masked(Value x, Value bias, const Tensor& mask) {
  Tape& t = x.tape();
  const Tensor& xt = x.tensor();
  const Tensor& bt = bias.tensor();
  require_shape(xt.rank() == 3, "add_channel_bias_masked input must be (C,H,W)");
  require_shape(bt.rank() == 1 && bt.dim(0) == xt.dim(0), "add_channel_bias_masked: bias mismatch");
  require_shape(mask.rank() == 2 && mask.dim(0) == xt.dim(1) && mask.dim(1) == xt.dim(2),
                "add_channel_bias_masked: mask shape " + shape_str(mask.shape()) +
                    " does not match " + shape_str(xt.shape()));
  const int c = xt.dim(0), plane = mask.size();
  Tensor out(xt.shape());
  for (int ch = 0; ch < c; ++ch) {
    const float* src = xt.data() + static_cast<size_t>(ch) * plane;
    float* dst = out.data() + static_cast<size_t>(ch) * plane;
    for (int p = 0; p < plane; ++p) dst[p] = src[p] + (mask[p] != 0.0f ? bt[ch] : 0.0f);
  }
  return t.record(std::move(out), {x, bias}, [x, bias, mask, c, plane](Tape& t, const Tensor& g) {
    t.add_grad(x, g);
    if (t.needs_grad(bias)) {
      Tensor& acc = t.grad_acc(bias);
      for (int ch = 0; ch < c; ++ch) {
        double s = 0.0;
        const float* gp = g.data() + static_cast<size_t>(ch) * plane;
        for (int p = 0; p < plane; ++p)
          if (mask[p] != 0.0f) s += gp[p];
        acc[ch] += static_cast<float>(s);
      }
    }
  });
}

Value mul_spatial(Value x, const Tensor& weights) {
  Tape& t = x.tape();
  const Tensor& xt = x.tensor();
  require_shape(xt.rank() == 3, "mul_spatial input must be (C,H,W), got " + shape_str(xt.shape()));
  require_shape(weights.rank() == 2 && weights.dim(0) == xt.dim(1) && weights.dim(1) == xt.dim(2),
                "mul_spatial: weight shape " + shape_str(weights.shape()) + " does not match " +
                    shape_str(xt.shape()));
  const int c = xt.dim(0), plane = weights.size();
  Tensor out(xt.shape());
  for (int ch = 0; ch < c; ++ch)
    out.as_mat(c, plane).row(ch) = xt.as_mat(c, plane).row(ch).cwiseProduct(weights.flat().transpose());
  return t.record(std::move(out), {x}, [x, weights, c, plane](Tape& t, const Tensor& g) {
    if (!t.needs_grad(x)) return;
    Tensor& acc = t.grad_acc(x);
    for (int ch = 0; ch < c; ++ch)
      acc.as_mat(c, plane).row(ch) += g.as_mat(c, plane).row(ch).cwiseProduct(weights.flat().transpose());
  });
}

Value maxpool2d(Value x) {
  Tape& t = x.tape();
  const Tensor& xt = x.tensor();
  require_shape(xt.rank() == 3, "maxpool2d input must be (C,H,W), got " + shape_str(xt.shape()));
  const int c = xt.dim(0), h = xt.dim(1), w = xt.dim(2);
  require_shape(h % 2 == 0 && w % 2 == 0, "maxpool2d requires even spatial extents, got " +
                                              shape_str(xt.shape()));
  const int ho = h / 2, wo = w / 2;
  Tensor out({c, ho, wo});
  std::vector<int> argmax(static_cast<size_t>(c) * ho * wo);
  for (int ch = 0; ch < c; ++ch) {
    const float* plane = xt.data() + static_cast<size_t>(ch) * h * w;
    for (int y = 0; y < ho; ++y) {
      for (int xo = 0; xo < wo; ++xo) {
        int best = (2 * y) * w + 2 * xo;
        float bv = plane[best];
        const int cand[3] = {(2 * y) * w + 2 * xo + 1, (2 * y + 1) * w + 2 * xo,
                             (2 * y + 1) * w + 2 * xo + 1};
        for (int idx : cand)
          if (plane[idx] > bv) {
            bv = plane[idx];
            best = idx;
          }
        out[(ch * ho + y) * wo + xo] = bv;
        argmax[static_cast<size_t>(ch * ho + y) * wo + xo] = ch * h * w + best;
      }
    }
  }
  return t.record(std::move(out), {x}, [x, argmax = std::move(argmax)](Tape& t, const Tensor& g) {
    if (!t.needs_grad(x)) return;
    Tensor& acc = t.grad_acc(x);
    for (size_t i = 0; i < argmax.size(); ++i) acc[argmax[i]] += g[static_cast<int>(i)];
  });
}

Value upsample2x(Value x) {
  Tape& t = x.tape();
  const Tensor& xt = x.tensor();
  require_shape(xt.rank() == 3, "upsample2x input must be (C,H,W), got " + shape_str(xt.shape()));
  const int c = xt.dim(0), h = xt.dim(1), w = xt.dim(2);
  Tensor out({c, 2 * h, 2 * w});
  for (int ch = 0; ch < c; ++ch) {
    const float* src = xt.data() + static_cast<size_t>(ch) * h * w;
    float* dst = out.data() + static_cast<size_t>(ch) * 4 * h * w;
    for (int y = 0; y < h; ++y) {
      for (int xi = 0; xi < w; ++xi) {
        const float v = src[y * w + xi];
        dst[(2 * y) * 2 * w + 2 * xi] = v;
        dst[(2 * y) * 2 * w + 2 * xi + 1] = v;
        dst[(2 * y + 1) * 2 * w + 2 * xi] = v;
        dst[(2 * y + 1) * 2 * w + 2 * xi + 1] = v;
      }
    }
  }
  return t.record(std::move(out), {x}, [x, c, h, w](Tape& t, const Tensor& g) {
    if (!t.needs_grad(x)) return;
    Tensor& acc = t.grad_acc(x);
    for (int ch = 0; ch < c; ++ch) {
      const float* gp = g.data() + static_cast<size_t>(ch) * 4 * h * w;
      float* dst = acc.data() + static_cast<size_t>(ch) * h * w;
      for (int y = 0; y < h; ++y)
        for (int xi = 0; xi < w; ++xi)
          dst[y * w + xi] += gp[(2 * y) * 2 * w + 2 * xi] + gp[(2 * y) * 2 * w + 2 * xi + 1] +
                             gp[(2 * y + 1) * 2 * w + 2 * xi] + gp[(2 * y + 1) * 2 * w + 2 * xi + 1];
    }
  });
}

Value concat_channels(Value a, Value b) {
  Tape& t = a.tape();
  const Tensor& at = a.tensor();
  const Tensor& bt = b.tensor();
  require_shape(at.rank() == 3 && bt.rank() == 3 && at.dim(1) == bt.dim(1) && at.dim(2) == bt.dim(2),
                "concat_channels: incompatible shapes " + shape_str(at.shape()) + " and " +
                    shape_str(bt.shape()));
  const int ca = at.dim(0), cb = bt.dim(0), plane = at.dim(1) * at.dim(2);
  Tensor out({ca + cb, at.dim(1), at.dim(2)});
  std::memcpy(out.data(), at.data(), sizeof(float) * static_cast<size_t>(at.size()));
  std::memcpy(out.data() + at.size(), bt.data(), sizeof(float) * static_cast<size_t>(bt.size()));
  return t.record(std::move(out), {a, b}, [a, b, ca, cb, plane](Tape& t, const Tensor& g) {
    if (t.needs_grad(a)) {
      Tensor& acc = t.grad_acc(a);
      acc.flat() += Eigen::Map<const Eigen::VectorXf>(g.data(), ca * plane);
    }
    if (t.needs_grad(b)) {
      Tensor& acc = t.grad_acc(b);
      acc.flat() += Eigen::Map<const Eigen::VectorXf>(g.data() + ca * plane, cb * plane);
    }
  });
}

Value pad2d(Value x, int bottom, int right) {
  Tape& t = x.tape();
  const Tensor& xt = x.tensor();
  require_shape(xt.rank() == 3, "pad2d input must be (C,H,W), got " + shape_str(xt.shape()));
  require_shape(bottom >= 0 && right >= 0, "pad2d requires non-negative padding");
  const int c = xt.dim(0), h = xt.dim(1), w = xt.dim(2);
  const int ho = h + bottom, wo = w + right;
  Tensor out({c, ho, wo});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      std::memcpy(out.data() + (static_cast<size_t>(ch) * ho + y) * wo,
                  xt.data() + (static_cast<size_t>(ch) * h + y) * w, sizeof(float) * static_cast<size_t>(w));
  return t.record(std::move(out), {x}, [x, c, h, w, ho, wo](Tape& t, const Tensor& g) {
    if (!t.needs_grad(x)) return;
    Tensor& acc = t.grad_acc(x);
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y) {
        const float* src = g.data() + (static_cast<size_t>(ch) * ho + y) * wo;
        float* dst = acc.data() + (static_cast<size_t>(ch) * h + y) * w;
        for (int xi = 0; xi < w; ++xi) dst[xi] += src[xi];
      }
  });
}

Value crop2d(Value x, int h, int w) {
  Tape& t = x.tape();
  const Tensor& xt = x.tensor();
  require_shape(xt.rank() == 3, "crop2d input must be (C,H,W), got " + shape_str(xt.shape()));
  const int c = xt.dim(0), hi = xt.dim(1), wi = xt.dim(2);
  require_shape(h >= 1 && w >= 1 && h <= hi && w <= wi,
                "crop2d: window " + std::to_string(h) + "x" + std::to_string(w) +
                    " does not fit in " + shape_str(xt.shape()));
  Tensor out({c, h, w});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      std::memcpy(out.data() + (static_cast<size_t>(ch) * h + y) * w,
                  xt.data() + (static_cast<size_t>(ch) * hi + y) * wi, sizeof(float) * static_cast<size_t>(w));
  return t.record(std::move(out), {x}, [x, c, h, w, hi, wi](Tape& t, const Tensor& g) {
    if (!t.needs_grad(x)) return;
    Tensor& acc = t.grad_acc(x);
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y) {
        const float* src = g.data() + (static_cast<size_t>(ch) * h + y) * w;
        float* dst = acc.data() + (static_cast<size_t>(ch) * hi + y) * wi;
        for (int xi = 0; xi < w; ++xi) dst[xi] += src[xi];
      }
  });
}

// ---- stochastic ------------------------------------------------------------

Value gaussian_sample(Value mu, Value logvar, Tensor eps) {
  Tape& t = mu.tape();
  require_same_shape(mu.tensor(), logvar.tensor(), "gaussian_sample");
  require_same_shape(mu.tensor(), eps, "gaussian_sample(eps)");
  Tensor out(mu.shape());
  out.flat() = mu.tensor().flat().array() +
               (0.5f * logvar.tensor().flat().array()).exp() * eps.flat().array();
  return t.record(std::move(out), {mu, logvar},
                  [mu, logvar, eps = std::move(eps)](Tape& t, const Tensor& g) {
                    t.add_grad(mu, g);
                    if (t.needs_grad(logvar)) {
                      Tensor& acc = t.grad_acc(logvar);
                      acc.flat().array() += g.flat().array() * eps.flat().array() * 0.5f *
                                            (0.5f * t.value(logvar).flat().array()).exp();
                    }
                  });
}

Value gaussian_sample(Value mu, Value logvar, SeededRng& rng) {
  return gaussian_sample(mu, logvar, rng.gaussian_tensor(mu.tensor().shape()));
}

}  // namespace ssub
