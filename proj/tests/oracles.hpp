// Reference implementations used to cross-check the library: deliberately
// written in the most direct way possible (triple loops, explicit dense
// solves) and kept independent of the code under test.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "ssub/tape.hpp"
#include "ssub/tensor.hpp"

namespace oracle {

// C = A(m,k) * B(k,n) with a float64 triple loop.
inline ssub::Tensor matmul(const ssub::Tensor& a, const ssub::Tensor& b) {
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  REQUIRE(b.dim(0) == k);
  ssub::Tensor c({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p)
        acc += static_cast<double>(a.at(i, p)) * static_cast<double>(b.at(p, j));
      c.at(i, j) = static_cast<float>(acc);
    }
  return c;
}

// Direct summation 2-d convolution; x (C,H,W), kernel (F,C,kh,kw). `pad` zero
// rows/cols on every side, unit stride.
inline ssub::Tensor conv2d(const ssub::Tensor& x, const ssub::Tensor& kernel, int pad) {
  const int cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int f = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  REQUIRE(kernel.dim(1) == cin);
  const int oh = h + 2 * pad - kh + 1, ow = w + 2 * pad - kw + 1;
  REQUIRE(oh > 0);
  REQUIRE(ow > 0);
  ssub::Tensor out({f, oh, ow});
  for (int g = 0; g < f; ++g)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) {
        double acc = 0.0;
        for (int c = 0; c < cin; ++c)
          for (int di = 0; di < kh; ++di)
            for (int dj = 0; dj < kw; ++dj) {
              const int si = i + di - pad, sj = j + dj - pad;
              if (si < 0 || si >= h || sj < 0 || sj >= w) continue;
              acc += static_cast<double>(x.flat()[(c * h + si) * w + sj]) *
                     static_cast<double>(kernel.flat()[((g * cin + c) * kh + di) * kw + dj]);
            }
        out.flat()[(g * oh + i) * ow + j] = static_cast<float>(acc);
      }
  return out;
}

// Ridge least squares on the observed rows only: drop every row p of W and
// entry p of (y - mu) with mask[p] = 0 and solve the reduced normal equations
// with Eigen's LDLT in float64.
inline ssub::Tensor masked_ridge_solve(const ssub::Tensor& w, const ssub::Tensor& mu,
                                       const ssub::Tensor& y, const ssub::Tensor& mask,
                                       double ridge) {
  const int dim = w.dim(0), d = w.dim(1);
  std::vector<int> rows;
  for (int p = 0; p < dim; ++p)
    if (mask[p] != 0.0f) rows.push_back(p);
  Eigen::MatrixXd wo(rows.size(), d);
  Eigen::VectorXd e(rows.size());
  for (size_t r = 0; r < rows.size(); ++r) {
    e[static_cast<Eigen::Index>(r)] =
        static_cast<double>(y[rows[r]]) - static_cast<double>(mu[rows[r]]);
    for (int j = 0; j < d; ++j)
      wo(static_cast<Eigen::Index>(r), j) = static_cast<double>(w.at(rows[r], j));
  }
  const Eigen::MatrixXd g =
      wo.transpose() * wo + ridge * Eigen::MatrixXd::Identity(d, d);
  const Eigen::VectorXd sol = g.ldlt().solve(wo.transpose() * e);
  ssub::Tensor out({d});
  for (int j = 0; j < d; ++j) out[j] = static_cast<float>(sol[j]);
  return out;
}

// Mean squared error over mask == 0 sites, float64 accumulation.
inline double missing_mse(const ssub::Tensor& pred, const ssub::Tensor& truth,
                          const ssub::Tensor& mask) {
  REQUIRE(pred.size() == truth.size());
  REQUIRE(pred.size() == mask.size());
  double acc = 0.0;
  int n = 0;
  for (int i = 0; i < pred.size(); ++i) {
    if (mask.flat()[i] != 0.0f) continue;
    const double d = static_cast<double>(pred.flat()[i]) - static_cast<double>(truth.flat()[i]);
    acc += d * d;
    ++n;
  }
  return n == 0 ? 0.0 : acc / n;
}

// ---- finite differences -----------------------------------------------------

// Central-difference gradient check of a scalar-valued tape program against
// the reverse pass, for every parameter handed in. `build` must construct the
// loss from the parameters' current values.
inline void check_gradients(std::vector<ssub::Parameter*> params,
                            const std::function<ssub::Value(ssub::Tape&)>& build,
                            double h = 1e-3, double tol = 2e-3) {
  // Analytic gradients.
  {
    ssub::Tape tape;
    ssub::Value loss = build(tape);
    tape.backward(loss);
  }
  const auto eval = [&]() {
    ssub::Tape tape;
    return static_cast<double>(build(tape).tensor().flat()[0]);
  };
  for (ssub::Parameter* p : params) {
    for (int i = 0; i < p->value.size(); ++i) {
      const float keep = p->value.flat()[i];
      p->value.flat()[i] = keep + static_cast<float>(h);
      const double up = eval();
      p->value.flat()[i] = keep - static_cast<float>(h);
      const double down = eval();
      p->value.flat()[i] = keep;
      const double fd = (up - down) / (2.0 * h);
      const double an = static_cast<double>(p->grad.flat()[i]);
      const double scale = std::max({1.0, std::abs(fd), std::abs(an)});
      INFO("param ", p->name, " entry ", i, " fd ", fd, " analytic ", an);
      CHECK(std::abs(fd - an) / scale < tol);
    }
    p->zero_grad();
  }
}

}  // namespace oracle
