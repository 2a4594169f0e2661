#include "ssub/linear.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "ssub/ops.hpp"

namespace ssub {

void LinearModel::validate() const {
  require_shape(weight.rank() == 2, "linear model weight must be rank 2");
  require_shape(mean.rank() == 1 && mean.dim(0) == weight.dim(0),
                "linear model mean must match weight rows");
  if (!(sigma2 > 0.0f)) throw ShapeError("linear model sigma2 must be positive");
}

LinearModel pca_init(const Dataset& data, int code_dim) {
  data.validate();
  const int n = data.count();
  if (n < 2) throw DataError("pca_init needs at least two images");
  const int d = data.height * data.width;
  if (code_dim < 1 || code_dim > d)
    throw DataError("pca_init code dimension must lie in [1, " + std::to_string(d) + "]");

  const Tensor pm = observed_pixel_mean(data);
  Eigen::MatrixXd x(n, d);
  for (int i = 0; i < n; ++i) {
    const Tensor& v = data.values[static_cast<size_t>(i)];
    const Tensor& m = data.masks[static_cast<size_t>(i)];
    for (int p = 0; p < d; ++p)
      x(i, p) = m[p] != 0.0f ? static_cast<double>(v[p]) : static_cast<double>(pm[p]);
  }
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericError("pca_init eigendecomposition failed");
  const Eigen::VectorXd& evals = eig.eigenvalues();  // ascending

  double noise = 0.0;
  const int discarded = d - code_dim;
  if (discarded > 0) {
    for (int i = 0; i < discarded; ++i) noise += std::max(0.0, evals(i));
    noise /= discarded;
  } else {
    noise = 1e-2;
  }
  noise = std::max(noise, 1e-6);

  LinearModel model;
  model.weight = Tensor({d, code_dim});
  model.mean = Tensor({d});
  for (int p = 0; p < d; ++p) model.mean[p] = static_cast<float>(mean(p));
  for (int j = 0; j < code_dim; ++j) {
    const int src = d - 1 - j;  // largest eigenvalues first
    const double scale = std::sqrt(std::max(evals(src) - noise, 1e-8));
    for (int p = 0; p < d; ++p)
      model.weight.at(p, j) = static_cast<float>(scale * eig.eigenvectors()(p, src));
  }
  model.sigma2 = static_cast<float>(noise);
  return model;
}

LinearPosterior linear_posterior(const LinearModel& model, const SparseSample& s, double ridge) {
  model.validate();
  check_sample(s);
  require_shape(s.values.size() == model.dim(), "sample size does not match the linear model");
  const int code = model.code();
  LinearPosterior post;
  post.mean = Tensor({code});
  post.cov = Tensor({code, code});
  NormalEq eq = assemble_normal_eq(model.weight, model.mean, s.values, s.mask, ridge);
  if (eq.obs.empty()) {
    // Nothing observed: fall back to the prior N(0, I).
    post.cov = Tensor::identity(code);
    return post;
  }
  const Eigen::MatrixXd l = cholesky_lower(eq.gram);
  const Eigen::VectorXd m = cholesky_solve(l, eq.rhs);
  const Eigen::MatrixXd ginv = cholesky_solve_mat(l, Eigen::MatrixXd::Identity(code, code));
  post.mean.flat() = m.cast<float>();
  post.cov.mat() = (static_cast<double>(model.sigma2) * ginv).cast<float>();
  return post;
}

Tensor impute_linear(const LinearModel& model, const SparseSample& s) {
  model.validate();
  check_sample(s);
  require_shape(s.values.size() == model.dim(), "sample size does not match the linear model");
  const int dim = model.dim(), code = model.code();
  // Code estimate regularized by the noise variance itself.
  NormalEq eq = assemble_normal_eq(model.weight, model.mean, s.values, s.mask,
                                   static_cast<double>(model.sigma2));
  Eigen::VectorXd r = Eigen::VectorXd::Zero(code);
  if (!eq.obs.empty()) r = cholesky_solve(cholesky_lower(eq.gram), eq.rhs);
  Tensor out(s.values.shape());
  for (int p = 0; p < dim; ++p) {
    double acc = static_cast<double>(model.mean[p]);
    for (int j = 0; j < code; ++j) acc += static_cast<double>(model.weight.at(p, j)) * r(j);
    out[p] = static_cast<float>(acc);
  }
  return out;
}

// ---- SGD fitting ----------------------------------------------------------------

LinearFitReport fit_sgd(LinearModel& model, const Dataset& train, const LinearFitOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  model.validate();
  train.validate();
  if (train.count() == 0) throw DataError("empty training set");
  if (opt.epochs < 1 || opt.batch_size < 1) throw DataError("epochs and batch size must be positive");
  const int dim = model.dim(), code = model.code();
  if (dim != train.height * train.width)
    throw ShapeError("linear model dimension does not match the dataset");

  Parameter w("linear.weight", model.weight);
  Parameter mu("linear.mean", model.mean);
  Adam adam({&w, &mu}, {opt.lr, 0.9f, 0.999f, 1e-8f});
  SeededRng shuffle_rng = SeededRng(opt.seed).fork(1);
  const float s2 = model.sigma2;
  const float kl_const = -static_cast<float>(code) * (1.0f + std::log(s2));

  Tensor ridge_eye({code, code});
  for (int i = 0; i < code; ++i) ridge_eye.at(i, i) = static_cast<float>(opt.ridge);

  LinearFitReport report;
  std::vector<Tensor> last_good = {w.value, mu.value};
  const int n = train.count();
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::vector<int> order = shuffle_rng.permutation(n);
    double epoch_sum = 0.0;
    bool bad = false;
    for (int start = 0; start < n && !bad; start += opt.batch_size) {
      const int stop = std::min(n, start + opt.batch_size);
      adam.zero_grad();
      int used = 0;
      for (int i = start; i < stop; ++i) {
        const SparseSample s = train.sample(order[static_cast<size_t>(i)]);
        const std::vector<int> rows = observed_indices(s.mask);
        if (rows.empty()) continue;  // no gradient information in an empty sample
        Tape tape;
        Value wv = tape.param(w);
        Value muv = tape.param(mu);
        Value wo = gather_rows(wv, rows);
        Value muo = gather_rows(muv, rows);
        Tensor yo_t({static_cast<int>(rows.size())});
        for (size_t k = 0; k < rows.size(); ++k) yo_t[static_cast<int>(k)] = s.values[rows[k]];
        Value yo = tape.constant(std::move(yo_t));
        Value wot = transpose(wo);
        Value gram = add(matmul(wot, wo), tape.constant(ridge_eye));
        Value m = solve_spd(gram, matmul(wot, sub(yo, muo)));
        Value pred = add(matmul(wo, m), muo);
        Value recon = scale(reduce_sum(square(sub(yo, pred))), 1.0f / s2);
        Value klsum = add(add(scale(spd_trace_inverse(gram), s2), reduce_sum(square(m))),
                          spd_logdet(gram));
        Value kl = scale(add_scalar(klsum, kl_const), 0.5f);
        Value loss = add(recon, kl);
        const double lv = loss.tensor()[0];
        if (!std::isfinite(lv)) {
          bad = true;
          break;
        }
        tape.backward(loss);
        epoch_sum += lv;
        ++used;
      }
      if (bad || used == 0) {
        if (bad) break;
        continue;
      }
      const float inv = 1.0f / static_cast<float>(used);
      w.grad.flat() *= inv;
      mu.grad.flat() *= inv;
      adam.step();
    }
    if (bad) {
      report.diverged = true;
      w.value = last_good[0];
      mu.value = last_good[1];
      break;
    }
    report.loss.push_back(epoch_sum / n);
    last_good = {w.value, mu.value};
  }
  model.weight = w.value;
  model.mean = mu.value;
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

// ---- EM fitting ------------------------------------------------------------------

double linear_loglik(const LinearModel& model, const Dataset& data) {
  model.validate();
  const int dim = model.dim(), code = model.code();
  const double s2 = model.sigma2;
  const Eigen::MatrixXd w = model.weight.mat().cast<double>();
  const Eigen::VectorXd mu = model.mean.flat().cast<double>();
  double total = 0.0;
  for (int i = 0; i < data.count(); ++i) {
    const Tensor& vals = data.values[static_cast<size_t>(i)];
    const Tensor& mask = data.masks[static_cast<size_t>(i)];
    std::vector<int> rows = observed_indices(mask);
    const int n = static_cast<int>(rows.size());
    if (n == 0) continue;
    Eigen::MatrixXd wo(n, code);
    Eigen::VectorXd e(n);
    for (int r = 0; r < n; ++r) {
      wo.row(r) = w.row(rows[static_cast<size_t>(r)]);
      e(r) = static_cast<double>(vals[rows[static_cast<size_t>(r)]]) - mu(rows[static_cast<size_t>(r)]);
    }
    Eigen::MatrixXd g = wo.transpose() * wo;
    g.diagonal().array() += s2;
    const Eigen::MatrixXd l = cholesky_lower(g);
    double logdet_g = 0.0;
    for (int j = 0; j < code; ++j) logdet_g += 2.0 * std::log(l(j, j));
    const Eigen::VectorXd wte = wo.transpose() * e;
    const Eigen::VectorXd ginv_wte = cholesky_solve(l, wte);
    const double quad = (e.squaredNorm() - wte.dot(ginv_wte)) / s2;
    const double logdet_s = (n - code) * std::log(s2) + logdet_g;
    total += -0.5 * (n * std::log(2.0 * M_PI) + logdet_s + quad);
  }
  (void)dim;
  return total;
}

EmReport fit_em(LinearModel& model, const Dataset& train, const EmOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  model.validate();
  train.validate();
  if (train.count() == 0) throw DataError("empty training set");
  if (opt.iterations < 1) throw DataError("fit_em needs at least one iteration");
  const int dim = model.dim(), code = model.code(), n = train.count();
  if (dim != train.height * train.width)
    throw ShapeError("linear model dimension does not match the dataset");

  std::vector<std::vector<int>> obs(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    obs[static_cast<size_t>(i)] = observed_indices(train.masks[static_cast<size_t>(i)]);

  Eigen::MatrixXd w = model.weight.mat().cast<double>();
  Eigen::VectorXd mu = model.mean.flat().cast<double>();
  double s2 = model.sigma2;

  EmReport report;
  const int a = code + 1;  // augmented code [z; 1]
  std::vector<Eigen::MatrixXd> stats(static_cast<size_t>(dim));
  std::vector<Eigen::VectorXd> rhs(static_cast<size_t>(dim));
  std::vector<Eigen::VectorXd> post_mean(static_cast<size_t>(n));
  std::vector<Eigen::MatrixXd> post_cov(static_cast<size_t>(n));

  for (int iter = 0; iter < opt.iterations; ++iter) {
    for (int p = 0; p < dim; ++p) {
      stats[static_cast<size_t>(p)] = Eigen::MatrixXd::Zero(a, a);
      rhs[static_cast<size_t>(p)] = Eigen::VectorXd::Zero(a);
    }
    // E-step: posterior moments per sample, accumulated into per-pixel
    // normal equations over the augmented code.
    for (int i = 0; i < n; ++i) {
      const std::vector<int>& rows = obs[static_cast<size_t>(i)];
      const Tensor& vals = train.values[static_cast<size_t>(i)];
      const int no = static_cast<int>(rows.size());
      Eigen::VectorXd m = Eigen::VectorXd::Zero(code);
      Eigen::MatrixXd c = Eigen::MatrixXd::Identity(code, code);
      if (no > 0) {
        Eigen::MatrixXd wo(no, code);
        Eigen::VectorXd e(no);
        for (int r = 0; r < no; ++r) {
          wo.row(r) = w.row(rows[static_cast<size_t>(r)]);
          e(r) = static_cast<double>(vals[rows[static_cast<size_t>(r)]]) - mu(rows[static_cast<size_t>(r)]);
        }
        Eigen::MatrixXd g = wo.transpose() * wo;
        g.diagonal().array() += s2;
        const Eigen::MatrixXd l = cholesky_lower(g);
        m = cholesky_solve(l, wo.transpose() * e);
        c = s2 * cholesky_solve_mat(l, Eigen::MatrixXd::Identity(code, code));
      }
      post_mean[static_cast<size_t>(i)] = m;
      post_cov[static_cast<size_t>(i)] = c;
      Eigen::MatrixXd ezz(a, a);
      ezz.topLeftCorner(code, code) = c + m * m.transpose();
      ezz.topRightCorner(code, 1) = m;
      ezz.bottomLeftCorner(1, code) = m.transpose();
      ezz(code, code) = 1.0;
      for (int r = 0; r < no; ++r) {
        const int p = rows[static_cast<size_t>(r)];
        stats[static_cast<size_t>(p)] += ezz;
        rhs[static_cast<size_t>(p)].head(code) += static_cast<double>(vals[p]) * m;
        rhs[static_cast<size_t>(p)](code) += static_cast<double>(vals[p]);
      }
    }
    // M-step: per-pixel augmented regression [w_p; mu_p].
    for (int p = 0; p < dim; ++p) {
      Eigen::MatrixXd& s = stats[static_cast<size_t>(p)];
      if (s(code, code) < 0.5) continue;  // pixel never observed: keep previous row
      const double reg = 1e-10 * (1.0 + s.trace() / a);
      s.diagonal().array() += reg;
      const Eigen::VectorXd sol = cholesky_solve(cholesky_lower(s), rhs[static_cast<size_t>(p)]);
      w.row(p) = sol.head(code).transpose();
      mu(p) = sol(code);
    }
    // Noise update with the new rows and the posterior from the E-step.
    double noise_sum = 0.0;
    long long noise_cnt = 0;
    for (int i = 0; i < n; ++i) {
      const std::vector<int>& rows = obs[static_cast<size_t>(i)];
      const Tensor& vals = train.values[static_cast<size_t>(i)];
      const Eigen::VectorXd& m = post_mean[static_cast<size_t>(i)];
      const Eigen::MatrixXd& c = post_cov[static_cast<size_t>(i)];
      for (int p : rows) {
        const Eigen::VectorXd wp = w.row(p).transpose();
        const double resid = static_cast<double>(vals[p]) - wp.dot(m) - mu(p);
        noise_sum += resid * resid + wp.dot(c * wp);
        ++noise_cnt;
      }
    }
    if (noise_cnt > 0) s2 = std::max(noise_sum / static_cast<double>(noise_cnt), opt.sigma2_floor);

    model.weight.mat() = w.cast<float>();
    model.mean.flat() = mu.cast<float>();
    model.sigma2 = static_cast<float>(s2);
    report.loglik.push_back(linear_loglik(model, train));
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace ssub
