#pragma once

#include <vector>

#include "ssub/data.hpp"

namespace ssub {

// Linear-subspace observation model y = W z + mu + noise with z ~ N(0, I)
// and isotropic noise of variance sigma2. The probabilistic counterpart of
// PCA, fitted here either by gradient descent on the masked variational
// objective or by expectation-maximization on the observed entries.
struct LinearModel {
  Tensor weight;  // (D,d)
  Tensor mean;    // (D)
  float sigma2 = 0.1f;

  int dim() const { return weight.dim(0); }
  int code() const { return weight.dim(1); }
  void validate() const;
};

// Spectral initialization from mean-filled data: columns are the top
// eigenvectors of the sample covariance scaled by sqrt(max(lambda - s2, eps))
// where s2 estimates the noise floor from the discarded spectrum.
LinearModel pca_init(const Dataset& data, int code_dim);

// Posterior over the code given the observed pixels of one sample:
//   mean = G^-1 Wo^T (y - mu)_o,  cov = sigma2 * G^-1,  G = Wo^T Wo + ridge I.
// Assembled with the same order-invariant float64 summation as the sparse
// fully connected layer, so the two agree bit for bit on shared inputs.
struct LinearPosterior {
  Tensor mean;  // (d)
  Tensor cov;   // (d,d)
};

LinearPosterior linear_posterior(const LinearModel& model, const SparseSample& s,
                                 double ridge = 1e-5);

// Conditional-mean imputation:
//   yhat = W (Wo^T Wo + sigma2 I)^-1 Wo^T (y - mu)_o + mu.
// With no observations this degrades to the model mean.
Tensor impute_linear(const LinearModel& model, const SparseSample& s);

// ---- fitting -----------------------------------------------------------------

struct LinearFitOptions {
  int epochs = 20;
  int batch_size = 32;
  float lr = 1e-3f;
  uint64_t seed = 1;
  double ridge = 1e-5;
};

struct LinearFitReport {
  std::vector<double> loss;  // mean per-sample objective per epoch
  bool diverged = false;
  double seconds = 0.0;
};

// Adam on the masked variational objective with the closed-form posterior
// substituted (mean as the single sample):
//   (1/sigma2) ||(y - W m - mu)_o||^2
//   + 0.5 (sigma2 tr G^-1 + m^T m - d - d ln sigma2 + log det G).
// sigma2 stays fixed; W and mu train.
LinearFitReport fit_sgd(LinearModel& model, const Dataset& train, const LinearFitOptions& opt);

struct EmOptions {
  int iterations = 30;
  double sigma2_floor = 1e-6;
};

struct EmReport {
  std::vector<double> loglik;  // observed-data log-likelihood after each update
  double seconds = 0.0;
};

// Exact EM for the masked linear-Gaussian model; updates W, mu and sigma2.
// The reported log-likelihood is monotonically non-decreasing.
EmReport fit_em(LinearModel& model, const Dataset& train, const EmOptions& opt);

// Observed-data log-likelihood, summed over the dataset (float64 throughout).
double linear_loglik(const LinearModel& model, const Dataset& data);

}  // namespace ssub
