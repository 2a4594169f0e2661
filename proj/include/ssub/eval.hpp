#pragma once

#include <vector>

#include "ssub/vae.hpp"

namespace ssub {

// Conditional-mean imputation: the average of `k_samples` decoded posterior
// draws; k_samples = 0 decodes the posterior mean instead (deterministic,
// needs no rng).
Tensor impute_conditional_mean(SubspaceModel& model, const SparseSample& s, int k_samples,
                               SeededRng* rng);

// Independent imputations from the posterior; with `pixel_noise`, decoded
// images additionally receive observation noise N(0, sigma2) per pixel.
std::vector<Tensor> impute_samples(SubspaceModel& model, const SparseSample& s, int n_draws,
                                   bool pixel_noise, SeededRng& rng);

// Copies observed pixels over an imputed image (for rendering).
Tensor splice_observed(const Tensor& imputed, const SparseSample& s);

// Mean squared error over missing pixels only (float64 accumulation);
// returns 0 for a fully observed sample.
double missing_pixel_mse(const Tensor& imputed, const Tensor& truth, const Tensor& mask);

}  // namespace ssub
