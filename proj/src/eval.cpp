#include "ssub/eval.hpp"

#include <cmath>

namespace ssub {

namespace {

Tensor sample_latent(const PosteriorStats& post, SeededRng& rng) {
  Tensor z(post.mu.shape());
  for (int i = 0; i < z.size(); ++i)
    z[i] = post.mu[i] + std::exp(0.5f * post.logvar[i]) * rng.gaussian_f();
  return z;
}

}  // namespace

Tensor impute_conditional_mean(SubspaceModel& model, const SparseSample& s, int k_samples,
                               SeededRng* rng) {
  if (k_samples < 0) throw ShapeError("impute_conditional_mean needs k_samples >= 0");
  const PosteriorStats post = model.encode(s);
  if (k_samples == 0) return model.decode(post.mu);
  if (!rng) throw ShapeError("impute_conditional_mean needs an rng when k_samples > 0");
  Tensor acc({model.cfg.height, model.cfg.width});
  for (int k = 0; k < k_samples; ++k) {
    const Tensor img = model.decode(sample_latent(post, *rng));
    acc.flat() += img.flat() / static_cast<float>(k_samples);
  }
  return acc;
}

std::vector<Tensor> impute_samples(SubspaceModel& model, const SparseSample& s, int n_draws,
                                   bool pixel_noise, SeededRng& rng) {
  if (n_draws < 1) throw ShapeError("impute_samples needs n_draws >= 1");
  const PosteriorStats post = model.encode(s);
  const float noise_std = std::sqrt(model.cfg.sigma2);
  std::vector<Tensor> out;
  out.reserve(static_cast<size_t>(n_draws));
  for (int k = 0; k < n_draws; ++k) {
    Tensor img = model.decode(sample_latent(post, rng));
    if (pixel_noise)
      for (int i = 0; i < img.size(); ++i) img[i] += noise_std * rng.gaussian_f();
    out.push_back(std::move(img));
  }
  return out;
}

Tensor splice_observed(const Tensor& imputed, const SparseSample& s) {
  check_sample(s);
  require_shape(imputed.same_shape(s.values), "splice_observed shape mismatch");
  Tensor out = imputed;
  for (int i = 0; i < out.size(); ++i)
    if (s.mask[i] != 0.0f) out[i] = s.values[i];
  return out;
}

double missing_pixel_mse(const Tensor& imputed, const Tensor& truth, const Tensor& mask) {
  require_shape(imputed.same_shape(truth) && imputed.same_shape(mask),
                "missing_pixel_mse requires equal shapes, got " + shape_str(imputed.shape()) +
                    ", " + shape_str(truth.shape()) + ", " + shape_str(mask.shape()));
  check_mask(mask);
  double sum = 0.0;
  long long cnt = 0;
  for (int i = 0; i < imputed.size(); ++i) {
    if (mask[i] != 0.0f) continue;
    const double d = static_cast<double>(imputed[i]) - static_cast<double>(truth[i]);
    sum += d * d;
    ++cnt;
  }
  return cnt > 0 ? sum / static_cast<double>(cnt) : 0.0;
}

}  // namespace ssub
