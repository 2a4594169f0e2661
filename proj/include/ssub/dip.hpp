#pragma once

#include <vector>

#include "ssub/vae.hpp"

namespace ssub {

// Deep-image-prior baseline: a fresh decoder (same architecture as the
// subspace model's) is fitted to each image individually by minimizing the
// mean squared error over its observed pixels from a fixed random latent.
// No encoder, no prior term, no training set: the decoder weights are the
// only state and they never see a second image.

struct DipOptions {
  int iterations = 1000;
  float lr = 1e-3f;
  uint64_t seed = 1;
};

class DipFitter {
 public:
  // Draws the fixed unit-Gaussian latent and the decoder initialization.
  DipFitter(const ModelConfig& arch, uint64_t seed);

  // Runs `iterations` Adam steps on the masked reconstruction of `s`;
  // returns the per-iteration data loss. May be called repeatedly to
  // continue fitting.
  std::vector<double> fit(const SparseSample& s, int iterations, float lr);

  // Decoded image for the current weights (random-init output before any
  // fitting).
  Tensor synthesize();

  const Tensor& latent() const { return z_; }

 private:
  ModelConfig cfg_;
  Decoder decoder_;
  Tensor z_;
};

struct DipResult {
  Tensor imputed;            // (H,W) decoded image after fitting
  std::vector<double> loss;  // masked mse per iteration
  double seconds = 0.0;
};

DipResult dip_fit(const SparseSample& s, const ModelConfig& arch, const DipOptions& opt);

}  // namespace ssub
