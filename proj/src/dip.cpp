#include "ssub/dip.hpp"

#include <chrono>
#include <cmath>

namespace ssub {

namespace {

Decoder make_dip_decoder(const ModelConfig& arch, uint64_t seed) {
  SeededRng rng = SeededRng(seed).fork(2);  // same stream as a model's decoder
  return Decoder(arch, rng);
}

}  // namespace

DipFitter::DipFitter(const ModelConfig& arch, uint64_t seed)
    : cfg_(arch), decoder_(make_dip_decoder(arch, seed)) {
  cfg_.validate();
  SeededRng zrng = SeededRng(seed).fork(3);
  z_ = zrng.gaussian_tensor(cfg_.latent_shape());
}

std::vector<double> DipFitter::fit(const SparseSample& s, int iterations, float lr) {
  check_sample(s);
  require_shape(s.values.dim(0) == cfg_.height && s.values.dim(1) == cfg_.width,
                "dip sample does not match the configured extents");
  if (iterations < 0) throw ShapeError("dip iteration count must be non-negative");
  const std::vector<int> rows = observed_indices(s.mask);
  const float inv_obs = rows.empty() ? 0.0f : 1.0f / static_cast<float>(rows.size());
  Adam adam(decoder_.parameters(), {lr, 0.9f, 0.999f, 1e-8f});
  std::vector<double> curve;
  curve.reserve(static_cast<size_t>(iterations));
  for (int it = 0; it < iterations; ++it) {
    Tape tape;
    Value y = decoder_.apply(tape, tape.constant(z_));
    Value diff = mul(sub(tape.constant(s.values), reshape(y, {cfg_.height, cfg_.width})),
                     tape.constant(s.mask));
    Value loss = scale(reduce_sum(square(diff)), inv_obs);
    const double lv = loss.tensor()[0];
    if (!std::isfinite(lv)) throw NumericError("dip fit diverged at iteration " + std::to_string(it));
    curve.push_back(lv);
    if (rows.empty()) break;  // nothing to fit against
    adam.zero_grad();
    tape.backward(loss);
    adam.step();
  }
  return curve;
}

Tensor DipFitter::synthesize() {
  Tape tape;
  Value y = decoder_.apply(tape, tape.constant(z_));
  Tensor img = y.tensor().reshaped({cfg_.height, cfg_.width});
  assert_finite(img, "dip synthesis");
  return img;
}

DipResult dip_fit(const SparseSample& s, const ModelConfig& arch, const DipOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  DipFitter fitter(arch, opt.seed);
  DipResult result;
  result.loss = fitter.fit(s, opt.iterations, opt.lr);
  result.imputed = fitter.synthesize();
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace ssub
