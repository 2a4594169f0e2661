#include "ssub/vae.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace ssub {

// ---- config -------------------------------------------------------------------

namespace {

const std::vector<std::string> kVariantNames = {
    "conv-zero", "conv-mean", "conv-interp", "conv-interp-wmask", "conv-sparse", "conv-fc-sparse"};

// Init gain for the output heads (posterior mean/log-variance, decoder output).
// He-sized heads start the ELBO tens of thousands above the trivial optimum and
// the optimizer spends most of a short epoch budget undoing that transient.
constexpr float kHeadGain = 0.01f;
constexpr float kFcHeadGain = 10.0f;

}  // namespace

const std::vector<std::string>& variant_names() { return kVariantNames; }

Variant variant_from_string(const std::string& name) {
  for (size_t i = 0; i < kVariantNames.size(); ++i)
    if (kVariantNames[i] == name) return static_cast<Variant>(i);
  std::string known;
  for (const std::string& v : kVariantNames) known += (known.empty() ? "" : ", ") + v;
  throw DataError("unknown model variant '" + name + "' (known: " + known + ")");
}

std::string variant_name(Variant v) { return kVariantNames[static_cast<size_t>(v)]; }

int ModelConfig::blocks() const {
  if (n_blocks > 0) return n_blocks;
  const int m = std::min(height, width);
  int lg = 0;
  while ((1 << (lg + 1)) <= m) ++lg;
  return std::max(1, std::min(5, lg - 2));
}

std::vector<std::pair<int, int>> ModelConfig::stage_sizes() const {
  std::vector<std::pair<int, int>> sizes{{height, width}};
  for (int i = 0; i < blocks(); ++i) {
    const auto [h, w] = sizes.back();
    sizes.emplace_back((h + 1) / 2, (w + 1) / 2);
  }
  return sizes;
}

Shape ModelConfig::latent_shape() const {
  if (variant == Variant::ConvFcSparse) return {latent_dim};
  const auto [h, w] = stage_sizes().back();
  return {latent_channels, h, w};
}

void ModelConfig::validate() const {
  if (height < 2 || width < 2) throw ShapeError("model image extents must be at least 2x2");
  if (channels < 1 || latent_dim < 1 || latent_channels < 1 || mc_samples < 1)
    throw ShapeError("model channel/latent/sample counts must be positive");
  if (!(sigma2 > 0.0f)) throw ShapeError("sigma2 must be positive");
  if (!(fc_ridge > 0.0f)) throw ShapeError("fc_ridge must be positive");
  if (logvar_min > logvar_max) throw ShapeError("logvar bounds are inverted");
  const auto sizes = stage_sizes();
  for (int i = 0; i < blocks(); ++i)
    if (sizes[static_cast<size_t>(i)].first < 2 || sizes[static_cast<size_t>(i)].second < 2)
      throw ShapeError("too many pooling stages for image extents " + std::to_string(height) + "x" +
                       std::to_string(width));
}

std::map<std::string, std::string> ModelConfig::to_manifest() const {
  std::map<std::string, std::string> m;
  m["model.variant"] = variant_name(variant);
  m["model.height"] = std::to_string(height);
  m["model.width"] = std::to_string(width);
  m["model.channels"] = std::to_string(channels);
  m["model.blocks"] = std::to_string(blocks());
  m["model.latent_dim"] = std::to_string(latent_dim);
  m["model.latent_channels"] = std::to_string(latent_channels);
  m["model.sigma2"] = fmt_g(sigma2);
  m["model.mc_samples"] = std::to_string(mc_samples);
  m["model.fc_ridge"] = fmt_g(fc_ridge);
  m["model.logvar_min"] = fmt_g(logvar_min);
  m["model.logvar_max"] = fmt_g(logvar_max);
  return m;
}

ModelConfig ModelConfig::from_manifest(const std::map<std::string, std::string>& m) {
  const auto need = [&m](const char* key) {
    auto it = m.find(key);
    if (it == m.end()) throw DataError("checkpoint manifest missing '" + std::string(key) + "'");
    return it->second;
  };
  ModelConfig cfg;
  cfg.variant = variant_from_string(need("model.variant"));
  cfg.height = std::stoi(need("model.height"));
  cfg.width = std::stoi(need("model.width"));
  cfg.channels = std::stoi(need("model.channels"));
  cfg.n_blocks = std::stoi(need("model.blocks"));
  cfg.latent_dim = std::stoi(need("model.latent_dim"));
  cfg.latent_channels = std::stoi(need("model.latent_channels"));
  cfg.sigma2 = std::stof(need("model.sigma2"));
  cfg.mc_samples = std::stoi(need("model.mc_samples"));
  cfg.fc_ridge = std::stof(need("model.fc_ridge"));
  cfg.logvar_min = std::stof(need("model.logvar_min"));
  cfg.logvar_max = std::stof(need("model.logvar_max"));
  cfg.validate();
  return cfg;
}

// ---- layers --------------------------------------------------------------------

Conv2dLayer::Conv2dLayer(const std::string& name, int cin, int cout, int k, SeededRng& rng,
                         float gain)
    : kernel(name + ".kernel",
             rng.gaussian_tensor({cout, cin, k, k},
                                 std::sqrt(gain / static_cast<float>(cin * k * k)))),
      bias(name + ".bias", Tensor({cout})) {}

Value Conv2dLayer::dense(Tape& t, Value x) {
  return add_channel_bias(conv2d(x, t.param(kernel), Pad::Same), t.param(bias));
}

SparseConvOut Conv2dLayer::sparse(Tape& t, Value x, const Tensor& mask) {
  return sparse_conv2d(t, x, mask, t.param(kernel), t.param(bias));
}

void Conv2dLayer::collect(std::vector<Parameter*>& out) {
  out.push_back(&kernel);
  out.push_back(&bias);
}

DenseLayer::DenseLayer(const std::string& name, int in, int out, SeededRng& rng, float gain)
    : weight(name + ".weight",
             rng.gaussian_tensor({out, in}, std::sqrt(gain / static_cast<float>(in)))),
      bias(name + ".bias", Tensor({out})) {}

Value DenseLayer::apply(Tape& t, Value x) {
  return add(matmul(t.param(weight), x), t.param(bias));
}

void DenseLayer::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

ResidualBlock::ResidualBlock(const std::string& name, int cin, int cout, SeededRng& rng)
    : conv1(name + ".conv1", cin, cout, 3, rng),
      conv2(name + ".conv2", cout, cout, 3, rng) {
  if (cin != cout) skip.emplace(name + ".skip", cin, cout, 1, rng, 1.0f);
}

Value ResidualBlock::dense(Tape& t, Value x) {
  Value a = relu(conv1.dense(t, x));
  Value b = conv2.dense(t, a);
  Value sk = skip ? skip->dense(t, x) : x;
  return relu(add(b, sk));
}

std::pair<Value, Tensor> ResidualBlock::sparse(Tape& t, Value x, const Tensor& mask) {
  SparseConvOut c1 = conv1.sparse(t, x, mask);
  Value a = relu(c1.response);
  SparseConvOut c2 = conv2.sparse(t, a, c1.mask);
  Value sk = skip ? skip->sparse(t, x, mask).response : x;
  // The shortcut only carries information where the block input was
  // observed; elsewhere the convolution branch stands alone.
  Value h = relu(add(c2.response, mul_spatial(sk, mask)));
  return {h, c2.mask};
}

void ResidualBlock::collect(std::vector<Parameter*>& out) {
  conv1.collect(out);
  conv2.collect(out);
  if (skip) skip->collect(out);
}

// ---- encoder ---------------------------------------------------------------------

namespace {

Tensor pad_mask(const Tensor& m, int bottom, int right) {
  const int h = m.dim(0), w = m.dim(1);
  Tensor out({h + bottom, w + right});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out[y * (w + right) + x] = m[y * w + x];
  return out;
}

Tensor tile_channels(const Tensor& m, int channels) {
  Tensor out({channels * m.size()});
  for (int c = 0; c < channels; ++c)
    for (int p = 0; p < m.size(); ++p) out[c * m.size() + p] = m[p];
  return out;
}

}  // namespace

Encoder::Encoder(const ModelConfig& config, SeededRng& rng) : cfg(config) {
  cfg.validate();
  const int in_ch = cfg.variant == Variant::ConvInterpWmask ? 2 : 1;
  for (int i = 0; i < cfg.blocks(); ++i)
    blocks.emplace_back("enc.block" + std::to_string(i), i == 0 ? in_ch : cfg.channels,
                        cfg.channels, rng);
  if (cfg.variant == Variant::ConvFcSparse) {
    const auto [sh, sw] = cfg.stage_sizes().back();
    const int deep = cfg.channels * sh * sw;
    // The least-squares response shrinks as the weight norm grows, so a
    // large gain plays the same role here as kHeadGain does for the
    // convolutional heads: the posterior starts near N(0, I).
    fc_mu.emplace("enc.fc_mu", deep, cfg.latent_dim, cfg.fc_ridge, rng, kFcHeadGain);
    fc_logvar.emplace("enc.fc_logvar", deep, cfg.latent_dim, cfg.fc_ridge, rng, kFcHeadGain);
  } else {
    // Near-zero heads: the posterior starts at N(0, I) and the first epochs
    // go into the decoder instead of into unwinding a large random KL.
    mu_head.emplace("enc.mu", cfg.channels, cfg.latent_channels, 3, rng, kHeadGain);
    logvar_head.emplace("enc.logvar", cfg.channels, cfg.latent_channels, 3, rng, kHeadGain);
  }
}

EncoderOut Encoder::apply(Tape& t, const SparseSample& s) {
  check_sample(s);
  require_shape(s.values.rank() == 2 && s.values.dim(0) == cfg.height && s.values.dim(1) == cfg.width,
                "encoder expects a (" + std::to_string(cfg.height) + "," + std::to_string(cfg.width) +
                    ") sample, got " + shape_str(s.values.shape()));
  const auto sizes = cfg.stage_sizes();
  const int b = cfg.blocks();
  const bool sparse_path =
      cfg.variant == Variant::ConvSparse || cfg.variant == Variant::ConvFcSparse;

  if (!sparse_path) {
    Tensor filled;
    switch (cfg.variant) {
      case Variant::ConvZero:
        filled = fill_zero(s);
        break;
      case Variant::ConvMean:
        if (pixel_mean.empty())
          throw ShapeError("conv-mean encoder used before set_pixel_mean");
        filled = fill_mean(s, pixel_mean);
        break;
      default:
        filled = fill_interp(s);
        break;
    }
    Value x = t.constant(filled.reshaped({1, cfg.height, cfg.width}));
    if (cfg.variant == Variant::ConvInterpWmask)
      x = concat_channels(x, t.constant(s.mask.reshaped({1, cfg.height, cfg.width})));
    for (int i = 0; i < b; ++i) {
      const auto [sh, sw] = sizes[static_cast<size_t>(i)];
      if (sh % 2 || sw % 2) x = pad2d(x, sh % 2, sw % 2);
      x = blocks[static_cast<size_t>(i)].dense(t, x);
      x = maxpool2d(x);
    }
    Value mu = mu_head->dense(t, x);
    Value lv = clamp(logvar_head->dense(t, x), cfg.logvar_min, cfg.logvar_max);
    return {mu, lv};
  }

  Value x = t.constant(fill_zero(s).reshaped({1, cfg.height, cfg.width}));
  Tensor m = s.mask;
  for (int i = 0; i < b; ++i) {
    const auto [sh, sw] = sizes[static_cast<size_t>(i)];
    if (sh % 2 || sw % 2) {
      x = pad2d(x, sh % 2, sw % 2);
      m = pad_mask(m, sh % 2, sw % 2);
    }
    auto [h, m2] = blocks[static_cast<size_t>(i)].sparse(t, x, m);
    MaskedPoolOut pooled = masked_maxpool(t, h, m2);
    x = pooled.values;
    m = std::move(pooled.mask);
  }
  if (cfg.variant == Variant::ConvSparse) {
    SparseConvOut mu = mu_head->sparse(t, x, m);
    SparseConvOut lv = logvar_head->sparse(t, x, m);
    return {mu.response, clamp(lv.response, cfg.logvar_min, cfg.logvar_max)};
  }
  const auto [sh, sw] = sizes[static_cast<size_t>(b)];
  Value flat = reshape(x, {cfg.channels * sh * sw});
  Tensor tiled = tile_channels(m, cfg.channels);
  Value mu = sparse_fc_forward(t, *fc_mu, flat, tiled);
  Value lv = clamp(sparse_fc_forward(t, *fc_logvar, flat, tiled), cfg.logvar_min, cfg.logvar_max);
  return {mu, lv};
}

void Encoder::collect(std::vector<Parameter*>& out) {
  for (ResidualBlock& blk : blocks) blk.collect(out);
  if (mu_head) mu_head->collect(out);
  if (logvar_head) logvar_head->collect(out);
  if (fc_mu) {
    out.push_back(&fc_mu->weight);
    out.push_back(&fc_mu->offset);
  }
  if (fc_logvar) {
    out.push_back(&fc_logvar->weight);
    out.push_back(&fc_logvar->offset);
  }
}

// ---- decoder ----------------------------------------------------------------------

Decoder::Decoder(const ModelConfig& config, SeededRng& rng)
    : cfg(config), out("dec.out", config.channels, 1, 3, rng, kHeadGain) {
  cfg.validate();
  const auto [sh, sw] = cfg.stage_sizes().back();
  int cin = cfg.latent_channels;
  if (cfg.variant == Variant::ConvFcSparse) {
    fc.emplace("dec.fc", cfg.latent_dim, cfg.channels * sh * sw, rng);
    cin = cfg.channels;
  }
  for (int i = 0; i < cfg.blocks(); ++i)
    blocks.emplace_back("dec.block" + std::to_string(i), i == 0 ? cin : cfg.channels, cfg.channels,
                        rng);
}

Value Decoder::apply(Tape& t, Value z) {
  const auto sizes = cfg.stage_sizes();
  const int b = cfg.blocks();
  Value x = z;
  if (fc) {
    require_shape(z.shape() == Shape{cfg.latent_dim},
                  "decoder expects a (" + std::to_string(cfg.latent_dim) + ") code, got " +
                      shape_str(z.shape()));
    const auto [sh, sw] = sizes[static_cast<size_t>(b)];
    x = reshape(relu(fc->apply(t, z)), {cfg.channels, sh, sw});
  } else {
    require_shape(z.shape() == cfg.latent_shape(),
                  "decoder expects latent shape " + shape_str(cfg.latent_shape()) + ", got " +
                      shape_str(z.shape()));
  }
  for (int i = b - 1; i >= 0; --i) {
    x = upsample2x(x);
    x = blocks[static_cast<size_t>(b - 1 - i)].dense(t, x);
    const auto [sh, sw] = sizes[static_cast<size_t>(i)];
    if (x.shape()[1] != sh || x.shape()[2] != sw) x = crop2d(x, sh, sw);
  }
  return out.dense(t, x);
}

std::vector<Parameter*> Decoder::parameters() {
  std::vector<Parameter*> p;
  collect(p);
  return p;
}

void Decoder::collect(std::vector<Parameter*>& outp) {
  if (fc) fc->collect(outp);
  for (ResidualBlock& blk : blocks) blk.collect(outp);
  out.collect(outp);
}

// ---- model --------------------------------------------------------------------------

namespace {

Encoder make_encoder(const ModelConfig& cfg, uint64_t seed) {
  SeededRng rng = SeededRng(seed).fork(1);
  return Encoder(cfg, rng);
}

Decoder make_decoder(const ModelConfig& cfg, uint64_t seed) {
  SeededRng rng = SeededRng(seed).fork(2);
  return Decoder(cfg, rng);
}

}  // namespace

SubspaceModel::SubspaceModel(ModelConfig config, uint64_t init_seed)
    : cfg(std::move(config)),
      encoder(make_encoder(cfg, init_seed)),
      decoder(make_decoder(cfg, init_seed)) {}

std::vector<Parameter*> SubspaceModel::parameters() {
  std::vector<Parameter*> p;
  encoder.collect(p);
  decoder.collect(p);
  return p;
}

std::vector<std::pair<std::string, Tensor*>> SubspaceModel::state() {
  std::vector<std::pair<std::string, Tensor*>> s;
  for (Parameter* p : parameters()) s.emplace_back(p->name, &p->value);
  if (!encoder.pixel_mean.empty()) s.emplace_back("enc.pixel_mean", &encoder.pixel_mean);
  return s;
}

EncoderOut SubspaceModel::encode_on_tape(Tape& t, const SparseSample& s) {
  return encoder.apply(t, s);
}

Value SubspaceModel::decode_on_tape(Tape& t, Value z) { return decoder.apply(t, z); }

PosteriorStats SubspaceModel::encode(const SparseSample& s) {
  Tape t;
  EncoderOut e = encode_on_tape(t, s);
  PosteriorStats ps{e.mu.tensor(), e.logvar.tensor()};
  assert_finite(ps.mu, "posterior mu");
  assert_finite(ps.logvar, "posterior logvar");
  return ps;
}

Tensor SubspaceModel::decode(const Tensor& z) {
  Tape t;
  Value out = decode_on_tape(t, t.constant(z));
  Tensor img = out.tensor().reshaped({cfg.height, cfg.width});
  assert_finite(img, "decoded image");
  return img;
}

void SubspaceModel::set_pixel_mean(Tensor m) {
  require_shape(m.size() == cfg.height * cfg.width,
                "pixel mean size does not match the image extents");
  encoder.pixel_mean = m.reshaped({cfg.height, cfg.width});
}

// ---- objective -----------------------------------------------------------------------

Value elbo_on_tape(Tape& t, SubspaceModel& model, const SparseSample& s, int k_samples,
                   SeededRng* eps_rng, ElboTerms* terms) {
  require_shape(k_samples >= 1, "elbo requires at least one sample");
  EncoderOut e = model.encode_on_tape(t, s);
  // KL[q || N(0,I)] = 0.5 * sum(exp(logvar) + mu^2 - 1 - logvar)
  Value kl = scale(
      reduce_sum(sub(add_scalar(add(exp_op(e.logvar), square(e.mu)), -1.0f), e.logvar)), 0.5f);
  Value target = t.constant(s.values);
  Value mask = t.constant(s.mask);
  Value recon;
  for (int k = 0; k < k_samples; ++k) {
    Value z = eps_rng ? gaussian_sample(e.mu, e.logvar, *eps_rng)
                      : gaussian_sample(e.mu, e.logvar, Tensor(e.mu.shape()));
    Value y = model.decode_on_tape(t, z);
    Value diff = mul(sub(target, reshape(y, {model.cfg.height, model.cfg.width})), mask);
    Value sq = reduce_sum(square(diff));
    recon = k == 0 ? sq : add(recon, sq);
  }
  recon = scale(recon, 1.0f / (static_cast<float>(k_samples) * model.cfg.sigma2));
  Value loss = add(recon, kl);
  const double lv = loss.tensor()[0];
  if (!std::isfinite(lv))
    throw NumericError("non-finite objective: recon=" + fmt_g(recon.tensor()[0]) +
                       " kl=" + fmt_g(kl.tensor()[0]));
  if (terms) *terms = {lv, static_cast<double>(recon.tensor()[0]), static_cast<double>(kl.tensor()[0])};
  return loss;
}

double elbo_value(SubspaceModel& model, const SparseSample& s, int k_samples, SeededRng* eps_rng) {
  Tape t;
  return elbo_on_tape(t, model, s, k_samples, eps_rng).tensor()[0];
}

// ---- training -------------------------------------------------------------------------

std::vector<Tensor> copy_state(SubspaceModel& model) {
  std::vector<Tensor> snap;
  for (auto& [name, tensor] : model.state()) snap.push_back(*tensor);
  return snap;
}

void restore_state(SubspaceModel& model, const std::vector<Tensor>& snapshot) {
  auto state = model.state();
  require_shape(state.size() == snapshot.size(), "state snapshot size mismatch");
  for (size_t i = 0; i < state.size(); ++i) *state[i].second = snapshot[i];
}

TrainReport train_model(SubspaceModel& model, const Dataset& train, const Dataset& val,
                        const TrainOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  train.validate();
  val.validate();
  if (train.count() == 0) throw DataError("empty training set");
  if (opt.epochs < 1 || opt.batch_size < 1) throw DataError("epochs and batch size must be positive");
  if (train.height != model.cfg.height || train.width != model.cfg.width)
    throw ShapeError("training images do not match the model extents");
  if (model.cfg.variant == Variant::ConvMean && model.encoder.pixel_mean.empty())
    model.set_pixel_mean(observed_pixel_mean(train));

  Adam adam(model.parameters(), {opt.lr, 0.9f, 0.999f, 1e-8f});
  SeededRng root(opt.seed);
  SeededRng shuffle_rng = root.fork(1);
  SeededRng eps_rng = root.fork(2);

  TrainReport report;
  std::vector<Tensor> best = copy_state(model);
  double best_val = std::numeric_limits<double>::infinity();

  const auto mean_val_loss = [&]() -> double {
    if (val.count() == 0) return std::numeric_limits<double>::quiet_NaN();
    double sum = 0.0;
    for (int i = 0; i < val.count(); ++i) sum += elbo_value(model, val.sample(i), 1, nullptr);
    return sum / val.count();
  };

  const int n = train.count();
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::vector<int> order = shuffle_rng.permutation(n);
    double epoch_sum = 0.0;
    bool bad = false;
    for (int start = 0; start < n && !bad; start += opt.batch_size) {
      const int stop = std::min(n, start + opt.batch_size);
      adam.zero_grad();
      for (int i = start; i < stop; ++i) {
        Tape tape;
        double sample_loss;
        try {
          Value loss = elbo_on_tape(tape, model, train.sample(order[static_cast<size_t>(i)]),
                                    opt.k_samples, &eps_rng);
          sample_loss = loss.tensor()[0];
          tape.backward(loss);
        } catch (const NumericError&) {
          bad = true;
          break;
        }
        epoch_sum += sample_loss;
      }
      if (bad) break;
      const float inv = 1.0f / static_cast<float>(stop - start);
      for (Parameter* p : model.parameters()) p->grad.flat() *= inv;
      adam.step();
      ++report.steps;
    }
    if (bad) {
      report.diverged = true;
      break;
    }
    report.train_loss.push_back(epoch_sum / n);
    const double vloss = mean_val_loss();
    report.val_loss.push_back(vloss);
    const double selector = std::isnan(vloss) ? report.train_loss.back() : vloss;
    if (selector < best_val) {
      best_val = selector;
      best = copy_state(model);
      report.best_epoch = epoch;
    }
    if (opt.log)
      (*opt.log) << "epoch " << epoch << " train " << fmt_g(report.train_loss.back()) << " val "
                 << fmt_g(vloss) << "\n";
  }
  restore_state(model, best);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

// ---- checkpoints -------------------------------------------------------------------------

void save_model(const std::string& path, SubspaceModel& model,
                const std::map<std::string, std::string>& extra_manifest) {
  std::map<std::string, std::string> manifest = extra_manifest;
  for (const auto& [k, v] : model.cfg.to_manifest()) manifest[k] = v;
  std::vector<NamedTensor> tensors;
  for (auto& [name, tensor] : model.state()) tensors.push_back({name, *tensor});
  checkpoint_save(path, tensors, manifest);
}

SubspaceModel load_model(const std::string& path) {
  Container c = checkpoint_load(path);
  ModelConfig cfg = ModelConfig::from_manifest(c.manifest);
  SubspaceModel model(cfg, 0);
  std::map<std::string, const Tensor*> by_name;
  for (const NamedTensor& nt : c.tensors) by_name[nt.name] = &nt.tensor;
  if (by_name.count("enc.pixel_mean")) {
    model.set_pixel_mean(*by_name.at("enc.pixel_mean"));
    by_name.erase("enc.pixel_mean");
  }
  for (Parameter* p : model.parameters()) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw DataError("checkpoint missing tensor '" + p->name + "': " + path);
    if (it->second->shape() != p->value.shape())
      throw DataError("checkpoint tensor '" + p->name + "' has shape " +
                      shape_str(it->second->shape()) + ", expected " + shape_str(p->value.shape()));
    p->value = *it->second;
    by_name.erase(it);
  }
  if (!by_name.empty())
    throw DataError("checkpoint contains unknown tensor '" + by_name.begin()->first + "': " + path);
  return model;
}

}  // namespace ssub
