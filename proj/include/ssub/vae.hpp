#pragma once

#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "ssub/data.hpp"
#include "ssub/io.hpp"
#include "ssub/sparse.hpp"

namespace ssub {

// Encoder front ends. All decoders share one architecture; the variants
// differ only in how the encoder copes with missing pixels:
//   conv-zero         missing pixels set to 0, dense convolutions
//   conv-mean         missing pixels set to the training per-pixel mean
//   conv-interp       row-wise linear interpolation fill
//   conv-interp-wmask interpolation fill plus the mask as a second channel
//   conv-sparse       sparsity-aware convolutions/pooling end to end
//   conv-fc-sparse    sparse conv trunk, sparse least-squares readout heads
enum class Variant {
  ConvZero,
  ConvMean,
  ConvInterp,
  ConvInterpWmask,
  ConvSparse,
  ConvFcSparse,
};

Variant variant_from_string(const std::string& name);
std::string variant_name(Variant v);
const std::vector<std::string>& variant_names();

struct ModelConfig {
  Variant variant = Variant::ConvSparse;
  int height = 28, width = 28;
  int channels = 16;        // feature width of every residual stage
  int n_blocks = 0;         // 0: derived from the image extents
  int latent_dim = 10;      // code length (conv-fc-sparse only)
  int latent_channels = 8;  // channels of the spatial latent (other variants)
  float sigma2 = 0.1f;      // observation noise variance
  int mc_samples = 1;       // K: reconstruction samples per step
  float fc_ridge = 1e-5f;   // ridge of the sparse least-squares heads
  float logvar_min = -10.0f;
  float logvar_max = 10.0f;

  int blocks() const;
  // Spatial extents entering each stage plus the latent grid; length
  // blocks()+1. Odd extents are zero-padded bottom/right before pooling and
  // the decoder crops back symmetrically.
  std::vector<std::pair<int, int>> stage_sizes() const;
  Shape latent_shape() const;
  void validate() const;
  std::map<std::string, std::string> to_manifest() const;
  static ModelConfig from_manifest(const std::map<std::string, std::string>& m);
};

// ---- layers ---------------------------------------------------------------------

struct Conv2dLayer {
  Parameter kernel;  // (Cout,Cin,K,K)
  Parameter bias;    // (Cout)

  Conv2dLayer(const std::string& name, int cin, int cout, int k, SeededRng& rng,
              float gain = 2.0f);
  Value dense(Tape& t, Value x);
  SparseConvOut sparse(Tape& t, Value x, const Tensor& mask);
  int ksize() const { return kernel.value.dim(3); }
  void collect(std::vector<Parameter*>& out);
};

struct DenseLayer {
  Parameter weight;  // (out,in)
  Parameter bias;    // (out)

  DenseLayer(const std::string& name, int in, int out, SeededRng& rng, float gain = 2.0f);
  Value apply(Tape& t, Value x);  // rank-1 input
  void collect(std::vector<Parameter*>& out);
};

// Two 3x3 convolutions with a shortcut (1x1-projected when the channel
// counts differ): h = relu(conv2(relu(conv1 x)) + skip x). In the sparse
// path the shortcut contributes only at sites observed in the *input* mask
// and the returned mask is the one propagated through both convolutions.
struct ResidualBlock {
  Conv2dLayer conv1, conv2;
  std::optional<Conv2dLayer> skip;

  ResidualBlock(const std::string& name, int cin, int cout, SeededRng& rng);
  Value dense(Tape& t, Value x);
  std::pair<Value, Tensor> sparse(Tape& t, Value x, const Tensor& mask);
  void collect(std::vector<Parameter*>& out);
};

// ---- encoder / decoder ------------------------------------------------------------

struct EncoderOut {
  Value mu, logvar;
};

struct Encoder {
  ModelConfig cfg;
  std::vector<ResidualBlock> blocks;
  std::optional<Conv2dLayer> mu_head, logvar_head;    // spatial-latent variants
  std::optional<SparseFcLayer> fc_mu, fc_logvar;      // conv-fc-sparse
  Tensor pixel_mean;  // buffer for the conv-mean front end (set from training data)

  Encoder(const ModelConfig& cfg, SeededRng& rng);
  EncoderOut apply(Tape& t, const SparseSample& s);
  void collect(std::vector<Parameter*>& out);
};

struct Decoder {
  ModelConfig cfg;
  std::optional<DenseLayer> fc;       // conv-fc-sparse: code -> deepest feature map
  std::vector<ResidualBlock> blocks;  // deepest stage first
  Conv2dLayer out;                    // linear 3x3 to one channel

  Decoder(const ModelConfig& cfg, SeededRng& rng);
  Value apply(Tape& t, Value z);
  std::vector<Parameter*> parameters();
  void collect(std::vector<Parameter*>& out);
};

// ---- model ---------------------------------------------------------------------------

struct PosteriorStats {
  Tensor mu, logvar;
};

class SubspaceModel {
 public:
  SubspaceModel(ModelConfig cfg, uint64_t init_seed);

  ModelConfig cfg;
  Encoder encoder;
  Decoder decoder;

  std::vector<Parameter*> parameters();
  // Parameters plus non-trainable buffers, in checkpoint order.
  std::vector<std::pair<std::string, Tensor*>> state();

  EncoderOut encode_on_tape(Tape& t, const SparseSample& s);
  Value decode_on_tape(Tape& t, Value z);

  // Tape-free conveniences (forward only, finiteness-checked).
  PosteriorStats encode(const SparseSample& s);
  Tensor decode(const Tensor& z);  // returns (H,W)

  void set_pixel_mean(Tensor m);
};

// ---- objective --------------------------------------------------------------------------

struct ElboTerms {
  double total = 0.0, recon = 0.0, kl = 0.0;
};

// Masked variational objective:
//   (1/(K*sigma2)) * sum_k || (y - f(x_k)) .* m ||^2
//   + 0.5 * sum(exp(logvar) + mu^2 - 1 - logvar)
// with x_k = mu + exp(logvar/2)*eps_k. A null `eps_rng` fixes every eps at 0
// ("mean mode"), making the value deterministic. Throws NumericError with
// both term values if the result is not finite.
Value elbo_on_tape(Tape& t, SubspaceModel& model, const SparseSample& s, int k_samples,
                   SeededRng* eps_rng, ElboTerms* terms = nullptr);
double elbo_value(SubspaceModel& model, const SparseSample& s, int k_samples, SeededRng* eps_rng);

// ---- training ------------------------------------------------------------------------------

struct TrainOptions {
  int epochs = 20;
  int batch_size = 32;
  float lr = 1e-3f;
  int k_samples = 1;
  uint64_t seed = 1;
  std::ostream* log = nullptr;  // optional per-epoch progress lines
};

struct TrainReport {
  std::vector<double> train_loss;  // mean per-sample objective per epoch
  std::vector<double> val_loss;    // mean-mode objective on the validation split
  int best_epoch = -1;             // epoch whose weights were restored (0-based)
  int steps = 0;                   // optimizer updates executed
  bool diverged = false;
  double seconds = 0.0;
};

// Adam training with per-epoch reshuffling. Keeps the weights of the best
// validation epoch. A non-finite loss stops training, restores the best
// weights seen so far and reports diverged = true.
TrainReport train_model(SubspaceModel& model, const Dataset& train, const Dataset& val,
                        const TrainOptions& opt);

// ---- checkpoints ------------------------------------------------------------------------

void save_model(const std::string& path, SubspaceModel& model,
                const std::map<std::string, std::string>& extra_manifest = {});
SubspaceModel load_model(const std::string& path);

// Deep copies of the model state, for snapshots during training.
std::vector<Tensor> copy_state(SubspaceModel& model);
void restore_state(SubspaceModel& model, const std::vector<Tensor>& snapshot);

}  // namespace ssub
