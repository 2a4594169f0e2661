#pragma once

#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "ssub/data.hpp"
#include "ssub/linear.hpp"
#include "ssub/vae.hpp"

namespace ssub {

// One (dataset, sparsity, method, seed) cell of an experiment. `failed`
// marks cells whose method threw (e.g. diverged); their metric fields are
// NaN and `error` keeps the message.
struct ReportRow {
  std::string dataset;
  double sparsity = 0.0;
  std::string method;
  uint64_t seed = 0;
  int n_test = 0;
  double mse_mean = 0.0;
  double mse_std = 0.0;
  double train_s = 0.0;
  double infer_ms = 0.0;
  bool failed = false;
  std::string error;
};

struct ExperimentReport {
  std::vector<ReportRow> rows;
  std::map<std::string, std::string> manifest;
  // Named loss traces (e.g. autoencoder validation curves), one value per epoch.
  std::map<std::string, std::vector<double>> curves;
  int test_eval_uses = 0;

  const ReportRow* find(const std::string& method, uint64_t seed, double sparsity) const;
};

// Schema: dataset,sparsity,method,seed,n_test,mse_mean,mse_std,train_s,infer_ms
void write_report_csv(const std::string& path, const ExperimentReport& report);

// Methods understood by the comparison harness.
const std::vector<std::string>& comparison_method_names();

// ---- fixed-basis projection study ---------------------------------------------
//
// Fits a PCA basis on a dense split and treats the least-squares projection
// of each fully observed evaluation image onto it as ground truth. Sparsified
// copies of the evaluation images are then projected by four code readouts
// over the same fixed basis: dense least squares after zero fill ("fc-zero"),
// mean fill ("fc-mean") or separable linear interpolation ("fc-interp"), and
// the sparsity-aware observed-row solve ("fc-sparse"). The metric is the
// all-pixel MSE between each readout's reconstruction and the ground-truth
// projection, so it vanishes at sparsity 0 for every readout.
//
// A permuted arm repeats all four readouts under a random pixel permutation
// applied jointly to basis and data (rows "*-perm", reported after undoing
// the permutation). fc-sparse must not move by a single bit; manifest key
// "fc_perm_bitexact" records the outcome. fc-interp genuinely changes, since
// it is the only readout that uses spatial neighborhoods.
//
// With `ae_arm`, a linear autoencoder (one fully connected encoder per fill
// strategy or the sparse-FC layer, one fully connected decoder) is trained on
// the sparsified basis split for each sparsity (first seed), adding rows
// "ae-zero", "ae-mean", "ae-interp", "ae-sparse" whose metric is the
// all-pixel reconstruction MSE against the dense evaluation images, plus
// masked validation curves under `curves["ae-<fill>@<sparsity>"]`.

struct FcProjectionOptions {
  int n_images = 2000;  // images drawn from the dense input (basis + eval)
  int code_dim = 10;
  std::vector<double> sparsities = {0.75, 0.9};
  int n_seeds = 3;
  uint64_t seed = 7;
  double basis_fraction = 0.5;
  double ridge = 1e-5;
  bool permuted_check = true;
  bool ae_arm = true;
  int ae_epochs = 10;
  int ae_batch = 32;
  float ae_lr = 1e-3f;
};

ExperimentReport run_fc_projection_experiment(const Dataset& dense, const FcProjectionOptions& opt);

// ---- method comparison -----------------------------------------------------------

struct ComparisonOptions {
  double sparsity = 0.9;
  std::vector<std::string> methods;  // defaults to comparison_method_names()
  int n_train = 2000, n_val = 500, n_test = 500;
  int epochs = 15;
  int batch_size = 32;
  float lr = 1e-3f;
  int channels = 16;
  int latent_dim = 10;
  int latent_channels = 8;
  float sigma2 = 0.1f;
  int k_impute = 10;   // posterior draws per imputation
  int linear_dim = 10;
  int linear_epochs = 20;
  int em_iters = 30;
  std::vector<uint64_t> seeds = {1};
  int threads = 1;       // worker threads across (method, seed) cells
  std::string grid_dir;  // when set, write truth/interp/mask/imputation grids here
  int grid_images = 8;   // test images shown per grid
  std::ostream* log = nullptr;
};

ExperimentReport run_comparison_experiment(const Dataset& dense, const ComparisonOptions& opt);

// ---- deep-image-prior comparison ----------------------------------------------------

struct DipExperimentOptions {
  double sparsity = 0.9;
  int n_train = 500, n_val = 100, n_test = 25;
  int epochs = 15;
  int batch_size = 32;
  float lr = 1e-3f;
  int channels = 16;
  int latent_channels = 8;
  float sigma2 = 0.1f;
  int k_impute = 10;
  int dip_iterations = 1000;
  float dip_lr = 1e-3f;
  uint64_t seed = 1;
  std::ostream* log = nullptr;
};

// Trains one conv-sparse model, then fits a fresh decoder per test image
// (deep image prior) and compares imputation error and per-image wall time.
// manifest["time_ratio"] carries dip_ms / model_ms.
ExperimentReport run_dip_experiment(const Dataset& dense, const DipExperimentOptions& opt);

}  // namespace ssub
