// Command line front end: dataset preparation, model training, imputation and
// the benchmark harnesses, all on top of the ssub library.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ssub/data.hpp"
#include "ssub/dip.hpp"
#include "ssub/eval.hpp"
#include "ssub/experiments.hpp"
#include "ssub/io.hpp"
#include "ssub/linear.hpp"
#include "ssub/sparse.hpp"
#include "ssub/vae.hpp"

namespace fs = std::filesystem;
using namespace ssub;

namespace {

void ensure_dir(const std::string& path) {
  std::error_code ec;
  fs::create_directories(path, ec);
  if (ec) throw DataError("cannot create output directory '" + path + "': " + ec.message());
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

int env_threads() {
  const char* v = std::getenv("SSUB_THREADS");
  if (!v || !*v) return 1;
  const int n = std::atoi(v);
  if (n < 1) throw DataError("SSUB_THREADS must be a positive integer");
  return n;
}

// Shared input options: either a binary dataset container or a raw IDX pair,
// optionally filtered/augmented by a named variant.
struct InputOpts {
  std::string data;
  std::string images;
  std::string labels;
  std::string variant = "none";

  void attach(CLI::App* cmd) {
    auto* d = cmd->add_option("--data", data, "dataset container (.ssd)")
                  ->check(CLI::ExistingFile);
    auto* i = cmd->add_option("--images", images, "IDX image file")->check(CLI::ExistingFile);
    cmd->add_option("--labels", labels, "IDX label file")->check(CLI::ExistingFile)->needs(i);
    cmd->add_option("--dataset-variant", variant, "variant filter/augmentation")
        ->check(CLI::IsMember(variant_list()));
    i->excludes(d);
    d->excludes(i);
  }

  Dataset load(uint64_t seed) const {
    Dataset ds;
    if (!data.empty())
      ds = dataset_load(data);
    else if (!images.empty())
      ds = load_idx(images, labels);
    else
      throw DataError("no input given; use --data or --images");
    if (variant != "none") ds = make_variant(ds, variant, SeededRng(seed).fork(1).seed());
    return ds;
  }
};

// Grid renderings shared by impute: clip to the first `count` images.
void write_grids(const std::string& dir, const Dataset& ds, const std::vector<Tensor>& imputed,
                 int count) {
  const int n = std::min<int>(count, ds.count());
  if (n <= 0) return;
  const int cols = std::min(n, 8);
  std::vector<Tensor> obs, imp, tru;
  for (int i = 0; i < n; ++i) {
    obs.push_back(ds.values[static_cast<size_t>(i)]);
    imp.push_back(imputed[static_cast<size_t>(i)]);
    if (ds.has_truth()) tru.push_back(ds.truth_image(i));
  }
  write_pgm(join_path(dir, "observed.pgm"), tile_grid(obs, cols));
  write_pgm(join_path(dir, "imputed.pgm"), tile_grid(imp, cols));
  if (!tru.empty()) write_pgm(join_path(dir, "truth.pgm"), tile_grid(tru, cols));
}

struct MeanStd {
  double mean = 0.0, sd = 0.0;
};

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd r;
  if (xs.empty()) return r;
  for (double x : xs) r.mean += x;
  r.mean /= static_cast<double>(xs.size());
  for (double x : xs) r.sd += (x - r.mean) * (x - r.mean);
  r.sd = std::sqrt(r.sd / static_cast<double>(xs.size()));
  return r;
}

// ---- sparsify ------------------------------------------------------------------

struct SparsifyOpts {
  InputOpts input;
  std::string mask;
  std::string out;
  std::string name;
  int take_n = 0;
  uint64_t seed = 0;
};

void run_sparsify(const SparsifyOpts& o) {
  Dataset ds = o.input.load(o.seed);
  if (!ds.dense()) throw DataError("sparsify expects dense input data");
  if (o.take_n > 0) ds = take(ds, std::min(o.take_n, ds.count()));
  const MaskSpec spec = MaskSpec::parse(o.mask);
  Dataset out = sparsify(ds, spec, SeededRng(o.seed).fork(2).seed());
  if (!o.name.empty()) out.name = o.name;
  std::map<std::string, std::string> extra;
  extra["cli.command"] = "sparsify";
  extra["cli.mask"] = spec.str();
  extra["cli.seed"] = std::to_string(o.seed);
  extra["cli.variant"] = o.input.variant;
  dataset_save(o.out, out, extra);
  std::cout << "wrote " << out.count() << " images (" << out.height << "x" << out.width << ", "
            << spec.str() << ") to " << o.out << "\n";
}

// ---- train ---------------------------------------------------------------------

struct TrainCliOpts {
  std::string data;
  std::string val;
  double val_frac = 0.1;
  std::string variant = "conv-sparse";
  std::string out;
  int epochs = 20;
  int batch = 32;
  float lr = 1e-3f;
  int k_samples = 1;
  int channels = 16;
  int blocks = 0;
  int latent_dim = 10;
  int latent_channels = 8;
  float sigma2 = 0.1f;
  float fc_ridge = 1e-5f;
  uint64_t seed = 0;
  bool quiet = false;
};

void run_train(const TrainCliOpts& o) {
  Dataset train = dataset_load(o.data);
  Dataset val;
  if (!o.val.empty()) {
    val = dataset_load(o.val);
  } else {
    const SplitResult parts =
        split(train, 1.0 - o.val_frac, o.val_frac, 0.0, SeededRng(o.seed).fork(3).seed());
    train = parts.train;
    val = parts.val;
  }
  if (val.height != train.height || val.width != train.width)
    throw DataError("train/val image sizes differ");

  ModelConfig cfg;
  cfg.variant = variant_from_string(o.variant);
  cfg.height = train.height;
  cfg.width = train.width;
  cfg.channels = o.channels;
  cfg.n_blocks = o.blocks;
  cfg.latent_dim = o.latent_dim;
  cfg.latent_channels = o.latent_channels;
  cfg.sigma2 = o.sigma2;
  cfg.fc_ridge = o.fc_ridge;
  cfg.mc_samples = o.k_samples;
  cfg.validate();

  ensure_dir(o.out);
  SubspaceModel model(cfg, SeededRng(o.seed).fork(10).seed());
  TrainOptions to;
  to.epochs = o.epochs;
  to.batch_size = o.batch;
  to.lr = o.lr;
  to.k_samples = o.k_samples;
  to.seed = o.seed;
  to.log = o.quiet ? nullptr : &std::cerr;
  const TrainReport report = train_model(model, train, val, to);

  CsvWriter log(join_path(o.out, "train_log.csv"), {"epoch", "train_loss", "val_loss"});
  for (size_t e = 0; e < report.train_loss.size(); ++e)
    log.row({std::to_string(e), fmt_g(report.train_loss[e]), fmt_g(report.val_loss[e])});
  log.flush();

  std::map<std::string, std::string> manifest;
  manifest["cli.command"] = "train";
  manifest["cli.data"] = o.data;
  manifest["cli.seed"] = std::to_string(o.seed);
  manifest["train.epochs"] = std::to_string(o.epochs);
  manifest["train.batch"] = std::to_string(o.batch);
  manifest["train.lr"] = fmt_g(o.lr);
  manifest["train.k_samples"] = std::to_string(o.k_samples);
  manifest["train.n_train"] = std::to_string(train.count());
  manifest["train.n_val"] = std::to_string(val.count());
  manifest["result.best_epoch"] = std::to_string(report.best_epoch);
  manifest["result.steps"] = std::to_string(report.steps);
  manifest["result.diverged"] = report.diverged ? "1" : "0";
  if (!report.val_loss.empty() && report.best_epoch >= 0)
    manifest["result.best_val_loss"] = fmt_g(report.val_loss[static_cast<size_t>(report.best_epoch)]);
  // Checkpoints stay byte-reproducible for a given seed, so wall-clock time
  // goes only into the side manifest.
  save_model(join_path(o.out, "checkpoint.ssc"), model, manifest);
  manifest["result.seconds"] = fmt_g(report.seconds);
  write_manifest(join_path(o.out, "manifest.txt"), manifest);
  if (report.diverged)
    throw NumericError("training diverged; best weights up to epoch " +
                       std::to_string(report.best_epoch) + " were saved");
  std::cout << "trained " << o.variant << " for " << report.train_loss.size() << " epochs, best val "
            << (report.best_epoch >= 0 ? fmt_g(report.val_loss[static_cast<size_t>(report.best_epoch)])
                                       : std::string("n/a"))
            << ", wrote " << join_path(o.out, "checkpoint.ssc") << "\n";
}

// ---- impute --------------------------------------------------------------------

struct ImputeOpts {
  std::string model;
  std::string data;
  std::string out;
  int k = 0;
  int draws = 0;
  int count = 16;
  bool splice = false;
  bool pixel_noise = false;
  uint64_t seed = 0;
};

void run_impute(const ImputeOpts& o) {
  SubspaceModel model = load_model(o.model);
  Dataset ds = dataset_load(o.data);
  if (ds.height != model.cfg.height || ds.width != model.cfg.width)
    throw DataError("dataset is " + std::to_string(ds.height) + "x" + std::to_string(ds.width) +
                    " but the model expects " + std::to_string(model.cfg.height) + "x" +
                    std::to_string(model.cfg.width));
  ensure_dir(o.out);

  std::vector<Tensor> imputed;
  std::vector<double> mses;
  const bool scored = ds.has_truth();
  if (scored) ds.note_evaluation();
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < ds.count(); ++i) {
    const SparseSample s = ds.sample(i);
    SeededRng rng = SeededRng(o.seed).fork(static_cast<uint64_t>(i));
    Tensor img = impute_conditional_mean(model, s, o.k, &rng);
    if (o.splice) img = splice_observed(img, s);
    if (scored)
      mses.push_back(missing_pixel_mse(img.reshaped({ds.height * ds.width}),
                                       ds.truth_image(i).reshaped({ds.height * ds.width}),
                                       s.mask.reshaped({ds.height * ds.width})));
    imputed.push_back(std::move(img));
  }
  const double total_ms =
      1000.0 * std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (scored) {
    CsvWriter per(join_path(o.out, "per_image.csv"), {"index", "mse"});
    for (size_t i = 0; i < mses.size(); ++i) per.row({std::to_string(i), fmt_g(mses[i])});
    per.flush();
  }
  const MeanStd ms = mean_std(mses);
  CsvWriter summary(join_path(o.out, "summary.csv"),
                    {"n", "k", "mse_mean", "mse_std", "infer_ms"});
  summary.row({std::to_string(ds.count()), std::to_string(o.k),
               scored ? fmt_g(ms.mean) : "nan", scored ? fmt_g(ms.sd) : "nan",
               fmt_g(total_ms / std::max(1, ds.count()))});
  summary.flush();

  write_grids(o.out, ds, imputed, o.count);
  if (o.draws > 0) {
    const int n_show = std::min({o.count, 8, ds.count()});
    std::vector<Tensor> tiles;
    for (int i = 0; i < n_show; ++i) {
      SeededRng rng = SeededRng(o.seed).fork(1000 + static_cast<uint64_t>(i));
      for (Tensor& d : impute_samples(model, ds.sample(i), o.draws, o.pixel_noise, rng))
        tiles.push_back(std::move(d));
    }
    if (!tiles.empty()) write_pgm(join_path(o.out, "draws.pgm"), tile_grid(tiles, o.draws));
  }

  std::map<std::string, std::string> manifest = model.cfg.to_manifest();
  manifest["cli.command"] = "impute";
  manifest["cli.model"] = o.model;
  manifest["cli.data"] = o.data;
  manifest["cli.seed"] = std::to_string(o.seed);
  manifest["impute.k"] = std::to_string(o.k);
  manifest["impute.n"] = std::to_string(ds.count());
  if (scored) {
    manifest["impute.mse_mean"] = fmt_g(ms.mean);
    manifest["impute.mse_std"] = fmt_g(ms.sd);
  }
  write_manifest(join_path(o.out, "manifest.txt"), manifest);
  if (scored)
    std::cout << "imputed " << ds.count() << " images, missing-pixel mse " << fmt_g(ms.mean)
              << " +- " << fmt_g(ms.sd) << "\n";
  else
    std::cout << "imputed " << ds.count() << " images (no ground truth in input)\n";
}

// ---- experiments ---------------------------------------------------------------

void finish_experiment(const std::string& out, const ExperimentReport& report,
                       std::map<std::string, std::string> manifest) {
  ensure_dir(out);
  write_report_csv(join_path(out, "report.csv"), report);
  if (!report.curves.empty()) {
    CsvWriter csv(join_path(out, "curves.csv"), {"curve", "epoch", "value"});
    for (const auto& [name, values] : report.curves)
      for (size_t e = 0; e < values.size(); ++e)
        csv.row({name, std::to_string(e), fmt_g(values[e])});
    csv.flush();
  }
  for (const auto& [k, v] : report.manifest) manifest[k] = v;
  write_manifest(join_path(out, "manifest.txt"), manifest);
  int failed = 0;
  for (const ReportRow& r : report.rows) failed += r.failed ? 1 : 0;
  std::cout << "wrote " << report.rows.size() << " rows (" << failed << " failed) to "
            << join_path(out, "report.csv") << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sparse-subspace imputation toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "read options from an INI/TOML file");

  SparsifyOpts sp;
  auto* sparsify_cmd = app.add_subcommand("sparsify", "hide pixels of a dense dataset");
  sp.input.attach(sparsify_cmd);
  sparsify_cmd->add_option("--mask", sp.mask, "mask spec, random:S or stride:P:F")->required();
  sparsify_cmd->add_option("--take", sp.take_n, "keep only the first N images");
  sparsify_cmd->add_option("--name", sp.name, "dataset name override");
  sparsify_cmd->add_option("--seed", sp.seed, "rng seed")->required();
  sparsify_cmd->add_option("--out", sp.out, "output container (.ssd)")->required();
  sparsify_cmd->callback([&] { run_sparsify(sp); });

  TrainCliOpts tr;
  auto* train_cmd = app.add_subcommand("train", "fit a deep subspace model");
  train_cmd->add_option("--data", tr.data, "training container (.ssd)")
      ->required()
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--val", tr.val, "validation container (.ssd)")->check(CLI::ExistingFile);
  train_cmd->add_option("--val-frac", tr.val_frac, "validation fraction when --val is absent")
      ->check(CLI::Range(0.01, 0.5));
  train_cmd->add_option("--variant", tr.variant, "encoder variant")
      ->check(CLI::IsMember(variant_names()));
  train_cmd->add_option("--epochs", tr.epochs)->check(CLI::PositiveNumber);
  train_cmd->add_option("--batch", tr.batch)->check(CLI::PositiveNumber);
  train_cmd->add_option("--lr", tr.lr)->check(CLI::PositiveNumber);
  train_cmd->add_option("--k", tr.k_samples, "reconstruction samples per step")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--channels", tr.channels)->check(CLI::PositiveNumber);
  train_cmd->add_option("--blocks", tr.blocks, "residual stages; 0 = derive from image size");
  train_cmd->add_option("--latent-dim", tr.latent_dim)->check(CLI::PositiveNumber);
  train_cmd->add_option("--latent-channels", tr.latent_channels)->check(CLI::PositiveNumber);
  train_cmd->add_option("--sigma2", tr.sigma2)->check(CLI::PositiveNumber);
  train_cmd->add_option("--fc-ridge", tr.fc_ridge)->check(CLI::PositiveNumber);
  train_cmd->add_option("--seed", tr.seed, "rng seed")->required();
  train_cmd->add_option("--out", tr.out, "output directory")->required();
  train_cmd->add_flag("--quiet", tr.quiet, "suppress per-epoch progress");
  train_cmd->callback([&] { run_train(tr); });

  ImputeOpts im;
  auto* impute_cmd = app.add_subcommand("impute", "impute a dataset with a trained model");
  impute_cmd->add_option("--model", im.model, "checkpoint (.ssc)")
      ->required()
      ->check(CLI::ExistingFile);
  impute_cmd->add_option("--data", im.data, "dataset container (.ssd)")
      ->required()
      ->check(CLI::ExistingFile);
  impute_cmd->add_option("--k", im.k, "posterior draws per image; 0 = posterior mean");
  impute_cmd->add_option("--draws", im.draws, "write a grid of N posterior samples per image");
  impute_cmd->add_option("--count", im.count, "images rendered into the grids");
  impute_cmd->add_flag("--splice", im.splice, "paste observed pixels over the imputations");
  impute_cmd->add_flag("--pixel-noise", im.pixel_noise, "add observation noise to --draws");
  impute_cmd->add_option("--seed", im.seed, "rng seed")->required();
  impute_cmd->add_option("--out", im.out, "output directory")->required();
  impute_cmd->callback([&] { run_impute(im); });

  auto* exp_cmd = app.add_subcommand("experiment", "benchmark harnesses");
  exp_cmd->require_subcommand(1);

  InputOpts fc_in;
  FcProjectionOptions fc;
  std::string fc_out;
  bool fc_no_perm = false;
  auto* fc_cmd = exp_cmd->add_subcommand("fc", "fixed-basis sparse projection study");
  fc_in.attach(fc_cmd);
  fc_cmd->add_option("--n-images", fc.n_images)->check(CLI::PositiveNumber);
  fc_cmd->add_option("--code-dim", fc.code_dim)->check(CLI::PositiveNumber);
  fc_cmd->add_option("--sparsity", fc.sparsities, "missing fractions (repeatable)")
      ->check(CLI::Range(0.0, 0.999));
  fc_cmd->add_option("--n-seeds", fc.n_seeds)->check(CLI::PositiveNumber);
  fc_cmd->add_option("--basis-frac", fc.basis_fraction)->check(CLI::Range(0.05, 0.95));
  fc_cmd->add_option("--ridge", fc.ridge)->check(CLI::PositiveNumber);
  fc_cmd->add_flag("--no-perm-check", fc_no_perm, "skip the permutation-invariance arm");
  bool fc_no_ae = false;
  fc_cmd->add_flag("--no-ae", fc_no_ae, "skip the linear-autoencoder arm");
  fc_cmd->add_option("--ae-epochs", fc.ae_epochs)->check(CLI::PositiveNumber);
  fc_cmd->add_option("--ae-lr", fc.ae_lr)->check(CLI::PositiveNumber);
  fc_cmd->add_option("--seed", fc.seed, "rng seed")->required();
  fc_cmd->add_option("--out", fc_out, "output directory")->required();
  fc_cmd->callback([&] {
    fc.permuted_check = !fc_no_perm;
    fc.ae_arm = !fc_no_ae;
    const Dataset ds = fc_in.load(fc.seed);
    std::map<std::string, std::string> manifest;
    manifest["cli.command"] = "experiment fc";
    manifest["cli.seed"] = std::to_string(fc.seed);
    finish_experiment(fc_out, run_fc_projection_experiment(ds, fc), std::move(manifest));
  });

  InputOpts cm_in;
  ComparisonOptions cm;
  cm.threads = env_threads();
  std::string cm_out;
  uint64_t cm_seed = 0;
  bool cm_quiet = false;
  auto* cm_cmd = exp_cmd->add_subcommand("compare", "imputation method comparison");
  cm_in.attach(cm_cmd);
  cm_cmd->add_option("--sparsity", cm.sparsity)->check(CLI::Range(0.0, 0.999));
  cm_cmd->add_option("--methods", cm.methods, "subset of methods (default: all)")
      ->check(CLI::IsMember(comparison_method_names()));
  cm_cmd->add_option("--n-train", cm.n_train)->check(CLI::PositiveNumber);
  cm_cmd->add_option("--n-val", cm.n_val)->check(CLI::PositiveNumber);
  cm_cmd->add_option("--n-test", cm.n_test)->check(CLI::PositiveNumber);
  cm_cmd->add_option("--epochs", cm.epochs)->check(CLI::PositiveNumber);
  cm_cmd->add_option("--batch", cm.batch_size)->check(CLI::PositiveNumber);
  cm_cmd->add_option("--lr", cm.lr)->check(CLI::PositiveNumber);
  cm_cmd->add_option("--channels", cm.channels)->check(CLI::PositiveNumber);
  cm_cmd->add_option("--latent-dim", cm.latent_dim)->check(CLI::PositiveNumber);
  cm_cmd->add_option("--latent-channels", cm.latent_channels)->check(CLI::PositiveNumber);
  cm_cmd->add_option("--sigma2", cm.sigma2)->check(CLI::PositiveNumber);
  cm_cmd->add_option("--k", cm.k_impute, "posterior draws per imputation");
  cm_cmd->add_option("--linear-dim", cm.linear_dim)->check(CLI::PositiveNumber);
  cm_cmd->add_option("--linear-epochs", cm.linear_epochs)->check(CLI::PositiveNumber);
  cm_cmd->add_option("--em-iters", cm.em_iters)->check(CLI::PositiveNumber);
  cm_cmd->add_option("--seeds", cm.seeds, "training seeds (repeatable; default: --seed)");
  cm_cmd->add_option("--threads", cm.threads, "worker threads over (method, seed) cells")
      ->check(CLI::PositiveNumber);
  cm_cmd->add_flag("--quiet", cm_quiet, "suppress per-cell progress");
  cm_cmd->add_option("--seed", cm_seed, "rng seed")->required();
  cm_cmd->add_option("--out", cm_out, "output directory")->required();
  cm_cmd->callback([&] {
    if (cm_cmd->count("--seeds") == 0) cm.seeds = {cm_seed};
    cm.log = cm_quiet ? nullptr : &std::cerr;
    cm.grid_dir = join_path(cm_out, "grids");
    const Dataset ds = cm_in.load(cm_seed);
    std::map<std::string, std::string> manifest;
    manifest["cli.command"] = "experiment compare";
    manifest["cli.seed"] = std::to_string(cm_seed);
    manifest["cli.threads"] = std::to_string(cm.threads);
    finish_experiment(cm_out, run_comparison_experiment(ds, cm), std::move(manifest));
  });

  InputOpts dp_in;
  DipExperimentOptions dp;
  std::string dp_out;
  bool dp_quiet = false;
  auto* dp_cmd = exp_cmd->add_subcommand("dip", "single-image deep prior comparison");
  dp_in.attach(dp_cmd);
  dp_cmd->add_option("--sparsity", dp.sparsity)->check(CLI::Range(0.0, 0.999));
  dp_cmd->add_option("--n-train", dp.n_train)->check(CLI::PositiveNumber);
  dp_cmd->add_option("--n-val", dp.n_val)->check(CLI::PositiveNumber);
  dp_cmd->add_option("--n-test", dp.n_test)->check(CLI::PositiveNumber);
  dp_cmd->add_option("--epochs", dp.epochs)->check(CLI::PositiveNumber);
  dp_cmd->add_option("--batch", dp.batch_size)->check(CLI::PositiveNumber);
  dp_cmd->add_option("--lr", dp.lr)->check(CLI::PositiveNumber);
  dp_cmd->add_option("--channels", dp.channels)->check(CLI::PositiveNumber);
  dp_cmd->add_option("--latent-channels", dp.latent_channels)->check(CLI::PositiveNumber);
  dp_cmd->add_option("--sigma2", dp.sigma2)->check(CLI::PositiveNumber);
  dp_cmd->add_option("--k", dp.k_impute, "posterior draws per imputation");
  dp_cmd->add_option("--dip-iters", dp.dip_iterations)->check(CLI::PositiveNumber);
  dp_cmd->add_option("--dip-lr", dp.dip_lr)->check(CLI::PositiveNumber);
  dp_cmd->add_flag("--quiet", dp_quiet, "suppress progress");
  dp_cmd->add_option("--seed", dp.seed, "rng seed")->required();
  dp_cmd->add_option("--out", dp_out, "output directory")->required();
  dp_cmd->callback([&] {
    dp.log = dp_quiet ? nullptr : &std::cerr;
    const Dataset ds = dp_in.load(dp.seed);
    std::map<std::string, std::string> manifest;
    manifest["cli.command"] = "experiment dip";
    manifest["cli.seed"] = std::to_string(dp.seed);
    finish_experiment(dp_out, run_dip_experiment(ds, dp), std::move(manifest));
  });

  std::string info_path;
  auto* info_cmd = app.add_subcommand("info", "print a container's manifest and tensors");
  info_cmd->add_option("path", info_path, "checkpoint or dataset container")
      ->required()
      ->check(CLI::ExistingFile);
  info_cmd->callback([&] {
    Container c;
    try {
      c = checkpoint_load(info_path);
      std::cout << "checkpoint " << info_path << "\n";
    } catch (const DataError&) {
      c = load_container(info_path, kDatasetMagic);
      std::cout << "dataset " << info_path << "\n";
    }
    for (const auto& [k, v] : c.manifest) std::cout << "  " << k << "=" << v << "\n";
    for (const NamedTensor& t : c.tensors)
      std::cout << "  tensor " << t.name << " " << shape_str(t.tensor.shape()) << "\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
