#include "ssub/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <mutex>
#include <optional>
#include <thread>

#include "ssub/dip.hpp"
#include "ssub/eval.hpp"
#include "ssub/io.hpp"
#include "ssub/sparse.hpp"

namespace ssub {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct MeanStd {
  double mean = 0.0, sd = 0.0;
};

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd r;
  if (xs.empty()) return r;
  double s = 0.0;
  for (double x : xs) s += x;
  r.mean = s / static_cast<double>(xs.size());
  double q = 0.0;
  for (double x : xs) q += (x - r.mean) * (x - r.mean);
  r.sd = std::sqrt(q / static_cast<double>(xs.size()));
  return r;
}

}  // namespace

const ReportRow* ExperimentReport::find(const std::string& method, uint64_t seed,
                                        double sparsity) const {
  for (const ReportRow& r : rows)
    if (r.method == method && r.seed == seed && std::abs(r.sparsity - sparsity) < 1e-12) return &r;
  return nullptr;
}

void write_report_csv(const std::string& path, const ExperimentReport& report) {
  CsvWriter csv(path, {"dataset", "sparsity", "method", "seed", "n_test", "mse_mean", "mse_std",
                       "train_s", "infer_ms"});
  for (const ReportRow& r : report.rows)
    csv.row({r.dataset, fmt_g(r.sparsity), r.method, std::to_string(r.seed),
             std::to_string(r.n_test), fmt_g(r.mse_mean), fmt_g(r.mse_std), fmt_g(r.train_s),
             fmt_g(r.infer_ms)});
  csv.flush();
}

// ---- fixed-basis projection study -----------------------------------------------

namespace {

// Reconstruction from a code under the linear basis, in float64.
Tensor basis_reconstruct(const Tensor& weight, const Tensor& mean, const Tensor& code) {
  const int dim = weight.dim(0), d = weight.dim(1);
  Tensor out({dim});
  for (int p = 0; p < dim; ++p) {
    double acc = static_cast<double>(mean[p]);
    for (int j = 0; j < d; ++j)
      acc += static_cast<double>(weight.at(p, j)) * static_cast<double>(code[j]);
    out[p] = static_cast<float>(acc);
  }
  return out;
}

// All-pixel MSE between two flat images, float64 accumulation in index order.
double full_mse(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (int i = 0; i < a.size(); ++i) {
    const double diff = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += diff * diff;
  }
  return acc / std::max(1, a.size());
}

// The four fixed-basis code readouts of the projection study.
const char* kFcMethods[4] = {"fc-zero", "fc-mean", "fc-interp", "fc-sparse"};

Tensor fc_readout_input(int method, const SparseSample& s, const Tensor& pixel_mean) {
  switch (method) {
    case 0: return fill_zero(s);
    case 1: return fill_mean(s, pixel_mean);
    case 2: return fill_interp(s);
    default: return s.values;
  }
}

// Linear autoencoder arm: one fully connected encoder (a fill strategy ahead
// of a dense layer, or the sparse-FC layer) plus one fully connected decoder,
// trained with Adam on the masked reconstruction error.
struct AeResult {
  std::vector<double> val_curve;
  std::vector<double> eval_mse;  // all-pixel error vs dense truth, per image
  double train_s = 0.0;
  double infer_ms = 0.0;
};

AeResult train_linear_ae(int method, const Dataset& train, const Dataset& val,
                         const Tensor& pixel_mean, const FcProjectionOptions& opt,
                         uint64_t seed) {
  const int d = train.height * train.width;
  SeededRng init_rng = SeededRng(seed).fork(1);
  std::optional<DenseLayer> enc;
  std::optional<SparseFcLayer> enc_sparse;
  if (method == 3)
    enc_sparse.emplace("ae.enc", d, opt.code_dim, static_cast<float>(opt.ridge), init_rng);
  else
    enc.emplace("ae.enc", d, opt.code_dim, init_rng, 1.0f);
  DenseLayer dec("ae.dec", opt.code_dim, d, init_rng, 1.0f);

  std::vector<Parameter*> params;
  if (enc) enc->collect(params);
  if (enc_sparse) {
    params.push_back(&enc_sparse->weight);
    params.push_back(&enc_sparse->offset);
  }
  dec.collect(params);
  Adam adam(params, {opt.ae_lr});

  const auto masked_loss = [&](Tape& t, const Dataset& ds, int i) {
    const SparseSample s = ds.sample(i);
    const Tensor flat_mask = s.mask.reshaped({d});
    double m_sum = 0.0;
    for (int p = 0; p < d; ++p) m_sum += flat_mask[p];
    Value code;
    if (enc_sparse) {
      Value y = t.constant(s.values.reshaped({d}));
      code = sparse_fc_forward(t, *enc_sparse, y, flat_mask);
    } else {
      code = enc->apply(t, t.constant(fc_readout_input(method, s, pixel_mean).reshaped({d})));
    }
    Value recon = dec.apply(t, code);
    Value diff = mul(sub(recon, t.constant(s.values.reshaped({d}))), t.constant(flat_mask));
    return scale(reduce_sum(square(diff)), m_sum > 0 ? static_cast<float>(1.0 / m_sum) : 0.0f);
  };

  AeResult res;
  const auto t_train = Clock::now();
  SeededRng shuffle_rng = SeededRng(seed).fork(2);
  for (int epoch = 0; epoch < opt.ae_epochs; ++epoch) {
    const std::vector<int> order = shuffle_rng.permutation(train.count());
    int at = 0;
    while (at < train.count()) {
      const int take_n = std::min(opt.ae_batch, train.count() - at);
      for (Parameter* p : params) p->zero_grad();
      for (int b = 0; b < take_n; ++b) {
        Tape tape;
        Value loss = scale(masked_loss(tape, train, order[static_cast<size_t>(at + b)]),
                           1.0f / take_n);
        tape.backward(loss);
      }
      adam.step();
      at += take_n;
    }
    double val_sum = 0.0;
    for (int i = 0; i < val.count(); ++i) {
      Tape tape;
      val_sum += masked_loss(tape, val, i).tensor()[0];
    }
    res.val_curve.push_back(val_sum / std::max(1, val.count()));
  }
  res.train_s = seconds_since(t_train);

  const auto t_infer = Clock::now();
  for (int i = 0; i < val.count(); ++i) {
    Tape tape;
    const SparseSample s = val.sample(i);
    Value code;
    if (enc_sparse)
      code = sparse_fc_forward(tape, *enc_sparse, tape.constant(s.values.reshaped({d})),
                               s.mask.reshaped({d}));
    else
      code = enc->apply(tape,
                        tape.constant(fc_readout_input(method, s, pixel_mean).reshaped({d})));
    const Tensor recon = dec.apply(tape, code).tensor();
    res.eval_mse.push_back(full_mse(recon, val.truth_image(i).reshaped({d})));
  }
  res.infer_ms = 1000.0 * seconds_since(t_infer) / std::max(1, val.count());
  return res;
}

}  // namespace

ExperimentReport run_fc_projection_experiment(const Dataset& dense, const FcProjectionOptions& opt) {
  dense.validate();
  if (!dense.dense()) throw DataError("fc projection experiment expects a dense dataset");
  if (opt.n_images < 4 || opt.n_images > dense.count())
    throw DataError("fc projection experiment: n_images must lie in [4, " +
                    std::to_string(dense.count()) + "]");
  if (opt.n_seeds < 1) throw DataError("fc projection experiment needs at least one seed");

  SeededRng root(opt.seed);
  Dataset pool = subset(dense, root.fork(0).permutation(dense.count()));
  pool = take(pool, opt.n_images);
  const int n_basis = static_cast<int>(std::lround(opt.basis_fraction * opt.n_images));
  if (n_basis < 2 || n_basis >= opt.n_images)
    throw DataError("fc projection experiment: basis fraction leaves an empty split");
  std::vector<int> idx_basis, idx_eval;
  for (int i = 0; i < n_basis; ++i) idx_basis.push_back(i);
  for (int i = n_basis; i < opt.n_images; ++i) idx_eval.push_back(i);
  Dataset basis_ds = subset(pool, idx_basis);
  Dataset eval_ds = subset(pool, idx_eval);
  eval_ds.split_tag = "test";

  const auto t_pca = Clock::now();
  const LinearModel pca = pca_init(basis_ds, opt.code_dim);
  const double pca_seconds = seconds_since(t_pca);
  const Tensor basis_mean_img = observed_pixel_mean(basis_ds);

  const int d = eval_ds.height * eval_ds.width;
  const Tensor ones = Tensor::full({d}, 1.0f);

  // Ground truth: the projection of the fully observed evaluation images.
  std::vector<Tensor> recon_star;
  for (int i = 0; i < eval_ds.count(); ++i) {
    const Tensor code = sparse_fc_response(pca.weight, pca.mean,
                                           eval_ds.truth_image(i).reshaped({d}), ones, opt.ridge);
    recon_star.push_back(basis_reconstruct(pca.weight, pca.mean, code));
  }

  ExperimentReport report;
  bool perm_ok = true;

  for (size_t si = 0; si < opt.sparsities.size(); ++si) {
    const double sparsity = opt.sparsities[si];
    MaskSpec spec;
    spec.kind = MaskSpec::Kind::Random;
    spec.sparsity = sparsity;
    uint64_t first_run_seed = 0;
    for (int seed_idx = 0; seed_idx < opt.n_seeds; ++seed_idx) {
      const uint64_t run_seed =
          SeededRng(opt.seed).fork(1000 + si * 97 + static_cast<size_t>(seed_idx)).seed();
      if (seed_idx == 0) first_run_seed = run_seed;
      Dataset sparse_eval = sparsify(eval_ds, spec, run_seed);
      sparse_eval.note_evaluation();

      const auto push_row = [&](const std::string& method, const std::vector<double>& mses,
                                double train_s, double infer_ms) {
        ReportRow row;
        row.dataset = dense.name;
        row.sparsity = sparsity;
        row.method = method;
        row.seed = run_seed;
        row.n_test = sparse_eval.count();
        const MeanStd ms = mean_std(mses);
        row.mse_mean = ms.mean;
        row.mse_std = ms.sd;
        row.train_s = train_s;
        row.infer_ms = infer_ms;
        report.rows.push_back(row);
      };

      std::vector<Tensor> sparse_codes, sparse_recons;
      for (int m = 0; m < 4; ++m) {
        std::vector<double> mses;
        const auto t_infer = Clock::now();
        for (int i = 0; i < sparse_eval.count(); ++i) {
          const SparseSample s = sparse_eval.sample(i);
          const Tensor input = fc_readout_input(m, s, basis_mean_img).reshaped({d});
          const Tensor& mask = m == 3 ? s.mask : ones;
          const Tensor code =
              sparse_fc_response(pca.weight, pca.mean, input, mask.reshaped({d}), opt.ridge);
          const Tensor rec = basis_reconstruct(pca.weight, pca.mean, code);
          mses.push_back(full_mse(rec, recon_star[static_cast<size_t>(i)]));
          if (m == 3) {
            sparse_codes.push_back(code);
            sparse_recons.push_back(rec);
          }
        }
        push_row(kFcMethods[m], mses, pca_seconds,
                 1000.0 * seconds_since(t_infer) / std::max(1, sparse_eval.count()));
      }

      if (opt.permuted_check) {
        // Joint pixel permutation of data and basis. Ground truth projections
        // permute along: after undoing the permutation the readouts that act
        // per pixel must reproduce the original rows; fc-sparse must not move
        // by a single bit, fc-interp genuinely changes.
        SeededRng perm_rng =
            SeededRng(opt.seed).fork(5000 + si * 97 + static_cast<size_t>(seed_idx));
        const std::vector<int> perm = perm_rng.permutation(d);
        Tensor w_perm({d, opt.code_dim});
        Tensor mu_perm({d}), mean_img_perm({d});
        for (int p = 0; p < d; ++p) {
          const int q = perm[static_cast<size_t>(p)];
          mu_perm[p] = pca.mean[q];
          mean_img_perm[p] = basis_mean_img.reshaped({d})[q];
          for (int j = 0; j < opt.code_dim; ++j) w_perm.at(p, j) = pca.weight.at(q, j);
        }
        const Dataset permuted_eval = permute_pixels(sparse_eval, perm);
        const Tensor mean_img_perm2d = mean_img_perm.reshaped({eval_ds.height, eval_ds.width});
        for (int m = 0; m < 4; ++m) {
          std::vector<double> mses;
          const auto t_infer = Clock::now();
          for (int i = 0; i < permuted_eval.count(); ++i) {
            const SparseSample s = permuted_eval.sample(i);
            const Tensor input = fc_readout_input(m, s, mean_img_perm2d).reshaped({d});
            const Tensor& mask = m == 3 ? s.mask : ones;
            const Tensor code =
                sparse_fc_response(w_perm, mu_perm, input, mask.reshaped({d}), opt.ridge);
            const Tensor rec = basis_reconstruct(w_perm, mu_perm, code);
            Tensor rec_unperm({d});
            for (int p = 0; p < d; ++p) rec_unperm[perm[static_cast<size_t>(p)]] = rec[p];
            mses.push_back(full_mse(rec_unperm, recon_star[static_cast<size_t>(i)]));
            if (m == 3) {
              if (std::memcmp(code.data(), sparse_codes[static_cast<size_t>(i)].data(),
                              sizeof(float) * static_cast<size_t>(code.size())) != 0)
                perm_ok = false;
              if (std::memcmp(rec_unperm.data(), sparse_recons[static_cast<size_t>(i)].data(),
                              sizeof(float) * static_cast<size_t>(d)) != 0)
                perm_ok = false;
            }
          }
          push_row(std::string(kFcMethods[m]) + "-perm", mses, pca_seconds,
                   1000.0 * seconds_since(t_infer) / std::max(1, permuted_eval.count()));
        }
      }
    }

    if (opt.ae_arm) {
      // One autoencoder run per sparsity; the sparsified eval split of the
      // first seed doubles as its validation and scoring data.
      Dataset ae_train =
          sparsify(basis_ds, spec, SeededRng(opt.seed).fork(7000 + si).seed());
      Dataset ae_val = sparsify(eval_ds, spec, first_run_seed);
      ae_val.note_evaluation();
      for (int m = 0; m < 4; ++m) {
        const AeResult ae = train_linear_ae(m, ae_train, ae_val, basis_mean_img, opt,
                                            SeededRng(opt.seed).fork(8000 + si * 11 + m).seed());
        ReportRow row;
        row.dataset = dense.name;
        row.sparsity = sparsity;
        row.method = std::string("ae-") + (kFcMethods[m] + 3);  // strip "fc-"
        row.seed = first_run_seed;
        row.n_test = ae_val.count();
        const MeanStd ms = mean_std(ae.eval_mse);
        row.mse_mean = ms.mean;
        row.mse_std = ms.sd;
        row.train_s = ae.train_s;
        row.infer_ms = ae.infer_ms;
        report.rows.push_back(row);
        report.curves[row.method + "@" + fmt_g(sparsity)] = ae.val_curve;
      }
    }
  }
  report.test_eval_uses = *eval_ds.eval_uses;
  report.manifest["experiment"] = "fc-projection";
  report.manifest["dataset"] = dense.name;
  report.manifest["n_images"] = std::to_string(opt.n_images);
  report.manifest["code_dim"] = std::to_string(opt.code_dim);
  report.manifest["seed"] = std::to_string(opt.seed);
  if (opt.permuted_check) report.manifest["fc_perm_bitexact"] = perm_ok ? "1" : "0";
  report.manifest["test_eval_uses"] = std::to_string(report.test_eval_uses);
  return report;
}

// ---- method comparison --------------------------------------------------------------

const std::vector<std::string>& comparison_method_names() {
  static const std::vector<std::string> names = {
      "mean-fill",  "linear-pca",  "linear-sgd",        "linear-em",  "conv-zero",
      "conv-mean",  "conv-interp", "conv-interp-wmask", "conv-sparse", "conv-fc-sparse"};
  return names;
}

namespace {

struct CellResult {
  double train_s = 0.0;
  std::vector<double> mses;
  double infer_ms = 0.0;
};

ModelConfig make_model_config(const ComparisonOptions& opt, const Dataset& ds,
                              const std::string& method) {
  ModelConfig cfg;
  cfg.variant = variant_from_string(method);
  cfg.height = ds.height;
  cfg.width = ds.width;
  cfg.channels = opt.channels;
  cfg.latent_dim = opt.latent_dim;
  cfg.latent_channels = opt.latent_channels;
  cfg.sigma2 = opt.sigma2;
  return cfg;
}

CellResult run_comparison_cell(const std::string& method, uint64_t seed, const Dataset& train,
                               const Dataset& val, const Dataset& test,
                               const ComparisonOptions& opt) {
  CellResult cell;
  test.note_evaluation();
  const int d = train.height * train.width;
  const int n_show = opt.grid_dir.empty() ? 0 : std::min(opt.grid_images, test.count());
  std::vector<Tensor> shown;

  const auto eval_with = [&](auto&& impute_fn) {
    const auto t0 = Clock::now();
    for (int i = 0; i < test.count(); ++i) {
      const SparseSample s = test.sample(i);
      Tensor imputed = impute_fn(s);
      cell.mses.push_back(
          missing_pixel_mse(imputed.reshaped({d}), test.truth_image(i).reshaped({d}),
                            s.mask.reshaped({d})));
      if (i < n_show) shown.push_back(std::move(imputed));
    }
    cell.infer_ms = 1000.0 * seconds_since(t0) / std::max(1, test.count());
    if (n_show > 0) {
      // Fig.-style montage: truth row, interp-fill row, mask row, imputations.
      std::vector<Tensor> tiles;
      for (int i = 0; i < n_show; ++i) tiles.push_back(test.truth_image(i));
      for (int i = 0; i < n_show; ++i)
        tiles.push_back(fill_interp(test.sample(i)).reshaped({test.height, test.width}));
      for (int i = 0; i < n_show; ++i) tiles.push_back(test.sample(i).mask);
      for (int i = 0; i < n_show; ++i)
        tiles.push_back(shown[static_cast<size_t>(i)].reshaped({test.height, test.width}));
      write_pgm((std::filesystem::path(opt.grid_dir) /
                 ("grid-" + method + "-seed" + std::to_string(seed) + ".pgm"))
                    .string(),
                tile_grid(tiles, n_show));
    }
  };

  if (method == "mean-fill") {
    const Tensor pm = observed_pixel_mean(train);
    eval_with([&](const SparseSample& s) { return fill_mean(s, pm); });
    return cell;
  }
  if (method == "linear-pca" || method == "linear-sgd" || method == "linear-em") {
    const auto t0 = Clock::now();
    LinearModel model = pca_init(train, opt.linear_dim);
    if (method == "linear-sgd") {
      LinearFitOptions fo;
      fo.epochs = opt.linear_epochs;
      fo.batch_size = opt.batch_size;
      fo.lr = opt.lr;
      fo.seed = seed;
      const LinearFitReport r = fit_sgd(model, train, fo);
      if (r.diverged) throw NumericError("linear-sgd diverged");
    } else if (method == "linear-em") {
      EmOptions eo;
      eo.iterations = opt.em_iters;
      fit_em(model, train, eo);
    }
    cell.train_s = seconds_since(t0);
    eval_with([&](const SparseSample& s) { return impute_linear(model, s); });
    return cell;
  }

  // Deep subspace variants.
  ModelConfig cfg = make_model_config(opt, train, method);
  SubspaceModel model(cfg, SeededRng(seed).fork(10).seed());
  TrainOptions to;
  to.epochs = opt.epochs;
  to.batch_size = opt.batch_size;
  to.lr = opt.lr;
  to.seed = seed;
  to.log = opt.log;
  const TrainReport tr = train_model(model, train, val, to);
  if (tr.diverged) throw NumericError("training diverged");
  cell.train_s = tr.seconds;
  SeededRng impute_rng = SeededRng(seed).fork(20);
  eval_with([&](const SparseSample& s) {
    return impute_conditional_mean(model, s, opt.k_impute, &impute_rng);
  });
  return cell;
}

}  // namespace

ExperimentReport run_comparison_experiment(const Dataset& dense, const ComparisonOptions& opt) {
  dense.validate();
  if (!dense.dense()) throw DataError("comparison experiment expects a dense dataset");
  const int need = opt.n_train + opt.n_val + opt.n_test;
  if (need > dense.count())
    throw DataError("comparison experiment needs " + std::to_string(need) + " images, dataset has " +
                    std::to_string(dense.count()));
  if (opt.sparsity < 0.0 || opt.sparsity >= 1.0)
    throw DataError("comparison experiment sparsity must lie in [0,1)");
  std::vector<std::string> methods = opt.methods.empty() ? comparison_method_names() : opt.methods;
  for (const std::string& m : methods) {
    const auto& known = comparison_method_names();
    if (std::find(known.begin(), known.end(), m) == known.end()) {
      std::string list;
      for (const std::string& k : known) list += (list.empty() ? "" : ", ") + k;
      throw DataError("unknown method '" + m + "' (known: " + list + ")");
    }
  }
  if (opt.seeds.empty()) throw DataError("comparison experiment needs at least one seed");

  struct Cell {
    std::string method;
    uint64_t seed;
  };
  std::vector<Cell> cells;
  for (uint64_t s : opt.seeds)
    for (const std::string& m : methods) cells.push_back({m, s});

  // Per-seed data pipeline: shuffle, cut, sparsify. Prepared once and shared
  // read-only across worker threads.
  struct SeedData {
    Dataset train, val, test;
  };
  std::map<uint64_t, SeedData> data;
  MaskSpec spec;
  spec.kind = MaskSpec::Kind::Random;
  spec.sparsity = opt.sparsity;
  for (uint64_t s : opt.seeds) {
    SeededRng rng = SeededRng(s).fork(100);
    Dataset pool = subset(dense, rng.permutation(dense.count()));
    SeedData sd;
    std::vector<int> idx;
    int at = 0;
    for (int i = 0; i < opt.n_train; ++i) idx.push_back(at++);
    sd.train = sparsify(subset(pool, idx), spec, SeededRng(s).fork(101).seed());
    sd.train.split_tag = "train";
    idx.clear();
    for (int i = 0; i < opt.n_val; ++i) idx.push_back(at++);
    sd.val = sparsify(subset(pool, idx), spec, SeededRng(s).fork(102).seed());
    sd.val.split_tag = "val";
    idx.clear();
    for (int i = 0; i < opt.n_test; ++i) idx.push_back(at++);
    sd.test = sparsify(subset(pool, idx), spec, SeededRng(s).fork(103).seed());
    sd.test.split_tag = "test";
    data.emplace(s, std::move(sd));
  }

  if (!opt.grid_dir.empty()) std::filesystem::create_directories(opt.grid_dir);
  std::vector<ReportRow> rows(cells.size());
  std::atomic<size_t> next{0};
  std::mutex log_mutex;
  const int n_threads = std::max(1, std::min<int>(opt.threads, static_cast<int>(cells.size())));
  const auto worker = [&]() {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      const Cell& cell = cells[i];
      const SeedData& sd = data.at(cell.seed);
      ReportRow row;
      row.dataset = dense.name;
      row.sparsity = opt.sparsity;
      row.method = cell.method;
      row.seed = cell.seed;
      row.n_test = sd.test.count();
      try {
        const CellResult r = run_comparison_cell(cell.method, cell.seed, sd.train, sd.val,
                                                 sd.test, opt);
        const MeanStd ms = mean_std(r.mses);
        row.mse_mean = ms.mean;
        row.mse_std = ms.sd;
        row.train_s = r.train_s;
        row.infer_ms = r.infer_ms;
      } catch (const std::exception& e) {
        row.failed = true;
        row.error = e.what();
        row.mse_mean = row.mse_std = row.train_s = row.infer_ms =
            std::numeric_limits<double>::quiet_NaN();
      }
      rows[i] = std::move(row);
      if (opt.log) {
        std::lock_guard<std::mutex> lock(log_mutex);
        (*opt.log) << "cell " << cells[i].method << " seed " << cells[i].seed
                   << (rows[i].failed ? " FAILED: " + rows[i].error
                                      : " mse " + fmt_g(rows[i].mse_mean))
                   << "\n";
      }
    }
  };
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (std::thread& th : pool) th.join();
  }

  ExperimentReport report;
  report.rows = std::move(rows);
  for (const auto& [s, sd] : data) report.test_eval_uses += *sd.test.eval_uses;
  report.manifest["experiment"] = "comparison";
  report.manifest["dataset"] = dense.name;
  report.manifest["sparsity"] = fmt_g(opt.sparsity);
  report.manifest["n_train"] = std::to_string(opt.n_train);
  report.manifest["n_val"] = std::to_string(opt.n_val);
  report.manifest["n_test"] = std::to_string(opt.n_test);
  report.manifest["epochs"] = std::to_string(opt.epochs);
  report.manifest["test_eval_uses"] = std::to_string(report.test_eval_uses);
  return report;
}

// ---- deep-image-prior comparison ---------------------------------------------------------

ExperimentReport run_dip_experiment(const Dataset& dense, const DipExperimentOptions& opt) {
  dense.validate();
  if (!dense.dense()) throw DataError("dip experiment expects a dense dataset");
  const int need = opt.n_train + opt.n_val + opt.n_test;
  if (need > dense.count())
    throw DataError("dip experiment needs " + std::to_string(need) + " images, dataset has " +
                    std::to_string(dense.count()));

  MaskSpec spec;
  spec.kind = MaskSpec::Kind::Random;
  spec.sparsity = opt.sparsity;
  SeededRng rng = SeededRng(opt.seed).fork(100);
  Dataset pool = subset(dense, rng.permutation(dense.count()));
  std::vector<int> idx;
  int at = 0;
  for (int i = 0; i < opt.n_train; ++i) idx.push_back(at++);
  Dataset train = sparsify(subset(pool, idx), spec, SeededRng(opt.seed).fork(101).seed());
  idx.clear();
  for (int i = 0; i < opt.n_val; ++i) idx.push_back(at++);
  Dataset val = sparsify(subset(pool, idx), spec, SeededRng(opt.seed).fork(102).seed());
  idx.clear();
  for (int i = 0; i < opt.n_test; ++i) idx.push_back(at++);
  Dataset test = sparsify(subset(pool, idx), spec, SeededRng(opt.seed).fork(103).seed());
  test.split_tag = "test";
  test.note_evaluation();

  ModelConfig cfg;
  cfg.variant = Variant::ConvSparse;
  cfg.height = dense.height;
  cfg.width = dense.width;
  cfg.channels = opt.channels;
  cfg.latent_channels = opt.latent_channels;
  cfg.sigma2 = opt.sigma2;

  SubspaceModel model(cfg, SeededRng(opt.seed).fork(10).seed());
  TrainOptions to;
  to.epochs = opt.epochs;
  to.batch_size = opt.batch_size;
  to.lr = opt.lr;
  to.seed = opt.seed;
  to.log = opt.log;
  const TrainReport tr = train_model(model, train, val, to);
  if (tr.diverged) throw NumericError("subspace training diverged in the dip experiment");

  const int d = dense.height * dense.width;
  std::vector<double> model_mses, dip_mses;
  SeededRng impute_rng = SeededRng(opt.seed).fork(20);
  const auto t_model = Clock::now();
  for (int i = 0; i < test.count(); ++i) {
    const SparseSample s = test.sample(i);
    const Tensor imputed = impute_conditional_mean(model, s, opt.k_impute, &impute_rng);
    model_mses.push_back(missing_pixel_mse(imputed.reshaped({d}), test.truth_image(i).reshaped({d}),
                                           s.mask.reshaped({d})));
  }
  const double model_ms = 1000.0 * seconds_since(t_model) / std::max(1, test.count());

  double dip_total_s = 0.0;
  for (int i = 0; i < test.count(); ++i) {
    const SparseSample s = test.sample(i);
    DipOptions dopt;
    dopt.iterations = opt.dip_iterations;
    dopt.lr = opt.dip_lr;
    dopt.seed = SeededRng(opt.seed).fork(30 + static_cast<uint64_t>(i)).seed();
    const DipResult r = dip_fit(s, cfg, dopt);
    dip_total_s += r.seconds;
    dip_mses.push_back(missing_pixel_mse(r.imputed.reshaped({d}),
                                         test.truth_image(i).reshaped({d}), s.mask.reshaped({d})));
    if (opt.log) (*opt.log) << "dip image " << i << " mse " << fmt_g(dip_mses.back()) << "\n";
  }
  const double dip_ms = 1000.0 * dip_total_s / std::max(1, test.count());

  ExperimentReport report;
  const auto push_row = [&](const std::string& method, const std::vector<double>& mses,
                            double train_s, double infer_ms) {
    ReportRow row;
    row.dataset = dense.name;
    row.sparsity = opt.sparsity;
    row.method = method;
    row.seed = opt.seed;
    row.n_test = test.count();
    const MeanStd ms = mean_std(mses);
    row.mse_mean = ms.mean;
    row.mse_std = ms.sd;
    row.train_s = train_s;
    row.infer_ms = infer_ms;
    report.rows.push_back(row);
  };
  push_row("conv-sparse", model_mses, tr.seconds, model_ms);
  push_row("dip", dip_mses, 0.0, dip_ms);
  report.test_eval_uses = *test.eval_uses;
  report.manifest["experiment"] = "dip";
  report.manifest["dataset"] = dense.name;
  report.manifest["sparsity"] = fmt_g(opt.sparsity);
  report.manifest["n_test"] = std::to_string(opt.n_test);
  report.manifest["dip_iterations"] = std::to_string(opt.dip_iterations);
  report.manifest["model_infer_ms"] = fmt_g(model_ms);
  report.manifest["dip_infer_ms"] = fmt_g(dip_ms);
  report.manifest["time_ratio"] = fmt_g(model_ms > 0 ? dip_ms / model_ms : 0.0);
  report.manifest["test_eval_uses"] = std::to_string(report.test_eval_uses);
  return report;
}

}  // namespace ssub
