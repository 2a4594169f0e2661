#include "ssub/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace ssub {

bool Dataset::dense() const {
  for (const Tensor& m : masks)
    for (int i = 0; i < m.size(); ++i)
      if (m[i] != 1.0f) return false;
  return true;
}

SparseSample Dataset::sample(int i) const {
  if (i < 0 || i >= count()) throw ShapeError("dataset sample index out of range");
  return {values[static_cast<size_t>(i)], masks[static_cast<size_t>(i)]};
}

Tensor Dataset::truth_image(int i) const {
  if (!has_truth()) throw DataError("dataset '" + name + "' carries no ground truth");
  if (i < 0 || i >= count()) throw ShapeError("dataset truth index out of range");
  return truth[static_cast<size_t>(i)];
}

void Dataset::validate() const {
  if (height <= 0 || width <= 0) throw DataError("dataset has non-positive image extents");
  if (values.size() != masks.size()) throw DataError("dataset values/masks count mismatch");
  if (!truth.empty() && truth.size() != values.size())
    throw DataError("dataset truth count mismatch");
  if (!labels.empty() && labels.size() != values.size())
    throw DataError("dataset labels count mismatch");
  const Shape expect{height, width};
  for (size_t i = 0; i < values.size(); ++i) {
    if (values[i].shape() != expect || masks[i].shape() != expect ||
        (!truth.empty() && truth[i].shape() != expect))
      throw DataError("dataset image " + std::to_string(i) + " has unexpected shape");
    check_mask(masks[i]);
  }
}

Dataset subset(const Dataset& ds, const std::vector<int>& indices) {
  Dataset out;
  out.height = ds.height;
  out.width = ds.width;
  out.name = ds.name;
  out.sparsity = ds.sparsity;
  out.split_tag = ds.split_tag;
  for (int i : indices) {
    if (i < 0 || i >= ds.count()) throw ShapeError("subset index out of range");
    out.values.push_back(ds.values[static_cast<size_t>(i)]);
    out.masks.push_back(ds.masks[static_cast<size_t>(i)]);
    if (ds.has_truth()) out.truth.push_back(ds.truth[static_cast<size_t>(i)]);
    if (ds.has_labels()) out.labels.push_back(ds.labels[static_cast<size_t>(i)]);
  }
  return out;
}

Dataset take(const Dataset& ds, int n) {
  if (n < 0 || n > ds.count())
    throw DataError("cannot take " + std::to_string(n) + " images from dataset of " +
                    std::to_string(ds.count()));
  std::vector<int> idx(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
  return subset(ds, idx);
}

// ---- IDX ------------------------------------------------------------------------

namespace {

uint32_t read_u32_be(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw DataError("truncated IDX file: " + path);
  return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
         (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream in(images_path, std::ios::binary);
  if (!in) throw DataError("cannot open IDX image file: " + images_path);
  const uint32_t magic = read_u32_be(in, images_path);
  if (magic != 0x00000803u)
    throw DataError("bad IDX image magic in " + images_path + " (expected 0x00000803)");
  const uint32_t n = read_u32_be(in, images_path);
  const uint32_t h = read_u32_be(in, images_path);
  const uint32_t w = read_u32_be(in, images_path);
  if (n == 0 || h == 0 || w == 0) throw DataError("empty IDX image file: " + images_path);
  Dataset ds;
  ds.height = static_cast<int>(h);
  ds.width = static_cast<int>(w);
  const size_t pixels = static_cast<size_t>(h) * w;
  std::vector<unsigned char> buf(pixels);
  ds.values.reserve(n);
  for (uint32_t i = 0; i < n; ++i) {
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(pixels));
    if (!in)
      throw DataError("truncated IDX image file " + images_path + " at image " + std::to_string(i));
    Tensor img({ds.height, ds.width});
    for (size_t p = 0; p < pixels; ++p) img[static_cast<int>(p)] = static_cast<float>(buf[p]) / 255.0f;
    ds.values.push_back(img);
    ds.masks.push_back(Tensor::full({ds.height, ds.width}, 1.0f));
    ds.truth.push_back(std::move(img));
  }
  if (!labels_path.empty()) {
    std::ifstream lin(labels_path, std::ios::binary);
    if (!lin) throw DataError("cannot open IDX label file: " + labels_path);
    const uint32_t lmagic = read_u32_be(lin, labels_path);
    if (lmagic != 0x00000801u)
      throw DataError("bad IDX label magic in " + labels_path + " (expected 0x00000801)");
    const uint32_t ln = read_u32_be(lin, labels_path);
    if (ln != n)
      throw DataError("IDX label count " + std::to_string(ln) + " does not match image count " +
                      std::to_string(n));
    std::vector<unsigned char> lbuf(ln);
    lin.read(reinterpret_cast<char*>(lbuf.data()), static_cast<std::streamsize>(ln));
    if (!lin) throw DataError("truncated IDX label file: " + labels_path);
    ds.labels.assign(lbuf.begin(), lbuf.end());
  }
  ds.name = images_path;
  return ds;
}

// ---- variants -----------------------------------------------------------------------

namespace {

Tensor rotate_bilinear(const Tensor& img, double degrees) {
  const int h = img.dim(0), w = img.dim(1);
  const double rad = degrees * M_PI / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  Tensor out({h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // Inverse map: rotate the output coordinate back into the source frame.
      const double dy = y - cy, dx = x - cx;
      const double sy = cy + c * dy + s * dx;
      const double sx = cx - s * dy + c * dx;
      const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
      const double fy = sy - y0, fx = sx - x0;
      double acc = 0.0;
      for (int ddy = 0; ddy <= 1; ++ddy) {
        for (int ddx = 0; ddx <= 1; ++ddx) {
          const int yy = y0 + ddy, xx = x0 + ddx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;  // zero background
          const double wgt = (ddy ? fy : 1.0 - fy) * (ddx ? fx : 1.0 - fx);
          acc += wgt * img[yy * w + xx];
        }
      }
      out[y * w + x] = static_cast<float>(acc);
    }
  }
  return out;
}

}  // namespace

std::vector<std::string> variant_list() {
  return {"mnist-2", "mnist-all", "mnist-rot", "fashion", "none"};
}

Dataset make_variant(const Dataset& base, const std::string& variant, uint64_t seed) {
  base.validate();
  if (!base.dense()) throw DataError("make_variant requires a dense dataset");
  if (variant == "mnist-all" || variant == "fashion" || variant == "none") {
    Dataset out = base;
    out.name = variant == "none" ? base.name : variant;
    return out;
  }
  if (variant == "mnist-2") {
    if (!base.has_labels()) throw DataError("variant mnist-2 requires labels");
    std::vector<int> keep;
    for (int i = 0; i < base.count(); ++i)
      if (base.labels[static_cast<size_t>(i)] == 2) keep.push_back(i);
    if (keep.empty()) throw DataError("variant mnist-2: no images with label 2");
    Dataset out = subset(base, keep);
    out.name = "mnist-2";
    return out;
  }
  if (variant == "mnist-rot") {
    Dataset out = base;
    SeededRng root(seed);
    for (int i = 0; i < out.count(); ++i) {
      SeededRng r = root.fork(static_cast<uint64_t>(i));
      const double angle = r.uniform() * 360.0;
      Tensor rot = rotate_bilinear(out.truth[static_cast<size_t>(i)], angle);
      out.values[static_cast<size_t>(i)] = rot;
      out.truth[static_cast<size_t>(i)] = std::move(rot);
    }
    out.name = "mnist-rot";
    return out;
  }
  std::string known;
  for (const std::string& v : variant_list()) known += (known.empty() ? "" : ", ") + v;
  throw DataError("unknown variant '" + variant + "' (known: " + known + ")");
}

// ---- masking ------------------------------------------------------------------------

MaskSpec MaskSpec::parse(const std::string& text) {
  MaskSpec spec;
  const auto fail = [&text]() {
    throw DataError("cannot parse mask spec '" + text + "' (expected random:S or stride:P:F)");
  };
  const size_t colon = text.find(':');
  if (colon == std::string::npos) fail();
  const std::string kind = text.substr(0, colon);
  const std::string rest = text.substr(colon + 1);
  try {
    if (kind == "random") {
      spec.kind = Kind::Random;
      size_t used = 0;
      spec.sparsity = std::stod(rest, &used);
      if (used != rest.size()) fail();
    } else if (kind == "stride") {
      spec.kind = Kind::Stride;
      const size_t colon2 = rest.find(':');
      if (colon2 == std::string::npos) fail();
      size_t used = 0;
      spec.period = std::stoi(rest.substr(0, colon2), &used);
      if (used != colon2) fail();
      const std::string ph = rest.substr(colon2 + 1);
      spec.phase = std::stoi(ph, &used);
      if (used != ph.size()) fail();
    } else {
      fail();
    }
  } catch (const DataError&) {
    throw;
  } catch (const std::exception&) {
    fail();
  }
  if (spec.kind == Kind::Random && (spec.sparsity < 0.0 || spec.sparsity >= 1.0))
    throw DataError("random mask sparsity must lie in [0,1), got " + std::to_string(spec.sparsity));
  if (spec.kind == Kind::Stride) {
    if (spec.period <= 0) throw DataError("stride mask period must be positive");
    if (spec.phase < 0 || spec.phase >= spec.period)
      throw DataError("stride mask phase must lie in [0, period)");
  }
  return spec;
}

std::string MaskSpec::str() const {
  if (kind == Kind::Random) {
    std::string s = std::to_string(sparsity);
    while (s.size() > 1 && s.back() == '0') s.pop_back();
    if (!s.empty() && s.back() == '.') s.pop_back();
    return "random:" + s;
  }
  return "stride:" + std::to_string(period) + ":" + std::to_string(phase);
}

Dataset sparsify(const Dataset& dense, const MaskSpec& spec, uint64_t seed) {
  dense.validate();
  if (!dense.dense()) throw DataError("sparsify requires a dense dataset");
  Dataset out = dense;
  out.truth = dense.values;
  const int h = dense.height, w = dense.width, d = h * w;
  SeededRng root(seed);
  double nominal = 0.0;
  if (spec.kind == MaskSpec::Kind::Random) {
    nominal = spec.sparsity;
    const int n_obs = static_cast<int>(std::lround((1.0 - spec.sparsity) * d));
    for (int i = 0; i < out.count(); ++i) {
      SeededRng r = root.fork(static_cast<uint64_t>(i));
      std::vector<int> perm = r.permutation(d);
      Tensor mask({h, w});
      for (int k = 0; k < n_obs; ++k) mask[perm[static_cast<size_t>(k)]] = 1.0f;
      Tensor vals(out.truth[static_cast<size_t>(i)].shape());
      vals.flat() = out.truth[static_cast<size_t>(i)].flat().cwiseProduct(mask.flat());
      out.masks[static_cast<size_t>(i)] = std::move(mask);
      out.values[static_cast<size_t>(i)] = std::move(vals);
    }
  } else {
    Tensor mask({h, w});
    int rows_kept = 0;
    for (int y = 0; y < h; ++y) {
      if (y % spec.period != spec.phase) continue;
      ++rows_kept;
      for (int x = 0; x < w; ++x) mask[y * w + x] = 1.0f;
    }
    if (rows_kept == 0) throw DataError("stride mask observes no rows for these image extents");
    nominal = 1.0 - static_cast<double>(rows_kept) / h;
    for (int i = 0; i < out.count(); ++i) {
      Tensor vals(out.truth[static_cast<size_t>(i)].shape());
      vals.flat() = out.truth[static_cast<size_t>(i)].flat().cwiseProduct(mask.flat());
      out.masks[static_cast<size_t>(i)] = mask;
      out.values[static_cast<size_t>(i)] = std::move(vals);
    }
  }
  out.sparsity = nominal;
  out.name = dense.name + "@" + spec.str();
  return out;
}

// ---- splits ------------------------------------------------------------------------

SplitResult split(const Dataset& ds, double f_train, double f_val, double f_test, uint64_t seed) {
  if (f_train < 0 || f_val < 0 || f_test < 0 || std::abs(f_train + f_val + f_test - 1.0) > 1e-6)
    throw DataError("split fractions must be non-negative and sum to 1");
  const int n = ds.count();
  if (n == 0) throw DataError("cannot split an empty dataset");
  SeededRng rng(seed);
  std::vector<int> order = rng.permutation(n);
  const int n_train = static_cast<int>(std::lround(f_train * n));
  const int n_val = static_cast<int>(std::lround(f_val * n));
  if (n_train + n_val > n) throw DataError("split fractions produce more images than available");
  const int n_test = n - n_train - n_val;
  // A requested (positive-fraction) split may not come back empty.
  if ((f_train > 0 && n_train == 0) || (f_val > 0 && n_val == 0) || (f_test > 0 && n_test == 0))
    throw DataError("split of " + std::to_string(n) + " images leaves an empty requested split");
  SplitResult r;
  r.train = subset(ds, {order.begin(), order.begin() + n_train});
  r.val = subset(ds, {order.begin() + n_train, order.begin() + n_train + n_val});
  r.test = subset(ds, {order.begin() + n_train + n_val, order.end()});
  r.train.split_tag = "train";
  r.val.split_tag = "val";
  r.test.split_tag = "test";
  return r;
}

// ---- pixel permutation ----------------------------------------------------------------

std::vector<int> identity_permutation(int n) {
  std::vector<int> p(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
  return p;
}

std::vector<int> invert_permutation(const std::vector<int>& perm) {
  std::vector<int> inv(perm.size(), -1);
  for (size_t i = 0; i < perm.size(); ++i) {
    const int v = perm[i];
    if (v < 0 || static_cast<size_t>(v) >= perm.size() || inv[static_cast<size_t>(v)] != -1)
      throw DataError("invert_permutation: input is not a permutation");
    inv[static_cast<size_t>(v)] = static_cast<int>(i);
  }
  return inv;
}

namespace {

Tensor apply_perm(const Tensor& t, const std::vector<int>& perm) {
  Tensor out(t.shape());
  for (size_t i = 0; i < perm.size(); ++i) out[static_cast<int>(i)] = t[perm[i]];
  return out;
}

}  // namespace

Dataset permute_pixels(const Dataset& ds, const std::vector<int>& perm) {
  ds.validate();
  const int d = ds.height * ds.width;
  if (static_cast<int>(perm.size()) != d)
    throw ShapeError("pixel permutation length " + std::to_string(perm.size()) +
                     " does not match image size " + std::to_string(d));
  invert_permutation(perm);  // validates that perm is a permutation
  Dataset out = ds;
  for (int i = 0; i < ds.count(); ++i) {
    out.values[static_cast<size_t>(i)] = apply_perm(ds.values[static_cast<size_t>(i)], perm);
    out.masks[static_cast<size_t>(i)] = apply_perm(ds.masks[static_cast<size_t>(i)], perm);
    if (ds.has_truth())
      out.truth[static_cast<size_t>(i)] = apply_perm(ds.truth[static_cast<size_t>(i)], perm);
  }
  return out;
}

std::pair<Dataset, std::vector<int>> permute_pixels(const Dataset& ds, uint64_t seed) {
  SeededRng rng(seed);
  std::vector<int> perm = rng.permutation(ds.height * ds.width);
  return {permute_pixels(ds, perm), std::move(perm)};
}

// ---- patches ----------------------------------------------------------------------------

Dataset extract_patches(const Dataset& ds, int patch_size, int per_image, uint64_t seed) {
  ds.validate();
  if (patch_size <= 0 || per_image <= 0)
    throw DataError("extract_patches requires positive patch size and count");
  if (patch_size > ds.height || patch_size > ds.width)
    throw DataError("patch size " + std::to_string(patch_size) + " exceeds image extents " +
                    std::to_string(ds.height) + "x" + std::to_string(ds.width));
  Dataset out;
  out.height = out.width = patch_size;
  out.name = ds.name + "-patch" + std::to_string(patch_size);
  out.sparsity = ds.sparsity;
  SeededRng root(seed);
  const auto crop = [patch_size](const Tensor& t, int r0, int c0) {
    Tensor o({patch_size, patch_size});
    for (int y = 0; y < patch_size; ++y)
      std::memcpy(o.data() + static_cast<size_t>(y) * patch_size,
                  t.data() + (static_cast<size_t>(r0 + y)) * t.dim(1) + c0,
                  sizeof(float) * static_cast<size_t>(patch_size));
    return o;
  };
  for (int i = 0; i < ds.count(); ++i) {
    SeededRng r = root.fork(static_cast<uint64_t>(i));
    for (int k = 0; k < per_image; ++k) {
      const int r0 = r.uniform_int(ds.height - patch_size + 1);
      const int c0 = r.uniform_int(ds.width - patch_size + 1);
      out.values.push_back(crop(ds.values[static_cast<size_t>(i)], r0, c0));
      out.masks.push_back(crop(ds.masks[static_cast<size_t>(i)], r0, c0));
      if (ds.has_truth()) out.truth.push_back(crop(ds.truth[static_cast<size_t>(i)], r0, c0));
      if (ds.has_labels()) out.labels.push_back(ds.labels[static_cast<size_t>(i)]);
    }
  }
  return out;
}

// ---- statistics ---------------------------------------------------------------------------

Tensor observed_pixel_mean(const Dataset& ds) {
  ds.validate();
  const int d = ds.height * ds.width;
  std::vector<double> sums(static_cast<size_t>(d), 0.0);
  std::vector<long long> counts(static_cast<size_t>(d), 0);
  double global_sum = 0.0;
  long long global_cnt = 0;
  for (int i = 0; i < ds.count(); ++i) {
    const Tensor& v = ds.values[static_cast<size_t>(i)];
    const Tensor& m = ds.masks[static_cast<size_t>(i)];
    for (int p = 0; p < d; ++p) {
      if (m[p] == 0.0f) continue;
      sums[static_cast<size_t>(p)] += v[p];
      ++counts[static_cast<size_t>(p)];
      global_sum += v[p];
      ++global_cnt;
    }
  }
  const float global_mean = global_cnt > 0 ? static_cast<float>(global_sum / global_cnt) : 0.0f;
  Tensor out({ds.height, ds.width});
  for (int p = 0; p < d; ++p)
    out[p] = counts[static_cast<size_t>(p)] > 0
                 ? static_cast<float>(sums[static_cast<size_t>(p)] / counts[static_cast<size_t>(p)])
                 : global_mean;
  return out;
}

}  // namespace ssub
