#pragma once

#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "ssub/sparse.hpp"

namespace ssub {

// Collection of equally sized, partially observed images. `values` are zero
// at missing sites; `truth` (when known, e.g. after sparsify) holds the dense
// originals used only for evaluation. `eval_uses` counts how often a split
// was consumed by an evaluation harness, as an audit against test reuse.
struct Dataset {
  int height = 0, width = 0;
  std::vector<Tensor> values;
  std::vector<Tensor> masks;
  std::vector<Tensor> truth;
  std::vector<int> labels;  // empty or one per image
  std::string name;
  double sparsity = 0.0;  // nominal missing fraction; 0 for dense data
  std::string split_tag;  // "", "train", "val" or "test"
  std::shared_ptr<int> eval_uses = std::make_shared<int>(0);

  int count() const { return static_cast<int>(values.size()); }
  bool has_truth() const { return !truth.empty(); }
  bool has_labels() const { return !labels.empty(); }
  bool dense() const;
  SparseSample sample(int i) const;
  Tensor truth_image(int i) const;
  int note_evaluation() const { return ++*eval_uses; }
  void validate() const;
};

// Subset in the given index order (shared eval counter is NOT inherited).
Dataset subset(const Dataset& ds, const std::vector<int>& indices);
// First n images in current order.
Dataset take(const Dataset& ds, int n);

// ---- IDX loading -------------------------------------------------------------

// Reads an IDX3 u8 image file (magic 0x00000803) and optionally its IDX1
// label file (magic 0x00000801). Pixels are scaled to [0,1] by 1/255 and the
// dataset comes back dense (all-ones masks, truth = values).
Dataset load_idx(const std::string& images_path, const std::string& labels_path = "");

// ---- variants ------------------------------------------------------------------

// Dataset variants applied to dense data:
//   "mnist-2"    keep label 2 only
//   "mnist-all"  unchanged
//   "mnist-rot"  each image rotated by a uniform random angle (bilinear,
//                zero background)
//   "fashion"    unchanged
//   "none"       unchanged
Dataset make_variant(const Dataset& base, const std::string& variant, uint64_t seed);
std::vector<std::string> variant_list();

// ---- masking --------------------------------------------------------------------

// Mask specifications: "random:S" hides a uniform random subset so that
// exactly round((1-S)*D) pixels per image stay observed; "stride:P:F" keeps
// the rows with row % P == F and hides everything else.
struct MaskSpec {
  enum class Kind { Random, Stride };
  Kind kind = Kind::Random;
  double sparsity = 0.0;  // Random
  int period = 0;         // Stride
  int phase = 0;          // Stride
  static MaskSpec parse(const std::string& text);
  std::string str() const;
};

// Hide pixels of a dense dataset according to `spec`; the dense originals
// move to `truth`. Masks are drawn independently per image from streams
// forked off `seed`, so they do not depend on processing order.
Dataset sparsify(const Dataset& dense, const MaskSpec& spec, uint64_t seed);

// ---- splits ---------------------------------------------------------------------

struct SplitResult {
  Dataset train, val, test;
};

// Shuffled partition with round(f*n) images in the first two splits and the
// remainder in the third. Fractions must be non-negative and sum to 1.
SplitResult split(const Dataset& ds, double f_train, double f_val, double f_test, uint64_t seed);

// ---- pixel permutation ------------------------------------------------------------

// out[i] = in[perm[i]] applied to values, masks and truth of every image.
// Feeding `invert_permutation(perm)` afterwards restores the original.
Dataset permute_pixels(const Dataset& ds, const std::vector<int>& perm);
std::pair<Dataset, std::vector<int>> permute_pixels(const Dataset& ds, uint64_t seed);
std::vector<int> identity_permutation(int n);
std::vector<int> invert_permutation(const std::vector<int>& perm);

// ---- patches -----------------------------------------------------------------------

// `per_image` random square crops from every image (values, masks and truth
// cropped consistently).
Dataset extract_patches(const Dataset& ds, int patch_size, int per_image, uint64_t seed);

// ---- statistics --------------------------------------------------------------------

// Per-pixel mean over observed entries; pixels never observed anywhere fall
// back to the global observed mean (0 for a fully empty dataset).
Tensor observed_pixel_mean(const Dataset& ds);

}  // namespace ssub
