#include "doctest.h"

#include "ssub/data.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

using namespace ssub;

namespace {

// Minimal synthetic IDX pair written to a temp directory.
struct IdxFixture {
  std::filesystem::path dir, images, labels;

  IdxFixture() {
    dir = std::filesystem::temp_directory_path() /
          ("ssub-idx-" + std::to_string(::getpid()) + "-" + std::to_string(counter()++));
    std::filesystem::create_directories(dir);
    images = dir / "images.idx3";
    labels = dir / "labels.idx1";
  }
  ~IdxFixture() { std::filesystem::remove_all(dir); }

  static int& counter() {
    static int c = 0;
    return c;
  }

  static void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& b) {
    std::ofstream f(p, std::ios::binary);
    f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  }

  // n images of h x w followed by the raw pixel bytes.
  void write_images(int n, int h, int w, const std::vector<unsigned char>& pixels) const {
    std::vector<unsigned char> b = {0, 0, 8, 3};
    for (int v : {n, h, w}) {
      b.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
      b.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
      b.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
      b.push_back(static_cast<unsigned char>(v & 0xff));
    }
    b.insert(b.end(), pixels.begin(), pixels.end());
    write_bytes(images, b);
  }

  void write_labels(const std::vector<unsigned char>& lab) const {
    std::vector<unsigned char> b = {0, 0, 8, 1};
    const int n = static_cast<int>(lab.size());
    b.push_back(static_cast<unsigned char>((n >> 24) & 0xff));
    b.push_back(static_cast<unsigned char>((n >> 16) & 0xff));
    b.push_back(static_cast<unsigned char>((n >> 8) & 0xff));
    b.push_back(static_cast<unsigned char>(n & 0xff));
    b.insert(b.end(), lab.begin(), lab.end());
    write_bytes(labels, b);
  }
};

Dataset tiny_dense(int n, int h, int w, uint64_t seed) {
  Dataset ds;
  ds.height = h;
  ds.width = w;
  ds.name = "tiny";
  SeededRng rng(seed);
  for (int i = 0; i < n; ++i) {
    Tensor img({h, w});
    for (int p = 0; p < img.size(); ++p) img[p] = 0.5f + 0.4f * std::sin(float(p + i));
    Tensor mask({h, w});
    mask.flat().setConstant(1.0f);
    ds.values.push_back(img);
    ds.masks.push_back(mask);
    ds.truth.push_back(img);
    ds.labels.push_back(i % 3);
  }
  return ds;
}

}  // namespace

TEST_CASE("load_idx: the documented 2x2x2 header parses") {
  IdxFixture fx;
  fx.write_images(2, 2, 2, {0, 51, 102, 153, 204, 255, 10, 20});
  Dataset ds = load_idx(fx.images.string());
  CHECK(ds.count() == 2);
  CHECK(ds.height == 2);
  CHECK(ds.width == 2);
  CHECK(ds.dense());
  CHECK(ds.values[0][0] == doctest::Approx(0.0f));
  CHECK(ds.values[0][1] == doctest::Approx(51.0f / 255.0f));
  CHECK(ds.values[1][1] == doctest::Approx(1.0f));  // byte 255 -> 1.0
}

TEST_CASE("load_idx: labels attach one per image") {
  IdxFixture fx;
  fx.write_images(2, 2, 2, std::vector<unsigned char>(8, 7));
  fx.write_labels({4, 9});
  Dataset ds = load_idx(fx.images.string(), fx.labels.string());
  CHECK(ds.labels == std::vector<int>{4, 9});
}

TEST_CASE("load_idx: error cases are distinct") {
  IdxFixture fx;
  SUBCASE("bad magic") {
    IdxFixture::write_bytes(fx.images, {1, 2, 3, 4, 0, 0, 0, 1});
    CHECK_THROWS_WITH_AS(load_idx(fx.images.string()),
                         doctest::Contains("magic"), DataError);
  }
  SUBCASE("truncated payload") {
    fx.write_images(2, 2, 2, {1, 2, 3});  // needs 8 pixel bytes
    CHECK_THROWS_WITH_AS(load_idx(fx.images.string()),
                         doctest::Contains("truncated"), DataError);
  }
  SUBCASE("label count mismatch") {
    fx.write_images(2, 2, 2, std::vector<unsigned char>(8, 0));
    fx.write_labels({1});
    CHECK_THROWS_AS(load_idx(fx.images.string(), fx.labels.string()), DataError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_idx((fx.dir / "nope.idx3").string()), DataError);
  }
}

TEST_CASE("make_variant: mnist-2 keeps only label-2 images") {
  Dataset ds = tiny_dense(9, 4, 4, 1);  // labels cycle 0,1,2
  Dataset two = make_variant(ds, "mnist-2", 5);
  CHECK(two.count() == 3);
  for (int l : two.labels) CHECK(l == 2);
}

TEST_CASE("make_variant: mnist-all and fashion pass data through") {
  Dataset ds = tiny_dense(4, 4, 4, 2);
  for (const char* v : {"mnist-all", "fashion", "none"}) {
    Dataset out = make_variant(ds, v, 5);
    REQUIRE(out.count() == 4);
    for (int i = 0; i < 4; ++i)
      for (int p = 0; p < 16; ++p) CHECK(out.values[static_cast<size_t>(i)][p] == ds.values[static_cast<size_t>(i)][p]);
  }
  CHECK_THROWS_AS(make_variant(ds, "bogus", 5), DataError);
}

TEST_CASE("make_variant: mnist-rot is seed-deterministic and changes images") {
  Dataset ds = tiny_dense(6, 8, 8, 3);
  Dataset a = make_variant(ds, "mnist-rot", 11);
  Dataset b = make_variant(ds, "mnist-rot", 11);
  REQUIRE(a.count() == 6);
  bool changed = false;
  for (int i = 0; i < 6; ++i)
    for (int p = 0; p < 64; ++p) {
      CHECK(a.values[static_cast<size_t>(i)][p] == b.values[static_cast<size_t>(i)][p]);
      changed = changed || a.values[static_cast<size_t>(i)][p] != ds.values[static_cast<size_t>(i)][p];
    }
  CHECK(changed);
}

TEST_CASE("mask spec: parse and round-trip") {
  MaskSpec r = MaskSpec::parse("random:0.75");
  CHECK(r.kind == MaskSpec::Kind::Random);
  CHECK(r.sparsity == doctest::Approx(0.75));
  CHECK(MaskSpec::parse(r.str()).sparsity == doctest::Approx(0.75));

  MaskSpec s = MaskSpec::parse("stride:6:0");
  CHECK(s.kind == MaskSpec::Kind::Stride);
  CHECK(s.period == 6);
  CHECK(s.phase == 0);
  CHECK(MaskSpec::parse(s.str()).period == 6);

  CHECK_THROWS_AS(MaskSpec::parse("bogus:1"), DataError);
  CHECK_THROWS_AS(MaskSpec::parse("random:1.0"), DataError);  // sparsity must be < 1
  CHECK_THROWS_AS(MaskSpec::parse("stride:0:0"), DataError);
}

TEST_CASE("sparsify: random masks keep exactly round((1-s)*D) pixels") {
  Dataset ds = tiny_dense(5, 28, 28, 4);
  Dataset sp = sparsify(ds, MaskSpec::parse("random:0.9"), 7);
  CHECK(sp.sparsity == doctest::Approx(0.9));
  CHECK(sp.has_truth());
  for (int i = 0; i < sp.count(); ++i) {
    int observed = 0;
    for (int p = 0; p < 784; ++p) observed += sp.masks[static_cast<size_t>(i)][p] != 0.0f;
    CHECK(observed == 78);  // round(0.1 * 784)
  }
}

TEST_CASE("sparsify: observed values survive, missing are zeroed, truth kept") {
  Dataset ds = tiny_dense(3, 6, 6, 5);
  Dataset sp = sparsify(ds, MaskSpec::parse("random:0.5"), 9);
  for (int i = 0; i < 3; ++i) {
    for (int p = 0; p < 36; ++p) {
      if (sp.masks[static_cast<size_t>(i)][p] != 0.0f)
        CHECK(sp.values[static_cast<size_t>(i)][p] == ds.values[static_cast<size_t>(i)][p]);
      else
        CHECK(sp.values[static_cast<size_t>(i)][p] == 0.0f);
      CHECK(sp.truth[static_cast<size_t>(i)][p] == ds.values[static_cast<size_t>(i)][p]);
    }
  }
}

TEST_CASE("sparsify: same seed gives identical masks, different seeds differ") {
  Dataset ds = tiny_dense(4, 10, 10, 6);
  Dataset a = sparsify(ds, MaskSpec::parse("random:0.8"), 21);
  Dataset b = sparsify(ds, MaskSpec::parse("random:0.8"), 21);
  Dataset c = sparsify(ds, MaskSpec::parse("random:0.8"), 22);
  bool differs = false;
  for (int i = 0; i < 4; ++i)
    for (int p = 0; p < 100; ++p) {
      CHECK(a.masks[static_cast<size_t>(i)][p] == b.masks[static_cast<size_t>(i)][p]);
      differs = differs || a.masks[static_cast<size_t>(i)][p] != c.masks[static_cast<size_t>(i)][p];
    }
  CHECK(differs);
}

TEST_CASE("sparsify: masks are independent across images") {
  Dataset ds = tiny_dense(2, 10, 10, 7);
  Dataset sp = sparsify(ds, MaskSpec::parse("random:0.5"), 13);
  bool differs = false;
  for (int p = 0; p < 100; ++p) differs = differs || sp.masks[0][p] != sp.masks[1][p];
  CHECK(differs);
}

TEST_CASE("sparsify: stride period 6 on 28 rows observes rows 0,6,12,18,24") {
  Dataset ds = tiny_dense(2, 28, 28, 8);
  Dataset sp = sparsify(ds, MaskSpec::parse("stride:6:0"), 3);
  CHECK(sp.sparsity == doctest::Approx(1.0 - 5.0 / 28.0));
  const std::set<int> want = {0, 6, 12, 18, 24};
  for (int i = 0; i < 2; ++i) {
    std::set<int> got;
    for (int r = 0; r < 28; ++r) {
      bool any = false, all = true;
      for (int c = 0; c < 28; ++c) {
        const bool on = sp.masks[static_cast<size_t>(i)].at(r, c) != 0.0f;
        any = any || on;
        all = all && on;
      }
      CHECK(any == all);  // rows are fully kept or fully hidden
      if (any) got.insert(r);
    }
    CHECK(got == want);
  }
}

TEST_CASE("sparsify: stride phase shifts the observed rows") {
  Dataset ds = tiny_dense(1, 12, 4, 9);
  Dataset sp = sparsify(ds, MaskSpec::parse("stride:4:1"), 3);
  for (int r = 0; r < 12; ++r)
    CHECK((sp.masks[0].at(r, 0) != 0.0f) == (r % 4 == 1));
}

TEST_CASE("split: documented sizes, disjoint union, determinism") {
  Dataset ds = tiny_dense(10, 4, 4, 10);
  SplitResult sr = split(ds, 0.5, 0.3, 0.2, 17);
  CHECK(sr.train.count() == 5);
  CHECK(sr.val.count() == 3);
  CHECK(sr.test.count() == 2);
  CHECK(sr.train.split_tag == "train");
  CHECK(sr.val.split_tag == "val");
  CHECK(sr.test.split_tag == "test");

  // Disjointness + union via the per-image fingerprints (first pixel values
  // are distinct by construction of tiny_dense).
  std::set<float> seen;
  for (const Dataset* d : {&sr.train, &sr.val, &sr.test})
    for (const Tensor& img : d->values) seen.insert(img[0]);
  std::set<float> all;
  for (const Tensor& img : ds.values) all.insert(img[0]);
  CHECK(seen == all);

  SplitResult again = split(ds, 0.5, 0.3, 0.2, 17);
  for (int i = 0; i < 5; ++i) CHECK(again.train.values[static_cast<size_t>(i)][0] == sr.train.values[static_cast<size_t>(i)][0]);
  SplitResult other = split(ds, 0.5, 0.3, 0.2, 18);
  bool differs = false;
  for (int i = 0; i < 5; ++i) differs = differs || other.train.values[static_cast<size_t>(i)][0] != sr.train.values[static_cast<size_t>(i)][0];
  CHECK(differs);
}

TEST_CASE("split: rejects bad fractions and empty requested splits") {
  Dataset ds = tiny_dense(10, 4, 4, 11);
  CHECK_THROWS_AS(split(ds, 0.5, 0.3, 0.4, 1), DataError);
  // A positive fraction that rounds to zero images is an error...
  CHECK_THROWS_AS(split(tiny_dense(3, 4, 4, 11), 0.5, 0.3, 0.2, 1), DataError);
  // ...but an explicitly zero fraction may come back empty.
  SplitResult sr = split(ds, 0.8, 0.2, 0.0, 1);
  CHECK(sr.test.count() == 0);
}

TEST_CASE("permute_pixels: round trip restores the dataset bit-exactly") {
  Dataset ds = sparsify(tiny_dense(3, 6, 6, 12), MaskSpec::parse("random:0.5"), 31);
  auto [permuted, perm] = permute_pixels(ds, 41);
  CHECK(perm.size() == 36);
  Dataset back = permute_pixels(permuted, invert_permutation(perm));
  for (int i = 0; i < 3; ++i)
    for (int p = 0; p < 36; ++p) {
      CHECK(back.values[static_cast<size_t>(i)][p] == ds.values[static_cast<size_t>(i)][p]);
      CHECK(back.masks[static_cast<size_t>(i)][p] == ds.masks[static_cast<size_t>(i)][p]);
      CHECK(back.truth[static_cast<size_t>(i)][p] == ds.truth[static_cast<size_t>(i)][p]);
    }
}

TEST_CASE("permute_pixels: identity permutation changes nothing") {
  Dataset ds = tiny_dense(2, 5, 5, 13);
  Dataset same = permute_pixels(ds, identity_permutation(25));
  for (int i = 0; i < 2; ++i)
    for (int p = 0; p < 25; ++p) CHECK(same.values[static_cast<size_t>(i)][p] == ds.values[static_cast<size_t>(i)][p]);
}

TEST_CASE("permute_pixels: masks move with values, observed count preserved") {
  Dataset ds = sparsify(tiny_dense(2, 6, 6, 14), MaskSpec::parse("random:0.75"), 5);
  auto [permuted, perm] = permute_pixels(ds, 6);
  for (int i = 0; i < 2; ++i) {
    int before = 0, after = 0;
    for (int p = 0; p < 36; ++p) {
      before += ds.masks[static_cast<size_t>(i)][p] != 0.0f;
      after += permuted.masks[static_cast<size_t>(i)][p] != 0.0f;
      CHECK(permuted.values[static_cast<size_t>(i)][p] ==
            ds.values[static_cast<size_t>(i)][perm[static_cast<size_t>(p)]]);
      CHECK(permuted.masks[static_cast<size_t>(i)][p] ==
            ds.masks[static_cast<size_t>(i)][perm[static_cast<size_t>(p)]]);
    }
    CHECK(before == after);
  }
}

TEST_CASE("extract_patches: shape, bounds and determinism") {
  Dataset ds = tiny_dense(3, 70, 70, 15);
  Dataset a = extract_patches(ds, 64, 2, 19);
  CHECK(a.count() == 6);
  CHECK(a.height == 64);
  CHECK(a.width == 64);
  Dataset b = extract_patches(ds, 64, 2, 19);
  for (int i = 0; i < 6; ++i)
    for (int p = 0; p < 64 * 64; p += 97)
      CHECK(a.values[static_cast<size_t>(i)][p] == b.values[static_cast<size_t>(i)][p]);
  CHECK_THROWS_AS(extract_patches(tiny_dense(1, 32, 32, 16), 64, 1, 3), DataError);
}

TEST_CASE("extract_patches: patch content is a window of the source") {
  Dataset ds = tiny_dense(1, 12, 12, 17);
  Dataset p = extract_patches(ds, 4, 3, 23);
  for (int k = 0; k < 3; ++k) {
    bool found = false;
    for (int r = 0; r + 4 <= 12 && !found; ++r)
      for (int c = 0; c + 4 <= 12 && !found; ++c) {
        bool match = true;
        for (int i = 0; i < 4 && match; ++i)
          for (int j = 0; j < 4 && match; ++j)
            match = p.values[static_cast<size_t>(k)].at(i, j) == ds.values[0].at(r + i, c + j);
        found = match;
      }
    CHECK(found);
  }
}

TEST_CASE("observed_pixel_mean averages per pixel over observed entries") {
  Dataset ds;
  ds.height = 1;
  ds.width = 2;
  ds.name = "m";
  // Pixel 0 observed as 1 and 3 -> mean 2; pixel 1 never observed -> global
  // observed mean (1+3)/2 = 2.
  ds.values = {Tensor({1, 2}, {1, 0}), Tensor({1, 2}, {3, 0})};
  ds.masks = {Tensor({1, 2}, {1, 0}), Tensor({1, 2}, {1, 0})};
  Tensor mean = observed_pixel_mean(ds);
  CHECK(mean[0] == doctest::Approx(2.0f));
  CHECK(mean[1] == doctest::Approx(2.0f));
}

TEST_CASE("dataset: subset, take and the evaluation audit counter") {
  Dataset ds = tiny_dense(5, 4, 4, 18);
  Dataset sub = subset(ds, {4, 0});
  CHECK(sub.count() == 2);
  CHECK(sub.values[0][0] == ds.values[4][0]);
  CHECK(sub.labels == std::vector<int>{ds.labels[4], ds.labels[0]});
  Dataset first = take(ds, 3);
  CHECK(first.count() == 3);

  CHECK(*ds.eval_uses == 0);
  CHECK(ds.note_evaluation() == 1);
  CHECK(*ds.eval_uses == 1);
  // The counter is shared across copies of the same split object...
  Dataset copy = ds;
  copy.note_evaluation();
  CHECK(*ds.eval_uses == 2);
  // ...but not inherited by subsets.
  CHECK(*sub.eval_uses == 0);
}

TEST_CASE("dataset: validate catches shape and mask violations") {
  Dataset ds = tiny_dense(2, 4, 4, 19);
  CHECK_NOTHROW(ds.validate());
  Dataset bad = ds;
  bad.values[1] = Tensor({3, 4});
  CHECK_THROWS_AS(bad.validate(), DataError);
  Dataset bad2 = ds;
  bad2.masks[0][0] = 0.5f;
  CHECK_THROWS_AS(bad2.validate(), DataError);
}

TEST_CASE("dataset: sample pairs values with masks") {
  Dataset ds = sparsify(tiny_dense(2, 4, 4, 20), MaskSpec::parse("random:0.5"), 44);
  SparseSample s = ds.sample(1);
  for (int p = 0; p < 16; ++p) {
    CHECK(s.values[p] == ds.values[1][p]);
    CHECK(s.mask[p] == ds.masks[1][p]);
  }
  Tensor truth = ds.truth_image(1);
  for (int p = 0; p < 16; ++p) CHECK(truth[p] == ds.truth[1][p]);
  CHECK_THROWS_AS(ds.sample(5), ShapeError);
}
