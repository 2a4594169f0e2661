#include "doctest.h"

#include "ssub/ops.hpp"
#include "ssub/sparse.hpp"
#include "oracles.hpp"

#include <cmath>

using namespace ssub;

namespace {

// Random binary mask with a fixed number of observed sites.
Tensor random_mask(Shape shape, int observed, SeededRng& rng) {
  Tensor m(shape);
  std::vector<int> perm = rng.permutation(m.size());
  for (int i = 0; i < observed; ++i) m[perm[static_cast<size_t>(i)]] = 1.0f;
  return m;
}

}  // namespace

TEST_CASE("check_mask accepts binary, rejects fractional entries") {
  CHECK_NOTHROW(check_mask(Tensor({2, 2}, {0, 1, 1, 0})));
  CHECK_THROWS_AS(check_mask(Tensor({2}, {0.5f, 1.0f})), DataError);
}

TEST_CASE("check_sample enforces zeros at missing sites") {
  SparseSample ok{Tensor({2}, {3, 0}), Tensor({2}, {1, 0})};
  CHECK_NOTHROW(check_sample(ok));
  SparseSample bad{Tensor({2}, {3, 7}), Tensor({2}, {1, 0})};
  CHECK_THROWS_AS(check_sample(bad), DataError);
  SparseSample mismatched{Tensor({2}, {3, 0}), Tensor({3}, {1, 0, 0})};
  CHECK_THROWS_AS(check_sample(mismatched), ShapeError);
}

TEST_CASE("observed_indices lists nonzero mask sites in flat order") {
  Tensor m({2, 3}, {0, 1, 0, 1, 1, 0});
  CHECK(observed_indices(m) == std::vector<int>{1, 3, 4});
  CHECK(observed_indices(Tensor({3})).empty());
}

TEST_CASE("sparse fc: single observed row recovers its coefficient") {
  SeededRng rng(1);
  SparseFcLayer layer("fc", 2, 1, 1e-7f, rng);
  layer.weight.value = Tensor({2, 1}, {1, 0});
  layer.offset.value = Tensor({2});
  Tensor y({2}, {3, 0});
  Tensor mask({2}, {1, 0});
  Tape t;
  Tensor r = sparse_fc_forward(t, layer, t.constant(y), mask).tensor();
  CHECK(r.shape() == Shape{1});
  CHECK(r[0] == doctest::Approx(3.0f).epsilon(1e-5));
}

TEST_CASE("sparse fc: only an uninformative row observed pins the code to zero") {
  SeededRng rng(2);
  SparseFcLayer layer("fc", 2, 1, 1e-5f, rng);
  layer.weight.value = Tensor({2, 1}, {1, 0});
  layer.offset.value = Tensor({2});
  Tensor y({2}, {0, 7});
  Tensor mask({2}, {0, 1});
  Tape t;
  Tensor r = sparse_fc_forward(t, layer, t.constant(y), mask).tensor();
  CHECK(r[0] == 0.0f);
}

TEST_CASE("sparse fc: all-zero mask gives a zero code") {
  SeededRng rng(3);
  SparseFcLayer layer("fc", 6, 2, 1e-5f, rng);
  Tape t;
  Tensor r = sparse_fc_forward(t, layer, t.constant(Tensor({6})), Tensor({6})).tensor();
  CHECK(r[0] == 0.0f);
  CHECK(r[1] == 0.0f);
}

TEST_CASE("sparse fc: full mask with orthonormal columns is the transpose projection") {
  SeededRng rng(4);
  SparseFcLayer layer("fc", 4, 2, 1e-7f, rng);
  // Orthonormal columns: e1 and (e2+e3)/sqrt(2).
  const float s = 1.0f / std::sqrt(2.0f);
  layer.weight.value = Tensor({4, 2}, {1, 0, 0, s, 0, s, 0, 0});
  layer.offset.value = Tensor({4});
  Tensor y({4}, {2, 1, 3, 9});
  Tensor mask({4}, {1, 1, 1, 1});
  Tape t;
  Tensor r = sparse_fc_forward(t, layer, t.constant(y), mask).tensor();
  CHECK(r[0] == doctest::Approx(2.0f).epsilon(1e-5));
  CHECK(r[1] == doctest::Approx(4.0f * s).epsilon(1e-5));
}

TEST_CASE("sparse fc: offset is subtracted before the fit") {
  SeededRng rng(5);
  SparseFcLayer layer("fc", 2, 1, 1e-7f, rng);
  layer.weight.value = Tensor({2, 1}, {1, 0});
  layer.offset.value = Tensor({2}, {1, 5});
  Tensor y({2}, {3, 0});
  Tensor mask({2}, {1, 0});
  Tape t;
  Tensor r = sparse_fc_forward(t, layer, t.constant(y), mask).tensor();
  CHECK(r[0] == doctest::Approx(2.0f).epsilon(1e-5));
}

TEST_CASE("sparse fc: 200 random instances match the row-deletion oracle") {
  SeededRng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const int dim = 2 + rng.uniform_int(19);          // D <= 20
    const int code = 1 + rng.uniform_int(std::min(5, dim));  // d <= 5
    SparseFcLayer layer("fc", dim, code, 1e-5f, rng);
    layer.weight.value = rng.gaussian_tensor({dim, code});
    layer.offset.value = rng.gaussian_tensor({dim}, 0.5f);
    Tensor truth = rng.gaussian_tensor({dim});
    Tensor mask = random_mask({dim}, rng.uniform_int(dim + 1), rng);
    Tensor y(truth.shape());
    for (int i = 0; i < dim; ++i) y[i] = truth[i] * mask[i];

    Tape t;
    Tensor got = sparse_fc_forward(t, layer, t.constant(y), mask).tensor();
    Tensor want = oracle::masked_ridge_solve(layer.weight.value, layer.offset.value, y, mask, 1e-5);
    REQUIRE(got.size() == want.size());
    for (int j = 0; j < code; ++j) {
      CAPTURE(trial);
      CHECK(got[j] == doctest::Approx(want[j]).epsilon(1e-5));
    }
  }
}

TEST_CASE("sparse fc: tensor-level response agrees with the tape op") {
  SeededRng rng(7);
  SparseFcLayer layer("fc", 10, 3, 1e-5f, rng);
  Tensor y = rng.gaussian_tensor({10});
  Tensor mask = random_mask({10}, 6, rng);
  for (int i = 0; i < 10; ++i) y[i] *= mask[i];
  Tape t;
  Tensor a = sparse_fc_forward(t, layer, t.constant(y), mask).tensor();
  Tensor b = sparse_fc_response(layer.weight.value, layer.offset.value, y, mask, 1e-5);
  for (int j = 0; j < 3; ++j) CHECK(a[j] == b[j]);
}

TEST_CASE("sparse fc: bit-identical under a consistent pixel permutation") {
  SeededRng rng(8);
  const int dim = 48, code = 5;
  SparseFcLayer layer("fc", dim, code, 1e-5f, rng);
  layer.weight.value = rng.gaussian_tensor({dim, code});
  layer.offset.value = rng.gaussian_tensor({dim}, 0.5f);
  Tensor y = rng.gaussian_tensor({dim});
  Tensor mask = random_mask({dim}, 17, rng);
  for (int i = 0; i < dim; ++i) y[i] *= mask[i];
  Tensor base = sparse_fc_response(layer.weight.value, layer.offset.value, y, mask, 1e-5);

  SeededRng prng(9);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<int> perm = prng.permutation(dim);
    Tensor wp({dim, code}), op({dim}), yp({dim}), mp({dim});
    for (int i = 0; i < dim; ++i) {
      op[i] = layer.offset.value[perm[static_cast<size_t>(i)]];
      yp[i] = y[perm[static_cast<size_t>(i)]];
      mp[i] = mask[perm[static_cast<size_t>(i)]];
      for (int j = 0; j < code; ++j) wp.at(i, j) = layer.weight.value.at(perm[static_cast<size_t>(i)], j);
    }
    Tensor permuted = sparse_fc_response(wp, op, yp, mp, 1e-5);
    for (int j = 0; j < code; ++j) CHECK(permuted[j] == base[j]);
  }
}

TEST_CASE("propagate_mask dilates by the kernel footprint") {
  Tensor m({1, 3}, {1, 0, 0});
  Tensor out = propagate_mask(m, 3);
  CHECK(out[0] == 1.0f);
  CHECK(out[1] == 1.0f);
  CHECK(out[2] == 0.0f);
}

TEST_CASE("propagate_mask saturates and preserves all-ones / all-zeros") {
  Tensor ones({2, 2}, {1, 1, 1, 1});
  Tensor out = propagate_mask(ones, 3);
  for (int i = 0; i < 4; ++i) CHECK(out[i] == 1.0f);
  Tensor zeros({2, 2});
  out = propagate_mask(zeros, 3);
  for (int i = 0; i < 4; ++i) CHECK(out[i] == 0.0f);
}

TEST_CASE("propagate_mask is monotone in the input mask") {
  SeededRng rng(10);
  Tensor small = random_mask({6, 6}, 5, rng);
  Tensor big = small;
  SeededRng rng2(11);
  Tensor extra = random_mask({6, 6}, 8, rng2);
  for (int i = 0; i < 36; ++i) big[i] = std::max(big[i], extra[i]);
  Tensor ps = propagate_mask(small, 3);
  Tensor pb = propagate_mask(big, 3);
  for (int i = 0; i < 36; ++i) CHECK(pb[i] >= ps[i]);
}

TEST_CASE("propagate_mask saturates a 28-wide row from one observation") {
  // extent 3 reaches one step per application: ceil(27 / 1) applications fill
  // the row from a single observed pixel.
  Tensor m({1, 28});
  m[0] = 1.0f;
  for (int it = 0; it < 27; ++it) m = propagate_mask(m, 3);
  for (int i = 0; i < 28; ++i) CHECK(m[i] == 1.0f);
}

TEST_CASE("sparse conv: the worked 1x3 slice") {
  // One row, kernel all ones: at the center |N| = 3, two of the three taps
  // observed, so the response is (3/2) * (2 + 4) = 9.
  Tape t;
  Tensor x({1, 1, 3}, {2, 0, 4});
  Tensor mask({1, 3}, {1, 0, 1});
  Tensor kernel({1, 1, 1, 3}, {1, 1, 1});
  Tensor bias({1});
  SparseConvOut out = sparse_conv2d(t, t.constant(x), mask, t.constant(kernel), t.constant(bias));
  Tensor r = out.response.tensor();
  CHECK(r.shape() == Shape{1, 1, 3});
  CHECK(r[1] == doctest::Approx(9.0f));
}

TEST_CASE("sparse conv: full mask equals dense conv2d at interior pixels") {
  SeededRng rng(12);
  Tensor x = rng.gaussian_tensor({2, 6, 6});
  Tensor kernel = rng.gaussian_tensor({3, 2, 3, 3});
  Tensor bias = rng.gaussian_tensor({3});
  Tensor mask({6, 6});
  for (int i = 0; i < 36; ++i) mask[i] = 1.0f;

  Tape t;
  SparseConvOut sp = sparse_conv2d(t, t.constant(x), mask, t.constant(kernel), t.constant(bias));
  Tensor dense = add_channel_bias(conv2d(t.constant(x), t.constant(kernel), Pad::Same),
                                  t.constant(bias)).tensor();
  Tensor got = sp.response.tensor();
  for (int c = 0; c < 3; ++c)
    for (int i = 1; i < 5; ++i)
      for (int j = 1; j < 5; ++j) {
        const int idx = (c * 6 + i) * 6 + j;
        CHECK(std::abs(got[idx] - dense[idx]) < 1e-5f);
      }
  for (int i = 0; i < 36; ++i) CHECK(sp.mask[i] == 1.0f);
}

TEST_CASE("sparse conv: all-zero mask gives zero response and zero mask") {
  SeededRng rng(13);
  Tensor x({1, 4, 4});
  Tensor kernel = rng.gaussian_tensor({2, 1, 3, 3});
  Tensor bias = rng.gaussian_tensor({2});
  Tape t;
  SparseConvOut out = sparse_conv2d(t, t.constant(x), Tensor({4, 4}), t.constant(kernel),
                                    t.constant(bias));
  Tensor r = out.response.tensor();
  for (int i = 0; i < r.size(); ++i) CHECK(r[i] == 0.0f);
  for (int i = 0; i < 16; ++i) CHECK(out.mask[i] == 0.0f);
}

TEST_CASE("sparse conv: random 8x8 at 50% mask matches a direct loop oracle") {
  SeededRng rng(14);
  Tensor x0 = rng.gaussian_tensor({1, 8, 8});
  Tensor kernel = rng.gaussian_tensor({2, 1, 3, 3});
  Tensor bias = rng.gaussian_tensor({2});
  Tensor mask = random_mask({8, 8}, 32, rng);
  Tensor x({1, 8, 8});
  for (int i = 0; i < 64; ++i) x[i] = x0[i] * mask[i];

  Tape t;
  SparseConvOut out = sparse_conv2d(t, t.constant(x), mask, t.constant(kernel), t.constant(bias));
  Tensor got = out.response.tensor();

  // Direct evaluation of r_k = (|N|/sum m) * sum m y c, bias where propagated.
  for (int f = 0; f < 2; ++f)
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j) {
        double num = 0.0;
        int in_bounds = 0;
        double msum = 0.0;
        for (int di = -1; di <= 1; ++di)
          for (int dj = -1; dj <= 1; ++dj) {
            const int si = i + di, sj = j + dj;
            if (si < 0 || si >= 8 || sj < 0 || sj >= 8) continue;
            ++in_bounds;
            const double mv = mask.at(si, sj);
            msum += mv;
            num += mv * x[(0 * 8 + si) * 8 + sj] *
                   kernel[((f * 1 + 0) * 3 + (di + 1)) * 3 + (dj + 1)];
          }
        double want = msum > 0.0 ? (in_bounds / msum) * num + bias[f] : 0.0;
        CHECK(std::abs(got[(f * 8 + i) * 8 + j] - want) < 1e-5);
      }
}

TEST_CASE("masked pool: worked window examples") {
  Tape t;
  SUBCASE("partially observed window takes the observed max") {
    Tensor x({1, 2, 2}, {1, 5, 9, 9});
    Tensor mask({2, 2}, {1, 1, 0, 0});
    MaskedPoolOut out = masked_maxpool(t, t.constant(x), mask);
    CHECK(out.values.tensor()[0] == 5.0f);
    CHECK(out.mask[0] == 1.0f);
  }
  SUBCASE("all-unobserved window yields value 0, mask 0") {
    Tensor x({1, 2, 2}, {1, 5, 9, 9});
    MaskedPoolOut out = masked_maxpool(t, t.constant(x), Tensor({2, 2}));
    CHECK(out.values.tensor()[0] == 0.0f);
    CHECK(out.mask[0] == 0.0f);
  }
  SUBCASE("negative observed values are not beaten by the zero fill") {
    Tensor x({1, 2, 2}, {-3, -7, 0, 0});
    Tensor mask({2, 2}, {1, 1, 0, 0});
    MaskedPoolOut out = masked_maxpool(t, t.constant(x), mask);
    CHECK(out.values.tensor()[0] == -3.0f);
  }
}

TEST_CASE("masked pool: full mask equals plain maxpool2d") {
  SeededRng rng(15);
  Tensor x = rng.gaussian_tensor({3, 6, 6});
  Tensor mask({6, 6});
  for (int i = 0; i < 36; ++i) mask[i] = 1.0f;
  Tape t;
  MaskedPoolOut masked = masked_maxpool(t, t.constant(x), mask);
  Tensor plain = maxpool2d(t.constant(x)).tensor();
  Tensor got = masked.values.tensor();
  REQUIRE(got.shape() == plain.shape());
  for (int i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - plain[i]) < 1e-5f);
  for (int i = 0; i < 9; ++i) CHECK(masked.mask[i] == 1.0f);
}

TEST_CASE("fill_zero keeps observed values and zeroes the rest") {
  SparseSample s{Tensor({1, 2}, {3, 0}), Tensor({1, 2}, {1, 0})};
  Tensor out = fill_zero(s);
  CHECK(out[0] == 3.0f);
  CHECK(out[1] == 0.0f);
}

TEST_CASE("fill_mean substitutes the pixel mean at missing sites only") {
  SparseSample s{Tensor({1, 2}, {9, 0}), Tensor({1, 2}, {1, 0})};
  Tensor mean({1, 2}, {1, 2});
  Tensor out = fill_mean(s, mean);
  CHECK(out[0] == 9.0f);
  CHECK(out[1] == 2.0f);
}

TEST_CASE("fill_interp: the 1x5 anchored row") {
  SparseSample s{Tensor({1, 5}, {10, 0, 0, 0, 50}), Tensor({1, 5}, {1, 0, 0, 0, 1})};
  Tensor out = fill_interp(s);
  CHECK(out[0] == doctest::Approx(10.0f));
  CHECK(out[1] == doctest::Approx(20.0f));
  CHECK(out[2] == doctest::Approx(30.0f));
  CHECK(out[3] == doctest::Approx(40.0f));
  CHECK(out[4] == doctest::Approx(50.0f));
}

TEST_CASE("fill_interp: exact on affine images when row anchors exist") {
  // v(i,j) = 2 + 3j along every row; keep two anchors per row.
  Tensor truth({4, 6});
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 6; ++j) truth.at(i, j) = 2.0f + 3.0f * float(j);
  Tensor mask({4, 6});
  for (int i = 0; i < 4; ++i) {
    mask.at(i, (i * 2) % 6) = 1.0f;
    mask.at(i, ((i * 2) % 6 + 3) % 6) = 1.0f;
  }
  Tensor vals({4, 6});
  for (int i = 0; i < 24; ++i) vals[i] = truth[i] * mask[i];
  Tensor out = fill_interp({vals, mask});
  for (int i = 0; i < 24; ++i) CHECK(out[i] == doctest::Approx(truth[i]).epsilon(1e-6));
}

TEST_CASE("fill_interp: stride-observed rows reconstruct column-affine images") {
  // v(i,j) = a_j + b_j * i, observed only on rows {0, 6, 12, 18, 24}: the
  // column pass interpolates/extrapolates the affine profile exactly.
  const int h = 28, w = 4;
  Tensor truth({h, w});
  const float a[4] = {0.5f, -1.0f, 2.0f, 0.0f};
  const float b[4] = {0.1f, 0.02f, -0.05f, 0.25f};
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) truth.at(i, j) = a[j] + b[j] * float(i);
  Tensor mask({h, w});
  for (int i = 0; i < h; i += 6)
    for (int j = 0; j < w; ++j) mask.at(i, j) = 1.0f;
  Tensor vals({h, w});
  for (int i = 0; i < h * w; ++i) vals[i] = truth[i] * mask[i];
  Tensor out = fill_interp({vals, mask});
  for (int i = 0; i < h * w; ++i) CHECK(out[i] == doctest::Approx(truth[i]).epsilon(1e-5));
}

TEST_CASE("fill_interp: no observations returns all zeros") {
  SparseSample s{Tensor({2, 2}), Tensor({2, 2})};
  Tensor out = fill_interp(s);
  for (int i = 0; i < 4; ++i) CHECK(out[i] == 0.0f);
}

TEST_CASE("fill_interp: isolated pixel falls back to the observed mean") {
  // Single observed pixel: no line has two anchors, every missing pixel gets
  // the observed mean (= the single value).
  Tensor vals({3, 3});
  Tensor mask({3, 3});
  vals.at(1, 1) = 4.0f;
  mask.at(1, 1) = 1.0f;
  Tensor out = fill_interp({vals, mask});
  for (int i = 0; i < 9; ++i) CHECK(out[i] == doctest::Approx(4.0f));
}
