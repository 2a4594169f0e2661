#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace ssub {

// Contract violations on tensor shapes or layer wiring (caller bugs).
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed, truncated or otherwise unusable input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numerical failure: non-finite values, failed factorizations, divergence.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

// Product of dimensions; every dimension must be positive.
int shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);
void require_shape(bool cond, const std::string& msg);

using MatrixRMf = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// 64-byte-aligned allocator for tensor buffers. Eigen's vectorized reductions
// split head/tail work based on the runtime alignment of the data pointer;
// pinning every buffer to one alignment keeps their accumulation order — and
// therefore the result bits — independent of where the heap happens to land.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const {
    return true;
  }
};

using FloatBuffer = std::vector<float, AlignedAllocator<float>>;

// Dense row-major float32 tensor. The single value carrier for all math in
// this library. Conventional layouts: (H,W) for masks and flat images,
// (C,H,W) for feature maps, (Cout,Cin,Kh,Kw) for convolution kernels.
// Reductions and factorizations accumulate in float64 internally.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zero-filled
  Tensor(Shape shape, std::vector<float> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, float value);
  static Tensor scalar(float value) { return Tensor({1}, {value}); }
  static Tensor identity(int n);

  bool empty() const { return values_.empty(); }
  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const;
  int size() const { return static_cast<int>(values_.size()); }

  float* data() { return values_.data(); }
  const float* data() const { return values_.data(); }
  float operator[](int i) const { return values_[static_cast<size_t>(i)]; }
  float& operator[](int i) { return values_[static_cast<size_t>(i)]; }

  // Rank-2 element access.
  float at(int r, int c) const;
  float& at(int r, int c);

  // Eigen views over the buffer; `mat()` requires rank 2, `as_mat` reshapes.
  Eigen::Map<Eigen::VectorXf> flat();
  Eigen::Map<const Eigen::VectorXf> flat() const;
  Eigen::Map<MatrixRMf> mat();
  Eigen::Map<const MatrixRMf> mat() const;
  Eigen::Map<MatrixRMf> as_mat(int rows, int cols);
  Eigen::Map<const MatrixRMf> as_mat(int rows, int cols) const;

  Tensor reshaped(Shape shape) const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

 private:
  Shape shape_;
  FloatBuffer values_;
};

// Throws NumericError naming `what` and the flat index of the first
// non-finite entry.
void assert_finite(const Tensor& t, const std::string& what);

// Deterministic counter-free splitmix64 generator. Gaussians come from
// Box-Muller on two raw draws, so sequences are bit-identical across
// platforms (std::normal_distribution is not). `fork` derives an
// independent stream, letting parallel work share one root seed without
// sharing state.
class SeededRng {
 public:
  explicit SeededRng(uint64_t seed) : seed_(seed), state_(seed) {}

  uint64_t next_u64();
  double uniform();    // [0, 1)
  double gaussian();   // N(0, 1)
  float gaussian_f() { return static_cast<float>(gaussian()); }
  int uniform_int(int n);  // {0, ..., n-1}

  SeededRng fork(uint64_t stream) const;
  uint64_t seed() const { return seed_; }

  Tensor gaussian_tensor(Shape shape, float stddev = 1.0f);
  std::vector<int> permutation(int n);  // Fisher-Yates shuffle of 0..n-1

 private:
  uint64_t seed_;
  uint64_t state_;
};

}  // namespace ssub
