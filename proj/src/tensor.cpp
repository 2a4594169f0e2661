#include "ssub/tensor.hpp"

#include <cmath>
#include <sstream>

namespace ssub {

int shape_size(const Shape& shape) {
  if (shape.empty()) throw ShapeError("empty shape");
  long long n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape));
    n *= d;
  }
  if (n > (1LL << 31)) throw ShapeError("shape too large: " + shape_str(shape));
  return static_cast<int>(n);
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ")";
  return os.str();
}

void require_shape(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  values_.assign(static_cast<size_t>(shape_size(shape_)), 0.0f);
}

Tensor::Tensor(Shape shape, std::vector<float> values)
    : shape_(std::move(shape)), values_(values.begin(), values.end()) {
  if (static_cast<size_t>(shape_size(shape_)) != values_.size())
    throw ShapeError("value count " + std::to_string(values_.size()) +
                     " does not match shape " + shape_str(shape_));
}

Tensor Tensor::full(Shape shape, float value) {
  Tensor t(std::move(shape));
  t.flat().setConstant(value);
  return t;
}

Tensor Tensor::identity(int n) {
  Tensor t({n, n});
  for (int i = 0; i < n; ++i) t.at(i, i) = 1.0f;
  return t;
}

int Tensor::dim(int i) const {
  if (i < 0 || i >= rank()) throw ShapeError("dim index out of range");
  return shape_[static_cast<size_t>(i)];
}

float Tensor::at(int r, int c) const {
  // Hot path: build the error messages only on failure.
  if (rank() != 2) throw ShapeError("at(r,c) requires rank 2, got " + shape_str(shape_));
  if (r < 0 || r >= shape_[0] || c < 0 || c >= shape_[1])
    throw ShapeError("at(" + std::to_string(r) + "," + std::to_string(c) +
                     ") out of range for " + shape_str(shape_));
  return values_[static_cast<size_t>(r) * shape_[1] + c];
}

float& Tensor::at(int r, int c) {
  if (rank() != 2) throw ShapeError("at(r,c) requires rank 2, got " + shape_str(shape_));
  if (r < 0 || r >= shape_[0] || c < 0 || c >= shape_[1])
    throw ShapeError("at(" + std::to_string(r) + "," + std::to_string(c) +
                     ") out of range for " + shape_str(shape_));
  return values_[static_cast<size_t>(r) * shape_[1] + c];
}

Eigen::Map<Eigen::VectorXf> Tensor::flat() {
  return {values_.data(), static_cast<Eigen::Index>(values_.size())};
}

Eigen::Map<const Eigen::VectorXf> Tensor::flat() const {
  return {values_.data(), static_cast<Eigen::Index>(values_.size())};
}

Eigen::Map<MatrixRMf> Tensor::mat() {
  require_shape(rank() == 2, "mat() requires rank 2, got " + shape_str(shape_));
  return {values_.data(), shape_[0], shape_[1]};
}

Eigen::Map<const MatrixRMf> Tensor::mat() const {
  require_shape(rank() == 2, "mat() requires rank 2, got " + shape_str(shape_));
  return {values_.data(), shape_[0], shape_[1]};
}

Eigen::Map<MatrixRMf> Tensor::as_mat(int rows, int cols) {
  require_shape(static_cast<long long>(rows) * cols == size(),
                "as_mat(" + std::to_string(rows) + "," + std::to_string(cols) +
                    ") does not cover tensor of size " + std::to_string(size()));
  return {values_.data(), rows, cols};
}

Eigen::Map<const MatrixRMf> Tensor::as_mat(int rows, int cols) const {
  require_shape(static_cast<long long>(rows) * cols == size(),
                "as_mat(" + std::to_string(rows) + "," + std::to_string(cols) +
                    ") does not cover tensor of size " + std::to_string(size()));
  return {values_.data(), rows, cols};
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != size())
    throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(shape) +
                     " changes element count");
  Tensor t;
  t.shape_ = std::move(shape);
  t.values_ = values_;
  return t;
}

void assert_finite(const Tensor& t, const std::string& what) {
  const float* p = t.data();
  for (int i = 0; i < t.size(); ++i) {
    if (!std::isfinite(p[i]))
      throw NumericError(what + ": non-finite value at flat index " + std::to_string(i));
  }
}

namespace {

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

uint64_t SeededRng::next_u64() { return splitmix64(state_); }

double SeededRng::uniform() {
  // 53 random bits -> double in [0, 1).
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double SeededRng::gaussian() {
  // Box-Muller; always consumes exactly two draws.
  double u1 = 1.0 - uniform();  // (0, 1]
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  return r * std::cos(2.0 * M_PI * u2);
}

int SeededRng::uniform_int(int n) {
  if (n <= 0) throw ShapeError("uniform_int requires n > 0");
  return static_cast<int>(uniform() * n);
}

SeededRng SeededRng::fork(uint64_t stream) const {
  uint64_t s = seed_ ^ (0x9E3779B97F4A7C15ULL * (stream + 1));
  uint64_t mixed = splitmix64(s);
  return SeededRng(mixed);
}

Tensor SeededRng::gaussian_tensor(Shape shape, float stddev) {
  Tensor t(std::move(shape));
  for (int i = 0; i < t.size(); ++i) t[i] = stddev * gaussian_f();
  return t;
}

std::vector<int> SeededRng::permutation(int n) {
  std::vector<int> p(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
  for (int i = n - 1; i > 0; --i) std::swap(p[static_cast<size_t>(i)], p[static_cast<size_t>(uniform_int(i + 1))]);
  return p;
}

}  // namespace ssub
