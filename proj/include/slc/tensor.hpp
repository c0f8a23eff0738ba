#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "slc/error.hpp"

namespace slc {

inline constexpr std::size_t kMaxRank = 5;

/// Dimensions of a dense row-major tensor. Rank is 1 to 5 and every dim is
/// at least 1.
class Shape {
 public:
  Shape() : dims_{1}, numel_{1} {}
  Shape(std::initializer_list<std::size_t> dims) : Shape(std::vector<std::size_t>(dims)) {}
  explicit Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
    if (dims_.empty() || dims_.size() > kMaxRank) {
      throw ShapeError("shape rank must be in [1, 5], got " + std::to_string(dims_.size()));
    }
    numel_ = 1;
    for (std::size_t d : dims_) {
      if (d == 0) throw ShapeError("shape dims must be >= 1: " + to_string());
      if (numel_ > std::numeric_limits<std::size_t>::max() / d) {
        throw ShapeError("element count overflows size_t: " + to_string());
      }
      numel_ *= d;
    }
  }

  std::size_t rank() const { return dims_.size(); }
  std::size_t numel() const { return numel_; }
  std::size_t operator[](std::size_t axis) const { return dims_[axis]; }
  const std::vector<std::size_t>& dims() const { return dims_; }

  /// Row-major offset ((i0*d1 + i1)*d2 + i2)... with bounds checking.
  std::size_t offset(std::span<const std::size_t> idx) const {
    if (idx.size() != dims_.size()) {
      throw std::out_of_range("index rank " + std::to_string(idx.size()) + " does not match shape " +
                              to_string());
    }
    std::size_t off = 0;
    for (std::size_t a = 0; a < dims_.size(); ++a) {
      if (idx[a] >= dims_[a]) {
        throw std::out_of_range("index " + std::to_string(idx[a]) + " out of bounds on axis " +
                                std::to_string(a) + " of shape " + to_string());
      }
      off = off * dims_[a] + idx[a];
    }
    return off;
  }

  std::vector<std::size_t> unravel(std::size_t off) const {
    if (off >= numel_) throw std::out_of_range("offset out of bounds");
    std::vector<std::size_t> idx(dims_.size());
    for (std::size_t a = dims_.size(); a-- > 0;) {
      idx[a] = off % dims_[a];
      off /= dims_[a];
    }
    return idx;
  }

  std::string to_string() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t a = 0; a < dims_.size(); ++a) os << (a ? "," : "") << dims_[a];
    os << ']';
    return os.str();
  }

  friend bool operator==(const Shape& a, const Shape& b) { return a.dims_ == b.dims_; }

 private:
  std::vector<std::size_t> dims_;
  std::size_t numel_;
};

/// Deterministic xoshiro256** generator seeded through splitmix64.
///
/// The stream depends only on the 64-bit seed, so tests and generated data
/// are reproducible on every platform. Doubles are formed from the top 53
/// bits: u = (next() >> 11) * 2^-53, which lies in [0, 1).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) {
    std::uint64_t sm = seed;
    for (auto& s : state_) s = splitmix64(sm);
  }

  static std::uint64_t splitmix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Seed for the i-th independent substream of `seed`.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t x = seed ^ (0xD1B54A32D192ED03ULL * (index + 1));
    return splitmix64(x);
  }

  std::uint64_t next() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) {
    const double v = lo + (hi - lo) * uniform();
    return v < hi ? v : std::nextafter(hi, lo);
  }

  /// Uniform integer in [0, n), rejection sampled so there is no modulo bias.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw ConfigError("Rng::below requires n > 0");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t v;
    do {
      v = next();
    } while (v >= limit);
    return v % n;
  }

  /// Standard normal via Box-Muller (one value per call, the pair's sine half is dropped).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::uint64_t state_[4];
};

/// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}
  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)), data_(shape_.numel(), fill) {}
  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) {
      throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                       shape_.to_string());
    }
  }

  static Tensor uniform(Shape shape, double lo, double hi, Rng& rng) {
    if (!(lo < hi)) throw ConfigError("uniform fill requires lo < hi");
    Tensor t(std::move(shape));
    for (double& v : t.data_) v = rng.uniform(lo, hi);
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_[axis]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* raw() { return data_.data(); }
  const double* raw() const { return data_.data(); }

  double& operator[](std::size_t off) { return data_[off]; }
  double operator[](std::size_t off) const { return data_[off]; }

  double& at(std::initializer_list<std::size_t> idx) {
    return data_[shape_.offset(std::span<const std::size_t>(idx.begin(), idx.size()))];
  }
  double at(std::initializer_list<std::size_t> idx) const {
    return data_[shape_.offset(std::span<const std::size_t>(idx.begin(), idx.size()))];
  }
  double& at(std::span<const std::size_t> idx) { return data_[shape_.offset(idx)]; }
  double at(std::span<const std::size_t> idx) const { return data_[shape_.offset(idx)]; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Largest absolute elementwise difference; shapes must match.
inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError("max_abs_diff: " + a.shape().to_string() + " vs " + b.shape().to_string());
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace slc
