#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cdfsl {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Feature payloads are single precision on disk and in memory.
using FeatureMatrix = RowMatrix<float>;
/// Row-stochastic matrix, one row per query item, one column per episode class.
using ProbMatrix = RowMatrix<double>;

using ClassId = std::uint32_t;
using Seed = std::uint64_t;

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid user configuration (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input data (CLI exit code 3).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Numerical breakdown while fitting or predicting.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Zero-length vector where a direction is required (cosine rules).
class ZeroNormError : public NumericError {
 public:
  using NumericError::NumericError;
};

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent stream seed from a parent seed and a tag.
constexpr Seed derive_seed(Seed parent, std::uint64_t tag) {
  return splitmix64(parent ^ splitmix64(tag + 0x632be59bd9b4e019ULL));
}

/// Seeded generator with platform-independent distributions.
///
/// std::mt19937_64 output is fixed by the standard; the std distributions
/// are not, so integer, uniform and normal draws are implemented here.
class Rng {
 public:
  explicit Rng(Seed seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform integer in [0, bound), unbiased.
  std::uint64_t uniform_index(std::uint64_t bound) {
    if (bound == 0) throw std::invalid_argument("uniform_index: bound must be positive");
    const std::uint64_t limit = -bound % bound;  // 2^64 mod bound
    for (;;) {
      const std::uint64_t x = engine_();
      if (x >= limit) return x % bound;
    }
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller; the second variate is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform01();
    } while (u1 <= 0.0);
    const double u2 = uniform01();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  /// Moves a uniform sample of `count` elements to the front of `items`
  /// (seeded partial Fisher-Yates).
  template <typename T>
  void partial_shuffle(std::vector<T>& items, std::size_t count) {
    const std::size_t n = items.size();
    for (std::size_t i = 0; i < count && i + 1 < n; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(uniform_index(n - i));
      std::swap(items[i], items[j]);
    }
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    partial_shuffle(items, items.size());
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Row-wise softmax computed in double precision with max-subtraction.
template <typename Derived>
ProbMatrix softmax_rows(const Eigen::MatrixBase<Derived>& logits) {
  ProbMatrix out = logits.template cast<double>();
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double peak = out.row(i).maxCoeff();
    out.row(i) = (out.row(i).array() - peak).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

/// Index of the largest entry; ties resolve to the lowest index.
template <typename Derived>
Eigen::Index argmax_lowest(const Eigen::DenseBase<Derived>& row) {
  Eigen::Index best = 0;
  for (Eigen::Index j = 1; j < row.size(); ++j) {
    if (row(j) > row(best)) best = j;
  }
  return best;
}

}  // namespace cdfsl
