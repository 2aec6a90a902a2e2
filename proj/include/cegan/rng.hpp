#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "cegan/tensor.hpp"

namespace cegan {

inline std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a ^ (b + 0x9E3779B97F4A7C15ull + (a << 6) + (a >> 2));
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ull;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBull;
  x ^= x >> 31;
  return x;
}

/// Deterministic random stream. The mt19937_64 engine is fully specified by
/// the standard, and all transforms (uniform, normal via the trigonometric
/// Box-Muller pair, bounded index) are implemented here rather than with
/// std distributions, so a stream's output depends only on (seed, draw index).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Independent sub-stream: changing draws on one stream never perturbs
  /// another. `index` selects per-event streams (e.g. per-generation metrics).
  static Rng stream(std::uint64_t seed, std::uint64_t stream_id,
                    std::uint64_t index = 0) {
    return Rng(hash_combine(hash_combine(seed, stream_id), index));
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform01() { return double(engine_() >> 11) * 0x1.0p-53; }

  double uniform_pm1() { return 2.0 * uniform01() - 1.0; }

  /// Standard normal. Each Box-Muller invocation consumes exactly two
  /// engine draws and yields two values; the second is cached.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = 1.0 - uniform01();  // (0, 1]
    double u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
  }

  /// Uniform index in [0, n).
  std::size_t index_below(std::size_t n) {
    std::size_t i = static_cast<std::size_t>(uniform01() * double(n));
    return i < n ? i : n - 1;
  }

  Tensor normal_matrix(std::size_t rows, std::size_t cols) {
    Tensor t(rows, cols);
    for (auto& v : t.data()) v = normal();
    return t;
  }

  Tensor uniform01_column(std::size_t rows) {
    Tensor t(rows, 1);
    for (auto& v : t.data()) v = uniform01();
    return t;
  }

 private:
  std::mt19937_64 engine_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace cegan
