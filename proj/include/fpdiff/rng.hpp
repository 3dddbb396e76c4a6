#pragma once

// Deterministic random number generation. Every stochastic routine in the
// library draws from a GaussianRng seeded by an explicit (seed, stream) pair,
// so identical inputs reproduce identical results on the same build.
//
// Uniform source: splitmix64 (8-byte state, full-period, passes BigCrush).
// Gaussian variates: Box-Muller with pair caching.

#include <cmath>
#include <cstdint>
#include <string_view>

#include <Eigen/Core>

namespace fpdiff {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// FNV-1a, used to derive stream ids from purpose strings so that sub-tasks
// of a run get independent, reproducible streams.
inline std::uint64_t hash_purpose(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct RngSpec {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;

  RngSpec with_stream(std::uint64_t s) const { return {seed, s}; }
  RngSpec derive(std::string_view purpose) const {
    return {seed, hash_purpose(purpose) ^ (stream * 0x9e3779b97f4a7c15ULL)};
  }
};

class GaussianRng {
 public:
  explicit GaussianRng(RngSpec spec) {
    // Decorrelate seed and stream before mixing them together.
    std::uint64_t a = spec.seed;
    std::uint64_t b = spec.stream + 0x632be59bd9b4e019ULL;
    state_ = splitmix64(a) ^ (splitmix64(b) << 1);
    splitmix64(state_);  // burn one step so state 0 does not map to output 0
  }

  // Uniform on (0, 1); never returns 0 so log() below is safe.
  double uniform() {
    return (static_cast<double>(splitmix64(state_) >> 11) + 0.5) * 0x1.0p-53;
  }

  double gaussian() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

  Eigen::VectorXd gaussian_vector(Eigen::Index n) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = gaussian();
    return v;
  }

  Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = gaussian();
    return m;
  }

  // Uniform integer in [0, n)
  std::uint64_t uniform_index(std::uint64_t n) { return splitmix64(state_) % n; }

 private:
  std::uint64_t state_ = 0;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace fpdiff
