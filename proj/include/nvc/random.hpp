#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace nvc {

// Deterministic PRNG (xoshiro256**ic splitmix64 core) with hand-rolled
// Box-Muller normals, so streams are identical across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {
    // warm up through the splitmix mixer so nearby seeds decorrelate
    next_u64();
    next_u64();
  }

  // Derive an independent stream, e.g. Rng(seed).fork(k) per purpose.
  Rng fork(uint64_t stream) const {
    Rng r(state_ ^ (0xA24BAED4963EE407ULL * (stream + 1)));
    return r;
  }

  uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0,1), 53-bit resolution.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  template <typename T>
  void fill_normal(std::vector<T>& out) {
    for (T& x : out) x = static_cast<T>(normal());
  }

  template <typename T>
  void fill_uniform(std::vector<T>& out, double lo, double hi) {
    for (T& x : out) x = static_cast<T>(uniform(lo, hi));
  }

  // Fisher-Yates permutation of 0..n-1.
  std::vector<int64_t> permutation(int64_t n) {
    std::vector<int64_t> p(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
    for (int64_t i = n - 1; i > 0; --i) {
      const int64_t j =
          static_cast<int64_t>(next_u64() % static_cast<uint64_t>(i + 1));
      std::swap(p[static_cast<size_t>(i)], p[static_cast<size_t>(j)]);
    }
    return p;
  }

 private:
  uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace nvc
