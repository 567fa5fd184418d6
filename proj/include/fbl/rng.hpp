// Seeded random streams for the simulator.
//
// Every random decision in a run is drawn from a stream derived from
// (run seed, client id, round, purpose). Streams are independent, so the
// schedule (thread count, client execution order) cannot change results.
// Distributions are implemented by hand on top of mt19937_64 because the
// std::*_distribution classes are implementation-defined and would break
// bit-reproducibility across standard libraries.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace fbl {

enum class StreamPurpose : std::uint64_t {
  DatasetGen = 1,
  ModelInit,
  Partition,
  Modes,
  Select,
  Shuffle,
  Drop,
  Augment,
  Replay,
  Fill,
  Sample,
};

// Stable 64-bit mix (splitmix64 finalizer applied per absorbed word).
inline std::uint64_t derive_stream_seed(std::uint64_t seed, std::uint64_t client,
                                        std::uint64_t round, StreamPurpose purpose) {
  std::uint64_t s = seed ^ 0x8000000000000001ULL;
  auto absorb = [&s](std::uint64_t v) {
    s += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = s ^ v;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    s = z ^ (z >> 31);
  };
  absorb(client);
  absorb(round);
  absorb(static_cast<std::uint64_t>(purpose));
  return s;
}

class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

  RandomStream(std::uint64_t seed, std::uint64_t client, std::uint64_t round,
               StreamPurpose purpose)
      : engine_(derive_stream_seed(seed, client, round, purpose)) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n), unbiased via rejection.
  std::size_t uniform_index(std::size_t n) {
    if (n == 0) throw std::domain_error("uniform_index: n must be positive");
    const std::uint64_t bound = n;
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return static_cast<std::size_t>(r % bound);
    }
  }

  double uniform_range(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal, Marsaglia polar method (pairs cached).
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    cached_ = v * f;
    has_cached_ = true;
    return u * f;
  }

  // Gamma(shape, 1), Marsaglia–Tsang; shape < 1 handled by the boost trick.
  double gamma(double shape) {
    if (shape <= 0.0) throw std::domain_error("gamma: shape must be positive");
    if (shape < 1.0) {
      double u = uniform();
      while (u == 0.0) u = uniform();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / (3.0 * std::sqrt(d));
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = uniform_index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct indices from [0, n), returned sorted ascending.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
    if (k > n) k = n;
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + uniform_index(n - i);
      std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
  }

 private:
  std::mt19937_64 engine_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace fbl
