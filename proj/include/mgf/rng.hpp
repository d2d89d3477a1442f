#pragma once

#include <cstdint>
#include <random>

namespace mgf {

/// Seeded generator. The engine is std::mt19937_64 (fully specified by the standard);
/// the conversions to floating point are done here so sequences do not depend on
/// the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller; caches the second variate.
  double normal();
  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  /// Independent stream derived from (seed, stream id) with a splitmix64 mix.
  static Rng derive(std::uint64_t seed, std::uint64_t stream);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace mgf
