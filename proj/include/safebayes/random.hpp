#pragma once

#include <cstdint>
#include <random>

namespace safebayes {

/// SplitMix64 finalizer. A bijection on 64-bit words.
std::uint64_t fmix64(std::uint64_t z);

/// Seed for stream `stream` derived from `base`: fmix64(base ^ fmix64(stream + golden)).
/// For a fixed stream the map base -> seed is a bijection.
std::uint64_t mix64(std::uint64_t base, std::uint64_t stream);

/// Deterministic random source. The engine is std::mt19937_64, whose output
/// sequence is fixed by the standard; uniforms use the top 53 bits and normals
/// use the Marsaglia polar method, so a seed fixes the stream on every
/// conforming platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal variate.
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace safebayes
