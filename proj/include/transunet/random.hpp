#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace transunet {

// Reproducible random stream. Uniform and normal draws are derived from the
// raw 64-bit Mersenne Twister output directly, so sequences are identical
// across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Stream seed mixed from a base seed and any number of stream ids.
  static std::uint64_t derive(std::uint64_t seed, std::initializer_list<std::uint64_t> ids);

  std::uint64_t next() { return engine_(); }
  // [0, 1)
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  // Normal resampled until it falls within `bound` standard deviations.
  double truncated_normal(double stddev, double bound = 2.0);
  std::size_t index(std::size_t n);
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace transunet
