#pragma once

#include <cstdint>
#include <random>

#include "marrprobe/numerics/tensor.hpp"

namespace marrprobe::numerics {

// Seeded generator with library-independent transforms: the uniform and
// normal draws below are the same on every standard library, unlike
// std::*_distribution.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();

  // Independent child stream, stable under reordering of other draws.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

Tensor randn(const Shape& shape, Rng& rng, double stddev, DType dtype = default_dtype());
Tensor rand_uniform(const Shape& shape, Rng& rng, double lo, double hi, DType dtype = default_dtype());

}  // namespace marrprobe::numerics
