#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "tosa/tensor.hpp"

namespace tosa {

/// Deterministic random source. The engine is std::mt19937_64 (fully
/// specified by the standard); doubles and normals are derived here
/// rather than through std distributions, whose output is
/// implementation-defined:
///   uniform():  53-bit mantissa construction, (x >> 11) * 2^-53
///   normal():   Box-Muller, z = sqrt(-2 ln(1-u1)) * cos(2*pi*u2)
///   index(n):   next_u64() % n
/// Identical seeds therefore produce identical streams on every
/// platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  std::size_t index(std::size_t n);

  /// Fisher-Yates using index().
  void shuffle(std::vector<std::size_t>& v);

  Tensor normal_tensor(std::vector<std::size_t> shape, double mean, double stddev);
  Tensor uniform_tensor(std::vector<std::size_t> shape, double lo, double hi);

  /// Independent child stream; used to decouple parameter init order
  /// from data order.
  Rng fork() { return Rng(next_u64() ^ 0x9e3779b97f4a7c15ull); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace tosa
