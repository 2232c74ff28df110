#include "tosa/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace tosa {

double Rng::normal() {
  // One draw per pair of uniforms; the sine branch is discarded so the
  // stream does not depend on call parity.
  const double u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(1.0 - u1));
  return radius * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::index(std::size_t n) {
  if (n == 0) throw std::invalid_argument("Rng::index(0)");
  return static_cast<std::size_t>(next_u64() % n);
}

void Rng::shuffle(std::vector<std::size_t>& v) {
  if (v.size() < 2) return;
  for (std::size_t i = v.size() - 1; i > 0; --i) {
    std::swap(v[i], v[index(i + 1)]);
  }
}

Tensor Rng::normal_tensor(std::vector<std::size_t> shape, double mean, double stddev) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = normal(mean, stddev);
  return t;
}

Tensor Rng::uniform_tensor(std::vector<std::size_t> shape, double lo, double hi) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = uniform(lo, hi);
  return t;
}

}  // namespace tosa
