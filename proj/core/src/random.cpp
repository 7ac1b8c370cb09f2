#include "rlf/random.hpp"

#include <cmath>
#include <numbers>

namespace rlf {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double Rng::normal(double mean, double sd) {
  if (has_spare_) {
    has_spare_ = false;
    return mean + sd * spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
  has_spare_ = true;
  return mean + sd * r * std::cos(2.0 * std::numbers::pi * u2);
}

int Rng::poisson(double lambda) {
  if (lambda <= 0.0) return 0;
  if (lambda > 30.0) {
    const double v = std::round(normal(lambda, std::sqrt(lambda)));
    return v < 0.0 ? 0 : static_cast<int>(v);
  }
  const double limit = std::exp(-lambda);
  int k = 0;
  double p = uniform();
  while (p > limit) {
    ++k;
    p *= uniform();
  }
  return k;
}

}  // namespace rlf
