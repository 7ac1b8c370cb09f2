#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace rlf {

std::uint64_t splitmix64(std::uint64_t x);
// Order-sensitive combination of a seed with a stream identifier.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream + 0x9e3779b97f4a7c15ULL));
}

// mt19937_64 with portable draws (the standard distributions are
// implementation-defined, these are not).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t index(std::size_t n) { return n ? static_cast<std::size_t>(engine_() % n) : 0; }
  double normal(double mean = 0.0, double sd = 1.0);
  int poisson(double lambda);
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace rlf
