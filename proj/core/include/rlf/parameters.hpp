#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>

#include "rlf/tensor.hpp"

namespace rlf {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

// Named learnable tensors, iterated in lexicographic name order so that
// serialization and optimizer updates are deterministic.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, Tensor init);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  std::map<std::string, Parameter>& items() { return params_; }
  const std::map<std::string, Parameter>& items() const { return params_; }

  void zero_grad();
  std::size_t total_size() const;
  std::size_t count() const { return params_.size(); }

 private:
  std::map<std::string, Parameter> params_;
};

// He-uniform initializer driven by a 64-bit Mersenne twister; the uniform draw
// is computed from raw engine output so results do not depend on the standard
// library's distribution implementation.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo, double hi);
  Tensor he_uniform(Shape shape, std::size_t fan_in);
  Tensor constant(Shape shape, double v) { return Tensor(std::move(shape), v); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace rlf
