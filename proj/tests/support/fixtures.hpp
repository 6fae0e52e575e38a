#pragma once

#include <vector>

#include "ng4d/random.hpp"
#include "ng4d/tensor.hpp"

namespace ng4d::testing {

inline std::vector<double> random_values(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline Tensor random_param(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  const auto n = shape_numel(shape);
  return Tensor::parameter(std::move(shape), random_values(n, seed, lo, hi));
}

inline Tensor random_const(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), random_values(n, seed, lo, hi));
}

}  // namespace ng4d::testing
