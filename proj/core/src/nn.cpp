#include "ng4d/nn.hpp"

#include <cmath>

#include "ng4d/ops.hpp"

namespace ng4d {

Tensor uniform_param(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::parameter(std::move(shape), std::move(v));
}

Tensor zero_param(Shape shape) {
  const auto n = shape_numel(shape);
  return Tensor::parameter(std::move(shape), std::vector<double>(n, 0.0));
}

Linear Linear::create(std::size_t in, std::size_t out, Rng& rng) {
  Linear l;
  l.weight = uniform_param({in, out}, in, rng);
  l.bias = uniform_param({out}, in, rng);
  return l;
}

Linear Linear::zeros(std::size_t in, std::size_t out) { return {zero_param({in, out}), zero_param({out})}; }

Tensor Linear::operator()(const Tensor& x) const { return linear(x, weight, bias); }

void Linear::collect(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

Tensor dropout(const Tensor& x, double p, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ParameterError("dropout probability must be in [0, 1)");
  if (p == 0.0) return x;
  std::vector<double> mask(x.numel());
  const double keep = 1.0 / (1.0 - p);
  for (auto& m : mask) m = rng.uniform() < p ? 0.0 : keep;
  return x * Tensor(x.shape(), std::move(mask));
}

}  // namespace ng4d
