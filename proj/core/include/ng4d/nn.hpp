#pragma once

// Small building blocks shared by the learnable modules.

#include <string>
#include <utility>
#include <vector>

#include "ng4d/random.hpp"
#include "ng4d/tensor.hpp"

namespace ng4d {

/// Named handles to trainable leaves, in a stable registration order.
using NamedParams = std::vector<std::pair<std::string, Tensor>>;

/// Uniform +-sqrt(1/fan_in) parameter of the given shape.
Tensor uniform_param(Shape shape, std::size_t fan_in, Rng& rng);
Tensor zero_param(Shape shape);

/// y = x W + b with W [in x out] and b [out].
struct Linear {
  Tensor weight;
  Tensor bias;

  static Linear create(std::size_t in, std::size_t out, Rng& rng);
  /// Zero weights and bias (identity-at-init heads).
  static Linear zeros(std::size_t in, std::size_t out);

  std::size_t in() const { return weight.dim(0); }
  std::size_t out() const { return weight.dim(1); }
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, NamedParams& out) const;
};

/// Inverted dropout: zeroes each element with probability p and scales the
/// survivors by 1 / (1 - p). Identity when p == 0.
Tensor dropout(const Tensor& x, double p, Rng& rng);

/// Forward-pass mode. Dropout draws from `rng` only when training.
struct Mode {
  bool training = false;
  double dropout = 0.0;
  Rng* rng = nullptr;
};

inline Tensor maybe_dropout(const Tensor& x, const Mode& mode) {
  if (!mode.training || mode.dropout <= 0.0 || mode.rng == nullptr) return x;
  return dropout(x, mode.dropout, *mode.rng);
}

}  // namespace ng4d
