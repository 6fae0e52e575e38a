#pragma once

// Fourier-style positional encoding of (x, y, z, t) and the coordinate MLP
// producing per-point latent features.

#include <array>

#include "ng4d/nn.hpp"
#include "ng4d/tensor.hpp"

namespace ng4d {

inline constexpr std::size_t kPosencDim = 12;
inline constexpr std::size_t kLatentDim = 32;

/// [N x 3] points and a scalar time -> [N x 12] rows
/// [x, sin x, cos x, y, sin y, cos y, z, sin z, cos z, t, sin t, cos t].
Tensor posenc(const Tensor& points, double t);

/// 12 -> 1280 input layer, two stacks of five 32-wide layers joined by a
/// residual add, and a linear 32 -> 32 decoder. Leaky ReLU (0.01) after every
/// layer except the decoder.
struct NeuralFieldParams {
  static constexpr std::size_t kInputWidth = 1280;
  static constexpr std::size_t kStackDepth = 5;
  static constexpr double kSlope = 0.01;

  Linear input;
  std::array<Linear, kStackDepth> stack_a;
  std::array<Linear, kStackDepth> stack_b;
  Linear decoder;

  static NeuralFieldParams create(Rng& rng);
  static NeuralFieldParams zeros();
  void collect(const std::string& prefix, NamedParams& out) const;
};

/// [N x 12] -> [N x 32], row-wise.
Tensor field_forward(const Tensor& enc, const NeuralFieldParams& params);

}  // namespace ng4d
