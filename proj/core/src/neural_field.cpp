#include "ng4d/neural_field.hpp"

#include "ng4d/ops.hpp"

namespace ng4d {

Tensor posenc(const Tensor& points, double t) {
  if (points.rank() != 2 || points.dim(1) != 3) {
    throw DimensionError("posenc expects [N x 3] points, got " + shape_str(points.shape()));
  }
  const Tensor tc(Shape{points.dim(0), 1}, t);
  const Tensor coords = concat({points, tc}, 1);  // N x 4
  const Tensor stacked = concat({coords, ng4d::sin(coords), ng4d::cos(coords)}, 1);
  // Interleave to [u, sin u, cos u] per coordinate.
  static const std::array<std::size_t, kPosencDim> order{0, 4, 8, 1, 5, 9, 2, 6, 10, 3, 7, 11};
  return index_select(stacked, 1, order);
}

NeuralFieldParams NeuralFieldParams::create(Rng& rng) {
  NeuralFieldParams p;
  p.input = Linear::create(kPosencDim, kInputWidth, rng);
  for (std::size_t i = 0; i < kStackDepth; ++i) {
    p.stack_a[i] = Linear::create(i == 0 ? kInputWidth : kLatentDim, kLatentDim, rng);
  }
  for (auto& l : p.stack_b) l = Linear::create(kLatentDim, kLatentDim, rng);
  p.decoder = Linear::create(kLatentDim, kLatentDim, rng);
  return p;
}

NeuralFieldParams NeuralFieldParams::zeros() {
  NeuralFieldParams p;
  p.input = Linear::zeros(kPosencDim, kInputWidth);
  for (std::size_t i = 0; i < kStackDepth; ++i) {
    p.stack_a[i] = Linear::zeros(i == 0 ? kInputWidth : kLatentDim, kLatentDim);
  }
  for (auto& l : p.stack_b) l = Linear::zeros(kLatentDim, kLatentDim);
  p.decoder = Linear::zeros(kLatentDim, kLatentDim);
  return p;
}

void NeuralFieldParams::collect(const std::string& prefix, NamedParams& out) const {
  input.collect(prefix + ".input", out);
  for (std::size_t i = 0; i < kStackDepth; ++i) stack_a[i].collect(prefix + ".a" + std::to_string(i), out);
  for (std::size_t i = 0; i < kStackDepth; ++i) stack_b[i].collect(prefix + ".b" + std::to_string(i), out);
  decoder.collect(prefix + ".decoder", out);
}

Tensor field_forward(const Tensor& enc, const NeuralFieldParams& p) {
  if (enc.rank() != 2 || enc.dim(1) != p.input.in()) {
    throw DimensionError("field_forward expects [N x 12] encoding, got " + shape_str(enc.shape()));
  }
  constexpr double s = NeuralFieldParams::kSlope;
  Tensor h = leaky_relu(p.input(enc), s);
  for (const auto& l : p.stack_a) h = leaky_relu(l(h), s);
  Tensor g = h;
  for (const auto& l : p.stack_b) g = leaky_relu(l(g), s);
  return p.decoder(h + g);
}

}  // namespace ng4d
