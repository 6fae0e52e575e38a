#pragma once

// Fusion of latent (neural-field) and geometric (Gaussian) point features,
// and the residual-flow prediction head.

#include "ng4d/nn.hpp"
#include "ng4d/tensor.hpp"

namespace ng4d {

inline constexpr std::size_t kFusionDim = 32;

struct FusionWeights {
  Tensor wq, wk, wv;  // 32 x 32
  Linear cat;         // 64 -> 32

  static FusionWeights create(Rng& rng);
  void collect(const std::string& prefix, NamedParams& out) const;
};

/// F_L + softmax((F_L Wq)(F_G Wk)^T / sqrt(d_h)) (F_G Wv), attention over all rows.
Tensor fast_lg_fusion(const Tensor& f_l, const Tensor& f_g, const FusionWeights& w);
/// Linear over concat(F_L, F_G).
Tensor cat_fusion(const Tensor& f_l, const Tensor& f_g, const FusionWeights& w);

struct PredictionHead {
  Linear hidden1;  // 38 -> 32
  Linear hidden2;  // 32 -> 32
  Linear out;      // 32 -> 3, zero-initialized

  static PredictionHead create(Rng& rng);
  void collect(const std::string& prefix, NamedParams& out) const;
};

/// MLP(concat(F, [t, sin t, cos t], flow + points)) -> residual flow [N x 3].
Tensor predict_residual_flow(const Tensor& fused, double t_target, const Tensor& flow, const Tensor& points,
                             const PredictionHead& head);

}  // namespace ng4d
