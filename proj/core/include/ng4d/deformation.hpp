#pragma once

// Temporal graph convolution over Gaussian nodes with motion and feature
// heads, plus the point <-> Gaussian transfer operators.

#include <span>

#include "ng4d/geometry.hpp"
#include "ng4d/nn.hpp"
#include "ng4d/tensor.hpp"

namespace ng4d {

inline constexpr std::size_t kTimeEncodingDim = 8;
inline constexpr std::size_t kGcnDim = 32;
/// mu (3) + upper-triangular sigma (6) + features (32) + time encoding (8).
inline constexpr std::size_t kNodeInputDim = 3 + 6 + 32 + kTimeEncodingDim;

/// [sin(2^j pi t), cos(2^j pi t)] for j = 0..3, interleaved.
Tensor time_encode(double t);

/// Symmetrically degree-normalized Gaussian-kernel adjacency over the
/// means: W_ab = exp(-|mu_a - mu_b|^2 / tau^2) with tau the mean pairwise
/// distance (1 when that is zero or M == 1), then D^-1/2 W D^-1/2.
RowMatrix edge_weights(const PointMatrix& mu);
RowMatrix normalized_adjacency(const PointMatrix& mu);

/// Node inputs [M x 49] = concat(mu, sigma 00,01,02,11,12,22, feat, time_encode(t)).
Tensor node_inputs(const Tensor& mu, const Tensor& sigma, const Tensor& feat, double t);

struct TgGcnWeights {
  Linear layer1;  // 49 -> 32
  Linear layer2;  // 32 -> 32
  Linear project; // 49 -> 32 residual projection

  static TgGcnWeights create(Rng& rng);
  void collect(const std::string& prefix, NamedParams& out) const;
};

/// lrelu(A lrelu(A X T1 + b1) T2 + b2) + X P + c, A the normalized adjacency.
Tensor tg_gcn_forward(const Tensor& nodes, const Tensor& adjacency, const TgGcnWeights& w);

struct DeformationHeads {
  Linear motion_hidden;  // 32 -> 32
  Linear motion_out;     // 32 -> 3, zero-initialized
  Linear feature_hidden; // 32 -> 32
  Linear feature_out;    // 32 -> 32

  static DeformationHeads create(Rng& rng);
  void collect(const std::string& prefix, NamedParams& out) const;
};

Tensor motion_head(const Tensor& node_feat, const DeformationHeads& h);
Tensor feature_head(const Tensor& node_feat, const DeformationHeads& h);

struct PointBroadcast {
  Tensor point_flow;  // N x 3
  Tensor point_feat;  // N x D
};

/// Soft-weighted transfer S . gauss_flow and S . gauss_feat.
PointBroadcast broadcast_to_points(const Tensor& gauss_flow, const Tensor& gauss_feat, const Tensor& soft);

/// Max over each Gaussian's hard-assigned members; zeros when empty.
Tensor gaussian_pool(const Tensor& point_feat, std::span<const std::size_t> assign, std::size_t M);
/// Copies pooled[assign[i]] to row i.
Tensor unpool(const Tensor& pooled, std::span<const std::size_t> assign);

}  // namespace ng4d
