#pragma once

// Continuous-time residuals from radial basis functions over the frame
// times: normalized Gaussian activations, per-Gaussian attention over the
// centers, and learnable per-center tables of mean, rotation and feature
// residuals. Residuals between two times come from weight differences, so
// equal times give exactly zero.

#include <vector>

#include "ng4d/nn.hpp"
#include "ng4d/tensor.hpp"

namespace ng4d {

struct RbfTemporalInterpolant {
  std::vector<double> centers;  // F, evenly spaced in [0, 1]
  Tensor raw_width;             // F, width = softplus(raw_width)
  Tensor dmu;                   // M x F x 3
  Tensor drot;                  // M x F x 3 axis-angle
  Tensor dfeat;                 // M x F x D
  Linear attn_hidden;           // D -> D
  Linear attn_out;              // D -> F

  /// Widths start at the center spacing; tables start at zero.
  static RbfTemporalInterpolant create(std::size_t centers, std::size_t gaussians, std::size_t feat_dim,
                                       Rng& rng);
  std::size_t center_count() const { return centers.size(); }
  std::size_t gaussians() const { return dmu.dim(0); }
  Tensor widths() const;
  void collect(const std::string& prefix, NamedParams& out) const;
};

/// Evenly spaced centers {0, 1/(F-1), ..., 1}; a single center sits at 0.
std::vector<double> rbf_centers(std::size_t count);

/// zeta_i = exp(-(t - c_i)^2 / (2 sigma_i^2)) / sum_j (...), shape [F].
Tensor rbf_activations(double t, const RbfTemporalInterpolant& interp);

/// softmax over centers of MLP(feat): [M x D] -> [M x F].
Tensor rbf_attention(const Tensor& feat, const RbfTemporalInterpolant& interp);

/// Per-Gaussian weights renorm(zeta(t) * W_rbf): [M x F], rows sum to 1.
Tensor effective_weights(double t, const Tensor& w_rbf, const RbfTemporalInterpolant& interp);

struct Residuals {
  Tensor dmu;    // M x 3
  Tensor drot;   // M x 3 blended axis-angle
  Tensor dR;     // M x 3 x 3
  Tensor dfeat;  // M x D
};

/// Residuals from t1 to t2 given the precomputed attention W_rbf.
Residuals interpolate_residuals(double t1, double t2, const Tensor& w_rbf, const RbfTemporalInterpolant& interp);
/// Same, computing W_rbf from the Gaussian features at t1.
Residuals interpolate_residuals(double t1, double t2, const RbfTemporalInterpolant& interp, const Tensor& feat_t1);

/// Rodrigues exponential map [M x 3] -> [M x 3 x 3] with analytic backward.
/// Small angles use Taylor branches so the map and its derivative stay
/// accurate at and near zero.
Tensor so3_exp(const Tensor& v);

/// dR Sigma dR^T per Gaussian, all [M x 3 x 3].
Tensor update_covariance(const Tensor& sigma, const Tensor& dR);

}  // namespace ng4d
