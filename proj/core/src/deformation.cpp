#include "ng4d/deformation.hpp"

#include <cmath>
#include <numbers>

#include "ng4d/ops.hpp"

namespace ng4d {

Tensor time_encode(double t) {
  std::vector<double> v(kTimeEncodingDim);
  for (std::size_t j = 0; j < kTimeEncodingDim / 2; ++j) {
    const double arg = std::ldexp(std::numbers::pi, static_cast<int>(j)) * t;
    v[2 * j] = std::sin(arg);
    v[2 * j + 1] = std::cos(arg);
  }
  return Tensor({kTimeEncodingDim}, std::move(v));
}

RowMatrix edge_weights(const PointMatrix& mu) {
  const auto m = mu.rows();
  double tau = 0.0;
  for (Eigen::Index a = 0; a < m; ++a)
    for (Eigen::Index b = a + 1; b < m; ++b) tau += (mu.row(a) - mu.row(b)).norm();
  if (m > 1) tau /= 0.5 * static_cast<double>(m) * static_cast<double>(m - 1);
  if (!(tau > 0.0)) tau = 1.0;
  RowMatrix w(m, m);
  for (Eigen::Index a = 0; a < m; ++a) {
    w(a, a) = 1.0;
    for (Eigen::Index b = a + 1; b < m; ++b) {
      w(a, b) = w(b, a) = std::exp(-(mu.row(a) - mu.row(b)).squaredNorm() / (tau * tau));
    }
  }
  return w;
}

RowMatrix normalized_adjacency(const PointMatrix& mu) {
  const RowMatrix w = edge_weights(mu);
  const Eigen::VectorXd inv = w.rowwise().sum().cwiseSqrt().cwiseInverse();
  return inv.asDiagonal() * w * inv.asDiagonal();
}

Tensor node_inputs(const Tensor& mu, const Tensor& sigma, const Tensor& feat, double t) {
  const std::size_t m = mu.dim(0);
  if (sigma.shape() != Shape{m, 3, 3} || feat.rank() != 2 || feat.dim(0) != m) {
    throw DimensionError("node_inputs: inconsistent Gaussian counts");
  }
  static const std::size_t upper[6] = {0, 1, 2, 4, 5, 8};
  const Tensor sig6 = index_select(reshape(sigma, {m, 9}), 1, upper);
  const Tensor te = reshape(time_encode(t), {1, kTimeEncodingDim}) + Tensor({m, 1}, 0.0);
  return concat({mu, sig6, feat, te}, 1);
}

TgGcnWeights TgGcnWeights::create(Rng& rng) {
  return {Linear::create(kNodeInputDim, kGcnDim, rng), Linear::create(kGcnDim, kGcnDim, rng),
          Linear::create(kNodeInputDim, kGcnDim, rng)};
}

void TgGcnWeights::collect(const std::string& prefix, NamedParams& out) const {
  layer1.collect(prefix + ".layer1", out);
  layer2.collect(prefix + ".layer2", out);
  project.collect(prefix + ".project", out);
}

Tensor tg_gcn_forward(const Tensor& nodes, const Tensor& adj, const TgGcnWeights& w) {
  const Tensor h1 = leaky_relu(matmul(adj, matmul(nodes, w.layer1.weight)) + w.layer1.bias, 0.01);
  const Tensor h2 = leaky_relu(matmul(adj, matmul(h1, w.layer2.weight)) + w.layer2.bias, 0.01);
  return h2 + w.project(nodes);
}

DeformationHeads DeformationHeads::create(Rng& rng) {
  DeformationHeads h;
  h.motion_hidden = Linear::create(kGcnDim, kGcnDim, rng);
  h.motion_out = Linear::zeros(kGcnDim, 3);
  h.feature_hidden = Linear::create(kGcnDim, kGcnDim, rng);
  h.feature_out = Linear::create(kGcnDim, kGcnDim, rng);
  return h;
}

void DeformationHeads::collect(const std::string& prefix, NamedParams& out) const {
  motion_hidden.collect(prefix + ".motion_hidden", out);
  motion_out.collect(prefix + ".motion_out", out);
  feature_hidden.collect(prefix + ".feature_hidden", out);
  feature_out.collect(prefix + ".feature_out", out);
}

Tensor motion_head(const Tensor& node_feat, const DeformationHeads& h) {
  return h.motion_out(leaky_relu(h.motion_hidden(node_feat), 0.01));
}

Tensor feature_head(const Tensor& node_feat, const DeformationHeads& h) {
  return h.feature_out(leaky_relu(h.feature_hidden(node_feat), 0.01));
}

PointBroadcast broadcast_to_points(const Tensor& gauss_flow, const Tensor& gauss_feat, const Tensor& soft) {
  return {matmul(soft, gauss_flow), matmul(soft, gauss_feat)};
}

Tensor gaussian_pool(const Tensor& point_feat, std::span<const std::size_t> assign, std::size_t M) {
  return segment_max(point_feat, assign, M);
}

Tensor unpool(const Tensor& pooled, std::span<const std::size_t> assign) { return index_select(pooled, 0, assign); }

}  // namespace ng4d
