#pragma once

// Iterative soft clustering of a frame into M Gaussians, hard assignment,
// covariances, and learned per-Gaussian features (EdgeConv over member
// neighbourhoods followed by mean-pooled self-attention).

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ng4d/geometry.hpp"
#include "ng4d/nn.hpp"
#include "ng4d/tensor.hpp"

namespace ng4d {

inline constexpr std::size_t kGaussianFeatureDim = 32;

struct ClusterOptions {
  /// Clustering runs on points rescaled so the bounding-box diagonal has
  /// this length; results are mapped back to input units.
  double length_scale = 8.0;
  /// Denominator guard of the center update.
  double eps = 1e-6;
};

struct SoftClustering {
  PointMatrix mu;  // M x 3
  RowMatrix soft;  // N x M, rows sum to 1
};

/// Seeded farthest-point selection of M distinct input points: a uniformly
/// random first index, then repeatedly the point farthest from the chosen
/// set (ties to the lowest index).
PointMatrix initial_centers(const PointMatrix& points, std::size_t M, std::uint64_t seed);

/// Soft assignment S_ij = softmax_j(-|P_i - C_j|^2) in clustering units.
RowMatrix soft_assign(const PointMatrix& points, const PointMatrix& centers,
                      const ClusterOptions& opts = {});
/// Closed-form center update C = (S^T P) / (S^T 1 + eps).
PointMatrix update_centers(const PointMatrix& points, const RowMatrix& soft,
                           const ClusterOptions& opts = {});

/// kappa rounds of (soft_assign, update_centers) from initial_centers.
/// The returned soft matrix is the one that produced the returned mu.
SoftClustering soft_cluster(const PointMatrix& points, std::size_t M, std::size_t kappa,
                            std::uint64_t seed, const ClusterOptions& opts = {});
SoftClustering soft_cluster_from(const PointMatrix& points, const PointMatrix& init,
                                 std::size_t kappa, const ClusterOptions& opts = {});

/// Row-wise argmax, ties to the lowest column.
std::vector<std::size_t> hard_assign(const RowMatrix& soft);

/// Per-Gaussian second moment of its hard-assigned members about their
/// centroid, plus eps_reg * I. Gaussians without members get eps_reg * I.
std::vector<Eigen::Matrix3d> covariances(const PointMatrix& points,
                                         const std::vector<std::size_t>& assign, std::size_t M,
                                         double eps_reg = 1e-6);

struct KnnGraph {
  std::size_t k = 0;
  std::vector<std::size_t> neighbors;  // N x k, row-major

  std::size_t size() const { return k == 0 ? 0 : neighbors.size() / k; }
};

/// Exact k nearest neighbours of every point, self excluded, ordered by
/// (distance, index). Requires N >= 2 and 1 <= k < N.
KnnGraph knn_graph(const PointMatrix& points, std::size_t k);

/// Variable-degree neighbour lists (CSR) over all points of a frame.
struct NeighborLists {
  std::vector<std::size_t> offsets;  // N + 1
  std::vector<std::size_t> indices;

  std::size_t size() const { return offsets.empty() ? 0 : offsets.size() - 1; }
};

NeighborLists to_lists(const KnnGraph& graph);

/// Neighbourhoods restricted to each point's Gaussian: k = clamp(min(target,
/// members - 1), 1, 32). A singleton Gaussian's only neighbour is itself.
NeighborLists member_neighborhoods(const PointMatrix& points, const std::vector<std::size_t>& assign,
                                   std::size_t M, std::size_t target_k = 16);

/// One EdgeConv block: Linear on concat(x_i - x_j, x_i) split into the weight
/// rows acting on the difference (`diff`) and on x_i (`self`).
struct EdgeConvBlock {
  Tensor diff;  // C x out
  Tensor self;  // C x out
  Tensor bias;  // out

  static EdgeConvBlock create(std::size_t in, std::size_t out, Rng& rng);
  std::size_t in() const { return diff.dim(0); }
  std::size_t out() const { return diff.dim(1); }
  void collect(const std::string& prefix, NamedParams& out) const;
};

struct GaussianFeatureWeights {
  std::array<EdgeConvBlock, 4> blocks;  // 6->16, 32->16, 32->16, 32->16 edge inputs
  Linear fuse;                          // 64 -> 32 over the concatenated block outputs
  Tensor wq, wk, wv;                    // 32 x 32 attention projections

  static GaussianFeatureWeights create(Rng& rng);
  void collect(const std::string& prefix, NamedParams& out) const;
};

/// max_j relu(x_i (Wd + Ws) - x_j Wd + b) over each point's neighbour list.
/// The ReLU-then-max is evaluated as relu(max_j ...); the gradient goes to
/// the first maximizing neighbour in list order, and none flows when the
/// maximum is <= 0.
Tensor edgeconv_block(const Tensor& x, const NeighborLists& nbrs, const EdgeConvBlock& w);

/// Explicit per-edge inputs concat(x_i - x_j, x_i), one row per list entry.
Tensor edge_inputs(const Tensor& x, const NeighborLists& nbrs);
/// Reference form: Linear over edge_inputs, ReLU, segment max.
Tensor edgeconv_block_explicit(const Tensor& x, const NeighborLists& nbrs, const EdgeConvBlock& w);

/// Four EdgeConv blocks and the pointwise fuse block: [N x 3] -> [N x 32].
Tensor edgeconv_features(const Tensor& points, const NeighborLists& nbrs,
                         const GaussianFeatureWeights& w, const Mode& mode = {});

/// softmax((F Wq)(F Wk)^T / sqrt(d_k)) row-stochastic [n x n] weights.
Tensor attention_weights(const Tensor& feat, const Tensor& wq, const Tensor& wk);
/// Scaled dot-product self-attention [n x D] -> [n x D], then the row mean [1 x D].
Tensor gaussian_self_attention(const Tensor& feat, const Tensor& wq, const Tensor& wk, const Tensor& wv);

/// Geometry of one frame's mixture; computed once and outside the tape.
struct GaussianGeometry {
  PointMatrix mu;                      // M x 3
  std::vector<Eigen::Matrix3d> sigma;  // M
  RowMatrix soft;                      // N x M
  std::vector<std::size_t> assign;     // N
  NeighborLists neighborhoods;

  std::size_t gaussians() const { return static_cast<std::size_t>(mu.rows()); }
  /// Member point indices of Gaussian m, ascending.
  std::vector<std::size_t> members(std::size_t m) const;
};

struct GeometryOptions {
  std::size_t M = 8;
  std::size_t kappa = 200;
  std::uint64_t seed = 0;
  double eps_reg = 1e-6;
  std::size_t target_k = 16;
  ClusterOptions cluster;
};

GaussianGeometry cluster_geometry(const PointMatrix& points, const GeometryOptions& opts);
/// Same, with the clustering started from `init` instead of the seeded
/// farthest-point selection (used to carry Gaussian identities across frames).
GaussianGeometry cluster_geometry_from(const PointMatrix& points, const PointMatrix& init,
                                       const GeometryOptions& opts);

/// Per-Gaussian features [M x 32]; Gaussians without members yield zeros.
Tensor gaussian_features(const Tensor& points, const GaussianGeometry& geom,
                         const GaussianFeatureWeights& w, const Mode& mode = {});

struct GaussianMixtureState {
  GaussianGeometry geometry;
  Tensor feat;  // M x 32
};

GaussianMixtureState gaussianize(const PointMatrix& points, const GeometryOptions& opts,
                                 const GaussianFeatureWeights& w, const Mode& mode = {});

/// JSON with mu, sigma and the per-Gaussian member counts.
std::string mixture_debug_json(const GaussianGeometry& geom);

}  // namespace ng4d
