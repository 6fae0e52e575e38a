#pragma once

// The composed interpolation model: preprocessed frames with their fixed
// Gaussian geometry, every learnable parameter, and the forward pass from an
// anchor frame to query times.
//
// Predictions take the form
//   P_a + S (dmu + m(t) - m(t_a)) + (t - t_a) h(t)
// where m is the motion head and h the residual-flow head, so a query at the
// anchor's own time returns the anchor frame exactly.

#include <span>
#include <vector>

#include "ng4d/config.hpp"
#include "ng4d/deformation.hpp"
#include "ng4d/fusion.hpp"
#include "ng4d/gaussian.hpp"
#include "ng4d/neural_field.hpp"
#include "ng4d/pointcloud.hpp"
#include "ng4d/temporal_rbf.hpp"

namespace ng4d {

struct ModelParams {
  NeuralFieldParams field;
  GaussianFeatureWeights gauss;
  RbfTemporalInterpolant rbf;
  TgGcnWeights gcn;
  DeformationHeads heads;
  Linear pool_proj;  // concat(P, F_L) 35 -> 32 ahead of Gaussian max-pooling
  FusionWeights fusion;
  PredictionHead head;

  static ModelParams create(std::size_t frames, std::size_t gaussians, Rng& rng);
  /// Every parameter in a fixed registration order.
  NamedParams named() const;
  /// Parameters of the enabled components.
  NamedParams active(const Components& c) const;
};

/// Maps input coordinates into the unit box of the whole sequence.
struct Normalization {
  Eigen::RowVector3d center = Eigen::RowVector3d::Zero();
  double scale = 1.0;  // largest bounding-box side, 1 when degenerate

  static Normalization fit(const Sequence& seq);
  PointMatrix to_unit(const PointMatrix& p) const;
  PointMatrix from_unit(const PointMatrix& p) const;
};

struct FrameState {
  double time = 0.0;      // normalized to [0, 1]
  double raw_time = 0.0;  // as given in the input sequence
  PointMatrix points;     // unit coordinates
  Tensor points_t;
  GaussianGeometry geometry;
  Tensor soft;       // N x M
  Tensor mu;         // M x 3
  Tensor sigma;      // M x 3 x 3
  Tensor adjacency;  // M x M normalized
  std::vector<std::size_t> smooth_neighbors;  // N x smooth_k, empty when unused
};

struct Model {
  RunConfig config;
  Normalization norm;
  std::vector<FrameState> frames;
  ModelParams params;

  /// Frame whose time is nearest to t, ties to the lower index.
  std::size_t nearest_frame(double t) const;
  /// Nearest frame other than `target`, ties to the lower index.
  std::size_t anchor_for(std::size_t target) const;
  double to_raw_time(double t) const;
};

/// Preprocesses the sequence (optional outlier removal, seeded sampling,
/// timestamp and coordinate normalization), clusters every frame once and
/// initializes the parameters. Frame 0 uses the seeded farthest-point start;
/// each later frame starts from the previous frame's means so Gaussian m
/// denotes the same part of the scene in every frame.
Model build_model(const Sequence& seq, const RunConfig& cfg);

/// Rebuilds the per-frame state from preprocessed frames in the order given.
/// Used when loading a saved model, with fresh parameters to overwrite.
Model assemble_model(const RunConfig& cfg, const Normalization& norm, std::vector<PointCloud> unit_frames,
                     std::vector<double> raw_times);

struct Prediction {
  Tensor points;        // N x 3, unit coordinates
  Tensor displacement;  // points - anchor points
  Tensor point_flow;    // Gaussian-driven part
  Tensor residual;      // (t - t_a) h(t)
};

/// Forward pass from frame `anchor` to each query time. Anchor-side terms
/// are computed once and shared across the queries.
std::vector<Prediction> predict(const Model& model, std::size_t anchor, std::span<const double> times,
                                const Mode& mode = {});

}  // namespace ng4d
