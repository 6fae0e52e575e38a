#pragma once

// Training losses and evaluation metrics over point sets.

#include <string>
#include <vector>

#include "ng4d/geometry.hpp"
#include "ng4d/tensor.hpp"

namespace ng4d {

/// sum_a min_b |a - b|^2 + sum_b min_a |b - a|^2. Gradients follow the
/// selected nearest pairs (ties to the lowest index).
Tensor chamfer_loss(const Tensor& a, const Tensor& b);

/// Optimal assignment between equal-size sets minimizing total squared
/// distance. Returns match[i] = index in b for row i of a.
std::vector<std::size_t> optimal_assignment(const PointMatrix& a, const PointMatrix& b);

struct SinkhornOptions {
  /// Entropic regularization relative to the squared scene scale.
  double reg = 0.01;
  std::size_t iterations = 200;
  /// When > reg, regularization is annealed geometrically from this value
  /// down to reg over the iterations, warm-starting the dual potentials.
  double anneal_from = 0.0;
  /// Length used to scale reg; <= 0 means the bounding-box diagonal of b.
  double scale = 0.0;
};

/// Entropic transport plan with uniform marginals, computed in the log
/// domain. Row-major [N x K].
RowMatrix sinkhorn_plan(const PointMatrix& a, const PointMatrix& b, const SinkhornOptions& opts = {});

enum class EmdMode { Exact, Sinkhorn };

/// Exact: mean squared distance under the optimal assignment (sizes must
/// match). Sinkhorn: sum_ij P_ij |a_i - b_j|^2 for the entropic plan. The
/// matching or plan is held fixed for the gradient.
Tensor emd_loss(const Tensor& a, const Tensor& b, EmdMode mode, const SinkhornOptions& opts = {});
/// Exact when both sizes equal and N <= exact_limit, otherwise Sinkhorn.
EmdMode emd_mode_for(std::size_t n, std::size_t k, std::size_t exact_limit = 512);

/// sum_i (1/k) sum_{j in N(i)} |f_j - f_i|^2 with N(i) given as an N x k
/// row-major neighbour table.
Tensor smoothness_loss(const Tensor& flow, const std::vector<std::size_t>& neighbors, std::size_t k);
/// Neighbourhoods from the exact kNN of `points`.
Tensor smoothness_loss(const Tensor& flow, const PointMatrix& points, std::size_t k);

struct LossWeights {
  double chamfer = 1.0;
  double smooth = 1.0;
  double emd = 50.0;

  bool operator==(const LossWeights&) const = default;
};

struct LossTerms {
  Tensor chamfer;
  Tensor smooth;  // undefined when disabled
  Tensor emd;
};

/// lambda1 CD + lambda2 smooth + lambda3 EMD for one pair; skipped terms
/// contribute nothing.
Tensor weighted_loss(const LossTerms& terms, const LossWeights& w);
/// Sum of weighted_loss over all pairs. Requires at least one pair.
Tensor total_loss(const std::vector<LossTerms>& pairs, const LossWeights& w);

struct CloudMetrics {
  double cd = 0.0;  // mean_a min_b d^2 + mean_b min_a d^2
  double emd = 0.0;
  std::string emd_mode;  // "exact" or "sinkhorn"
};

CloudMetrics eval_metrics(const PointMatrix& pred, const PointMatrix& gt, std::size_t exact_limit = 1024);

struct FlowMetrics {
  double epe3d = 0.0;
  double acc_s = 0.0;
  double acc_r = 0.0;
  double outliers = 0.0;
};

FlowMetrics flow_metrics(const PointMatrix& pred, const PointMatrix& gt);

}  // namespace ng4d
