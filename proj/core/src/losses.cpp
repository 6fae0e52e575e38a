#include "ng4d/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "ng4d/kdtree.hpp"
#include "ng4d/ops.hpp"
#include "ng4d/parallel.hpp"

namespace ng4d {

namespace {

double dist2(const PointMatrix& a, std::size_t i, const PointMatrix& b, std::size_t j) {
  const auto ri = static_cast<Eigen::Index>(i), rj = static_cast<Eigen::Index>(j);
  const double dx = a(ri, 0) - b(rj, 0), dy = a(ri, 1) - b(rj, 1), dz = a(ri, 2) - b(rj, 2);
  return dx * dx + dy * dy + dz * dz;
}

void check_cloud(const Tensor& t, const char* what) {
  if (t.rank() != 2 || t.dim(1) != 3) {
    throw DimensionError(std::string(what) + ": expected [N x 3] cloud, got " + shape_str(t.shape()));
  }
}

std::vector<std::size_t> nearest_indices(const PointMatrix& from, const PointMatrix& to) {
  const KdTree tree(to);
  std::vector<std::size_t> nn(static_cast<std::size_t>(from.rows()));
  parallel_for(nn.size(), [&](std::size_t i) {
    nn[i] = tree.nearest(from.row(static_cast<Eigen::Index>(i)).transpose()).index;
  });
  return nn;
}

double scene_scale(const PointMatrix& b, double requested) {
  if (requested > 0.0) return requested;
  const double d = (b.colwise().maxCoeff() - b.colwise().minCoeff()).norm();
  return d > 0.0 ? d : 1.0;
}

struct Potentials {
  Eigen::VectorXd f, g;
  double eps;
};

Potentials sinkhorn_potentials(const PointMatrix& a, const PointMatrix& b, const SinkhornOptions& opts) {
  const auto n = a.rows(), k = b.rows();
  if (n == 0 || k == 0) throw DataError("sinkhorn: empty cloud");
  if (!(opts.reg > 0.0) || opts.iterations == 0) throw ParameterError("sinkhorn: need reg > 0 and iterations > 0");
  const double s2 = std::pow(scene_scale(b, opts.scale), 2);
  const double eps_final = opts.reg * s2;
  const double eps_start = std::max(opts.anneal_from * s2, eps_final);
  const auto anneal_steps = static_cast<double>(std::max<std::size_t>(1, opts.iterations / 2));
  RowMatrix c(n, k);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < k; ++j) c(i, j) = dist2(a, static_cast<std::size_t>(i), b, static_cast<std::size_t>(j));
  const RowMatrix ct = c.transpose();  // contiguous columns for the g update
  const double log_a = -std::log(static_cast<double>(n)), log_b = -std::log(static_cast<double>(k));
  Potentials p{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(k), eps_final};
  // out_r = eps (log_m - logsumexp_s((dual_s - cost_rs) / eps)) over rows r of cost.
  auto soft_min = [](const RowMatrix& cost, const Eigen::VectorXd& dual, double eps, double log_m,
                     Eigen::VectorXd& out) {
    const double inv = 1.0 / eps;
    const auto cols = cost.cols();
    parallel_for(static_cast<std::size_t>(cost.rows()), [&](std::size_t r) {
      const double* row = cost.data() + static_cast<Eigen::Index>(r) * cols;
      double mx = -std::numeric_limits<double>::infinity();
      for (Eigen::Index s = 0; s < cols; ++s) mx = std::max(mx, (dual[s] - row[s]) * inv);
      double z = 0.0;
      for (Eigen::Index s = 0; s < cols; ++s) z += std::exp((dual[s] - row[s]) * inv - mx);
      out[static_cast<Eigen::Index>(r)] = eps * (log_m - mx - std::log(z));
    });
  };
  for (std::size_t it = 0; it < opts.iterations; ++it) {
    const double frac = std::min(1.0, static_cast<double>(it) / anneal_steps);
    const double eps = eps_start * std::pow(eps_final / eps_start, frac);
    soft_min(c, p.g, eps, log_a, p.f);
    soft_min(ct, p.f, eps, log_b, p.g);
  }
  return p;
}

RowMatrix plan_from(const PointMatrix& a, const PointMatrix& b, const Potentials& p) {
  RowMatrix plan(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j)
      plan(i, j) = std::exp((p.f[i] + p.g[j] - dist2(a, static_cast<std::size_t>(i), b, static_cast<std::size_t>(j))) / p.eps);
  return plan;
}

}  // namespace

Tensor chamfer_loss(const Tensor& a, const Tensor& b) {
  check_cloud(a, "chamfer_loss");
  check_cloud(b, "chamfer_loss");
  const PointMatrix pa = to_points(a), pb = to_points(b);
  auto ab = std::make_shared<std::vector<std::size_t>>(nearest_indices(pa, pb));
  auto ba = std::make_shared<std::vector<std::size_t>>(nearest_indices(pb, pa));
  // Directional sums are formed separately so swapping a and b is exact.
  double s_ab = 0.0, s_ba = 0.0;
  for (std::size_t i = 0; i < ab->size(); ++i) s_ab += dist2(pa, i, pb, (*ab)[i]);
  for (std::size_t j = 0; j < ba->size(); ++j) s_ba += dist2(pb, j, pa, (*ba)[j]);
  const double total = s_ab + s_ba;
  auto ai = a.impl(), bi = b.impl();
  return make_op("chamfer", {1}, {total}, {a, b}, [ai, bi, ab, ba](const detail::TensorImpl& o) {
    const double g = o.grad[0];
    const auto& av = ai->data;
    const auto& bv = bi->data;
    std::vector<double> ga(av.size(), 0.0), gb(bv.size(), 0.0);
    auto pair = [&](const std::vector<double>& xv, std::vector<double>& gx, std::size_t i,
                    const std::vector<double>& yv, std::vector<double>& gy, std::size_t j) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double d = 2.0 * g * (xv[i * 3 + c] - yv[j * 3 + c]);
        gx[i * 3 + c] += d;
        gy[j * 3 + c] -= d;
      }
    };
    for (std::size_t i = 0; i < ab->size(); ++i) pair(av, ga, i, bv, gb, (*ab)[i]);
    for (std::size_t j = 0; j < ba->size(); ++j) pair(bv, gb, j, av, ga, (*ba)[j]);
    if (ai->requires_grad) {
      auto buf = detail::grad_buffer(*ai);
      for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += ga[i];
    }
    if (bi->requires_grad) {
      auto buf = detail::grad_buffer(*bi);
      for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += gb[i];
    }
  });
}

std::vector<std::size_t> optimal_assignment(const PointMatrix& a, const PointMatrix& b) {
  const auto n = static_cast<std::size_t>(a.rows());
  if (n != static_cast<std::size_t>(b.rows())) throw DimensionError("exact EMD needs equal-size clouds");
  if (n == 0) throw DataError("exact EMD: empty cloud");
  // Shortest augmenting path with dual potentials; 1-based with a sentinel
  // column 0.
  const double inf = std::numeric_limits<double>::infinity();
  RowMatrix cost(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = dist2(a, i, b, j);
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      const double* row = cost.data() + (i0 - 1) * n;
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = row[j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> match(n);
  for (std::size_t j = 1; j <= n; ++j) match[p[j] - 1] = j - 1;
  return match;
}

RowMatrix sinkhorn_plan(const PointMatrix& a, const PointMatrix& b, const SinkhornOptions& opts) {
  return plan_from(a, b, sinkhorn_potentials(a, b, opts));
}

EmdMode emd_mode_for(std::size_t n, std::size_t k, std::size_t exact_limit) {
  return n == k && n <= exact_limit ? EmdMode::Exact : EmdMode::Sinkhorn;
}

Tensor emd_loss(const Tensor& a, const Tensor& b, EmdMode mode, const SinkhornOptions& opts) {
  check_cloud(a, "emd_loss");
  check_cloud(b, "emd_loss");
  const PointMatrix pa = to_points(a), pb = to_points(b);
  const std::size_t n = pa.rows(), k = pb.rows();
  // Per-point gradient directions d(loss)/d(a_i) and d(loss)/d(b_j).
  auto ga = std::make_shared<std::vector<double>>(n * 3, 0.0);
  auto gb = std::make_shared<std::vector<double>>(k * 3, 0.0);
  double value = 0.0;
  if (mode == EmdMode::Exact) {
    const auto match = optimal_assignment(pa, pb);
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      value += dist2(pa, i, pb, match[i]);
      for (std::size_t c = 0; c < 3; ++c) {
        const double d = 2.0 * inv * (pa(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) -
                                      pb(static_cast<Eigen::Index>(match[i]), static_cast<Eigen::Index>(c)));
        (*ga)[i * 3 + c] += d;
        (*gb)[match[i] * 3 + c] -= d;
      }
    }
    value *= inv;
  } else {
    const auto pot = sinkhorn_potentials(pa, pb, opts);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        const double c2 = dist2(pa, i, pb, j);
        const double w = std::exp((pot.f[static_cast<Eigen::Index>(i)] + pot.g[static_cast<Eigen::Index>(j)] - c2) / pot.eps);
        value += w * c2;
        for (std::size_t c = 0; c < 3; ++c) {
          const double d = 2.0 * w * (pa(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) -
                                      pb(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c)));
          (*ga)[i * 3 + c] += d;
          (*gb)[j * 3 + c] -= d;
        }
      }
    }
  }
  auto ai = a.impl(), bi = b.impl();
  return make_op(mode == EmdMode::Exact ? "emd_exact" : "emd_sinkhorn", {1}, {value}, {a, b},
                 [ai, bi, ga, gb](const detail::TensorImpl& o) {
                   const double g = o.grad[0];
                   if (ai->requires_grad) {
                     auto buf = detail::grad_buffer(*ai);
                     for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g * (*ga)[i];
                   }
                   if (bi->requires_grad) {
                     auto buf = detail::grad_buffer(*bi);
                     for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g * (*gb)[i];
                   }
                 });
}

Tensor smoothness_loss(const Tensor& flow, const std::vector<std::size_t>& neighbors, std::size_t k) {
  const std::size_t n = flow.dim(0);
  if (k == 0 || neighbors.size() != n * k) throw DimensionError("smoothness_loss: neighbour table must be N x k");
  std::vector<std::size_t> owner(n * k);
  for (std::size_t i = 0; i < n * k; ++i) owner[i] = i / k;
  const Tensor d = index_select(flow, 0, neighbors) - index_select(flow, 0, owner);
  return sum(square(d)) * (1.0 / static_cast<double>(k));
}

Tensor smoothness_loss(const Tensor& flow, const PointMatrix& points, std::size_t k) {
  if (static_cast<std::size_t>(points.rows()) != flow.dim(0)) {
    throw DimensionError("smoothness_loss: flow and points differ in length");
  }
  return smoothness_loss(flow, knn_self(points, k), k);
}

Tensor weighted_loss(const LossTerms& t, const LossWeights& w) {
  Tensor total = t.chamfer * w.chamfer;
  if (t.smooth.defined() && w.smooth != 0.0) total = total + t.smooth * w.smooth;
  if (t.emd.defined() && w.emd != 0.0) total = total + t.emd * w.emd;
  return total;
}

Tensor total_loss(const std::vector<LossTerms>& pairs, const LossWeights& w) {
  if (pairs.empty()) throw ParameterError("total_loss needs at least one supervision pair");
  Tensor total = weighted_loss(pairs.front(), w);
  for (std::size_t i = 1; i < pairs.size(); ++i) total = total + weighted_loss(pairs[i], w);
  return total;
}

CloudMetrics eval_metrics(const PointMatrix& pred, const PointMatrix& gt, std::size_t exact_limit) {
  if (pred.rows() == 0 || gt.rows() == 0) throw DataError("metrics on an empty cloud");
  CloudMetrics m;
  const auto ab = nearest_indices(pred, gt);
  const auto ba = nearest_indices(gt, pred);
  double s1 = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < ab.size(); ++i) s1 += dist2(pred, i, gt, ab[i]);
  for (std::size_t j = 0; j < ba.size(); ++j) s2 += dist2(gt, j, pred, ba[j]);
  m.cd = s1 / static_cast<double>(ab.size()) + s2 / static_cast<double>(ba.size());
  const auto mode = emd_mode_for(pred.rows(), gt.rows(), exact_limit);
  const SinkhornOptions sk{.reg = 1e-3, .iterations = 400, .anneal_from = 0.1};
  m.emd = emd_loss(to_tensor(pred), to_tensor(gt), mode, sk).item();
  m.emd_mode = mode == EmdMode::Exact ? "exact" : "sinkhorn";
  return m;
}

FlowMetrics flow_metrics(const PointMatrix& pred, const PointMatrix& gt) {
  if (pred.rows() != gt.rows()) throw DimensionError("flow_metrics: flow fields differ in length");
  if (pred.rows() == 0) throw DataError("flow_metrics: empty flow");
  double epe_sum = 0.0;
  std::size_t acc_s = 0, acc_r = 0, outliers = 0;
  for (Eigen::Index i = 0; i < pred.rows(); ++i) {
    const double epe = (pred.row(i) - gt.row(i)).norm();
    const double mag = gt.row(i).norm();
    const double rel = mag > 0.0 ? epe / mag : (epe > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
    epe_sum += epe;
    acc_s += epe < 0.05 || rel < 0.05;
    acc_r += epe < 0.1 || rel < 0.1;
    outliers += epe > 0.3 || rel > 0.1;
  }
  const double n = static_cast<double>(pred.rows());
  return {epe_sum / n, static_cast<double>(acc_s) / n, static_cast<double>(acc_r) / n,
          static_cast<double>(outliers) / n};
}

}  // namespace ng4d
