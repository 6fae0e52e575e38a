#include "ng4d/gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "ng4d/kdtree.hpp"
#include "ng4d/ops.hpp"
#include "ng4d/random.hpp"

namespace ng4d {

namespace {

struct ClusterFrame {
  Eigen::RowVector3d center;
  double scale;  // clustering units per input unit
};

ClusterFrame cluster_frame(const PointMatrix& points, const ClusterOptions& opts) {
  if (!(opts.length_scale > 0.0)) throw ParameterError("cluster length_scale must be positive");
  const Eigen::RowVector3d lo = points.colwise().minCoeff();
  const Eigen::RowVector3d hi = points.colwise().maxCoeff();
  const double diag = (hi - lo).norm();
  return {0.5 * (lo + hi), diag > 0.0 ? opts.length_scale / diag : 1.0};
}

PointMatrix to_cluster_units(const PointMatrix& p, const ClusterFrame& f) {
  return (p.rowwise() - f.center) * f.scale;
}

PointMatrix from_cluster_units(const PointMatrix& p, const ClusterFrame& f) {
  return (p / f.scale).rowwise() + f.center;
}

RowMatrix soft_assign_units(const PointMatrix& pn, const PointMatrix& cn) {
  const auto n = pn.rows(), m = cn.rows();
  RowMatrix s(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    double dmin = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < m; ++j) {
      s(i, j) = (pn.row(i) - cn.row(j)).squaredNorm();
      dmin = std::min(dmin, s(i, j));
    }
    double z = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      s(i, j) = std::exp(dmin - s(i, j));
      z += s(i, j);
    }
    s.row(i) /= z;
  }
  return s;
}

PointMatrix update_centers_units(const PointMatrix& pn, const RowMatrix& s, double eps) {
  PointMatrix c = s.transpose() * pn;
  const Eigen::VectorXd mass = s.colwise().sum().transpose();
  for (Eigen::Index j = 0; j < c.rows(); ++j) c.row(j) /= mass[j] + eps;
  return c;
}

void check_cluster_args(const PointMatrix& points, std::size_t M) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (n == 0) throw DataError("clustering an empty cloud");
  if (M == 0) throw ParameterError("number of Gaussians must be >= 1");
  if (M > n) {
    throw ParameterError("number of Gaussians M=" + std::to_string(M) + " exceeds point count N=" +
                         std::to_string(n));
  }
}

}  // namespace

PointMatrix initial_centers(const PointMatrix& points, std::size_t M, std::uint64_t seed) {
  check_cluster_args(points, M);
  const auto n = static_cast<std::size_t>(points.rows());
  Rng rng(seed);
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::vector<bool> chosen(n, false);
  PointMatrix c(static_cast<Eigen::Index>(M), 3);
  auto next = static_cast<std::size_t>(rng.below(n));
  for (std::size_t m = 0; m < M; ++m) {
    chosen[next] = true;
    c.row(static_cast<Eigen::Index>(m)) = points.row(static_cast<Eigen::Index>(next));
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (chosen[i]) continue;
      const double d = (points.row(static_cast<Eigen::Index>(i)) - c.row(static_cast<Eigen::Index>(m))).squaredNorm();
      dist[i] = std::min(dist[i], d);
      if (best == n || dist[i] > dist[best]) best = i;
    }
    next = best;
  }
  return c;
}

RowMatrix soft_assign(const PointMatrix& points, const PointMatrix& centers, const ClusterOptions& opts) {
  const auto f = cluster_frame(points, opts);
  return soft_assign_units(to_cluster_units(points, f), to_cluster_units(centers, f));
}

PointMatrix update_centers(const PointMatrix& points, const RowMatrix& soft, const ClusterOptions& opts) {
  if (soft.rows() != points.rows()) throw DimensionError("update_centers: soft rows must match points");
  const auto f = cluster_frame(points, opts);
  return from_cluster_units(update_centers_units(to_cluster_units(points, f), soft, opts.eps), f);
}

SoftClustering soft_cluster_from(const PointMatrix& points, const PointMatrix& init, std::size_t kappa,
                                 const ClusterOptions& opts) {
  check_cluster_args(points, static_cast<std::size_t>(init.rows()));
  if (kappa < 1) throw ParameterError("clustering needs kappa >= 1 iterations");
  const auto f = cluster_frame(points, opts);
  const PointMatrix pn = to_cluster_units(points, f);
  PointMatrix cn = to_cluster_units(init, f);
  RowMatrix s;
  for (std::size_t it = 0; it < kappa; ++it) {
    s = soft_assign_units(pn, cn);
    cn = update_centers_units(pn, s, opts.eps);
  }
  return {from_cluster_units(cn, f), std::move(s)};
}

SoftClustering soft_cluster(const PointMatrix& points, std::size_t M, std::size_t kappa, std::uint64_t seed,
                            const ClusterOptions& opts) {
  return soft_cluster_from(points, initial_centers(points, M, seed), kappa, opts);
}

std::vector<std::size_t> hard_assign(const RowMatrix& soft) {
  std::vector<std::size_t> a(static_cast<std::size_t>(soft.rows()));
  for (Eigen::Index i = 0; i < soft.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < soft.cols(); ++j) {
      if (soft(i, j) > soft(i, best)) best = j;
    }
    a[static_cast<std::size_t>(i)] = static_cast<std::size_t>(best);
  }
  return a;
}

std::vector<Eigen::Matrix3d> covariances(const PointMatrix& points, const std::vector<std::size_t>& assign,
                                         std::size_t M, double eps_reg) {
  if (assign.size() != static_cast<std::size_t>(points.rows())) {
    throw DimensionError("covariances: assignment length must match point count");
  }
  std::vector<Eigen::Vector3d> centroid(M, Eigen::Vector3d::Zero());
  std::vector<std::size_t> count(M, 0);
  for (std::size_t i = 0; i < assign.size(); ++i) {
    if (assign[i] >= M) throw DimensionError("covariances: assignment index out of range");
    centroid[assign[i]] += points.row(static_cast<Eigen::Index>(i)).transpose();
    ++count[assign[i]];
  }
  std::vector<Eigen::Matrix3d> sigma(M, Eigen::Matrix3d::Zero());
  for (std::size_t m = 0; m < M; ++m) {
    if (count[m]) centroid[m] /= static_cast<double>(count[m]);
  }
  for (std::size_t i = 0; i < assign.size(); ++i) {
    const Eigen::Vector3d d = points.row(static_cast<Eigen::Index>(i)).transpose() - centroid[assign[i]];
    sigma[assign[i]] += d * d.transpose();
  }
  for (std::size_t m = 0; m < M; ++m) {
    if (count[m]) sigma[m] /= static_cast<double>(count[m]);
    sigma[m] += eps_reg * Eigen::Matrix3d::Identity();
  }
  return sigma;
}

KnnGraph knn_graph(const PointMatrix& points, std::size_t k) {
  if (points.rows() < 2) throw ParameterError("knn_graph needs at least 2 points");
  return {k, knn_self(points, k)};
}

NeighborLists to_lists(const KnnGraph& graph) {
  NeighborLists l;
  const auto n = graph.size();
  l.offsets.resize(n + 1);
  for (std::size_t i = 0; i <= n; ++i) l.offsets[i] = i * graph.k;
  l.indices = graph.neighbors;
  return l;
}

NeighborLists member_neighborhoods(const PointMatrix& points, const std::vector<std::size_t>& assign,
                                   std::size_t M, std::size_t target_k) {
  const auto n = static_cast<std::size_t>(points.rows());
  std::vector<std::vector<std::size_t>> members(M);
  for (std::size_t i = 0; i < n; ++i) members.at(assign[i]).push_back(i);
  std::vector<std::vector<std::size_t>> lists(n);
  for (const auto& idx : members) {
    if (idx.empty()) continue;
    if (idx.size() == 1) {
      lists[idx[0]] = {idx[0]};
      continue;
    }
    const std::size_t k = std::clamp<std::size_t>(std::min(target_k, idx.size() - 1), 1, 32);
    PointMatrix sub(static_cast<Eigen::Index>(idx.size()), 3);
    for (std::size_t r = 0; r < idx.size(); ++r) sub.row(static_cast<Eigen::Index>(r)) = points.row(static_cast<Eigen::Index>(idx[r]));
    const auto local = knn_self(sub, k);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      auto& out = lists[idx[r]];
      for (std::size_t j = 0; j < k; ++j) out.push_back(idx[local[r * k + j]]);
    }
  }
  NeighborLists l;
  l.offsets.push_back(0);
  for (const auto& li : lists) {
    l.indices.insert(l.indices.end(), li.begin(), li.end());
    l.offsets.push_back(l.indices.size());
  }
  return l;
}

EdgeConvBlock EdgeConvBlock::create(std::size_t in, std::size_t out, Rng& rng) {
  // Fan-in is that of the concatenated edge input.
  return {uniform_param({in, out}, 2 * in, rng), uniform_param({in, out}, 2 * in, rng),
          uniform_param({out}, 2 * in, rng)};
}

void EdgeConvBlock::collect(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".diff", diff);
  out.emplace_back(prefix + ".self", self);
  out.emplace_back(prefix + ".bias", bias);
}

GaussianFeatureWeights GaussianFeatureWeights::create(Rng& rng) {
  GaussianFeatureWeights w;
  w.blocks[0] = EdgeConvBlock::create(3, 16, rng);
  for (std::size_t b = 1; b < 4; ++b) w.blocks[b] = EdgeConvBlock::create(16, 16, rng);
  w.fuse = Linear::create(64, kGaussianFeatureDim, rng);
  const std::size_t d = kGaussianFeatureDim;
  w.wq = uniform_param({d, d}, d, rng);
  w.wk = uniform_param({d, d}, d, rng);
  w.wv = uniform_param({d, d}, d, rng);
  return w;
}

void GaussianFeatureWeights::collect(const std::string& prefix, NamedParams& out) const {
  for (std::size_t b = 0; b < blocks.size(); ++b) blocks[b].collect(prefix + ".edge" + std::to_string(b), out);
  fuse.collect(prefix + ".fuse", out);
  out.emplace_back(prefix + ".wq", wq);
  out.emplace_back(prefix + ".wk", wk);
  out.emplace_back(prefix + ".wv", wv);
}

namespace {

void check_lists(const Tensor& x, const NeighborLists& nbrs) {
  if (x.rank() != 2 || nbrs.size() != x.dim(0)) {
    throw DimensionError("edgeconv: neighbour lists do not match input " + shape_str(x.shape()));
  }
  for (std::size_t i = 0; i < nbrs.size(); ++i) {
    if (nbrs.offsets[i] == nbrs.offsets[i + 1]) throw DimensionError("edgeconv: point without neighbours");
  }
}

// out[i,c] = relu(max_j (a[i,c] - b[j,c])) over j in nbrs(i).
Tensor edge_max_relu(const Tensor& a, const Tensor& b, const NeighborLists& nbrs) {
  const std::size_t n = a.dim(0), c = a.dim(1);
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(n * c, 0.0);
  auto arg = std::make_shared<std::vector<std::size_t>>(n * c, std::numeric_limits<std::size_t>::max());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double best = -std::numeric_limits<double>::infinity();
      std::size_t bj = 0;
      for (std::size_t e = nbrs.offsets[i]; e < nbrs.offsets[i + 1]; ++e) {
        const std::size_t j = nbrs.indices[e];
        const double v = av[i * c + ch] - bv[j * c + ch];
        if (v > best) {
          best = v;
          bj = j;
        }
      }
      if (best > 0.0) {
        out[i * c + ch] = best;
        (*arg)[i * c + ch] = bj;
      }
    }
  }
  auto ai = a.impl();
  auto bi = b.impl();
  return make_op("edge_max_relu", {n, c}, std::move(out), {a, b}, [ai, bi, arg, c](const detail::TensorImpl& o) {
    const bool ga_on = ai->requires_grad, gb_on = bi->requires_grad;
    std::span<double> ga, gb;
    if (ga_on) ga = detail::grad_buffer(*ai);
    if (gb_on) gb = detail::grad_buffer(*bi);
    for (std::size_t k = 0; k < arg->size(); ++k) {
      const std::size_t j = (*arg)[k];
      if (j == std::numeric_limits<std::size_t>::max()) continue;
      if (ga_on) ga[k] += o.grad[k];
      if (gb_on) gb[j * c + k % c] -= o.grad[k];
    }
  });
}

}  // namespace

Tensor edgeconv_block(const Tensor& x, const NeighborLists& nbrs, const EdgeConvBlock& w) {
  check_lists(x, nbrs);
  const Tensor a = matmul(x, w.diff + w.self) + w.bias;
  const Tensor b = matmul(x, w.diff);
  return edge_max_relu(a, b, nbrs);
}

Tensor edge_inputs(const Tensor& x, const NeighborLists& nbrs) {
  check_lists(x, nbrs);
  std::vector<std::size_t> owner;
  owner.reserve(nbrs.indices.size());
  for (std::size_t i = 0; i < nbrs.size(); ++i) {
    for (std::size_t e = nbrs.offsets[i]; e < nbrs.offsets[i + 1]; ++e) owner.push_back(i);
  }
  const Tensor xi = index_select(x, 0, owner);
  const Tensor xj = index_select(x, 0, nbrs.indices);
  return concat({xi - xj, xi}, 1);
}

Tensor edgeconv_block_explicit(const Tensor& x, const NeighborLists& nbrs, const EdgeConvBlock& w) {
  const Tensor e = edge_inputs(x, nbrs);
  const Tensor h = relu(matmul(e, concat({w.diff, w.self}, 0)) + w.bias);
  std::vector<std::size_t> owner;
  for (std::size_t i = 0; i < nbrs.size(); ++i) {
    for (std::size_t k = nbrs.offsets[i]; k < nbrs.offsets[i + 1]; ++k) owner.push_back(i);
  }
  return segment_max(h, owner, nbrs.size());
}

Tensor edgeconv_features(const Tensor& points, const NeighborLists& nbrs, const GaussianFeatureWeights& w,
                         const Mode& mode) {
  std::vector<Tensor> outs;
  Tensor h = points;
  for (const auto& block : w.blocks) {
    h = maybe_dropout(edgeconv_block(h, nbrs, block), mode);
    outs.push_back(h);
  }
  return maybe_dropout(relu(w.fuse(concat(outs, 1))), mode);
}

Tensor attention_weights(const Tensor& feat, const Tensor& wq, const Tensor& wk) {
  const double inv = 1.0 / std::sqrt(static_cast<double>(wk.dim(1)));
  return softmax(matmul(matmul(feat, wq), transpose(matmul(feat, wk))) * inv, 1);
}

Tensor gaussian_self_attention(const Tensor& feat, const Tensor& wq, const Tensor& wk, const Tensor& wv) {
  const double inv = 1.0 / std::sqrt(static_cast<double>(wk.dim(1)));
  return mean(attention(matmul(feat, wq), matmul(feat, wk), matmul(feat, wv), inv), 0, true);
}

std::vector<std::size_t> GaussianGeometry::members(std::size_t m) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < assign.size(); ++i) {
    if (assign[i] == m) idx.push_back(i);
  }
  return idx;
}

namespace {

GaussianGeometry finish_geometry(const PointMatrix& points, SoftClustering sc, const GeometryOptions& opts) {
  GaussianGeometry g;
  g.mu = std::move(sc.mu);
  g.soft = std::move(sc.soft);
  g.assign = hard_assign(g.soft);
  g.sigma = covariances(points, g.assign, opts.M, opts.eps_reg);
  g.neighborhoods = member_neighborhoods(points, g.assign, opts.M, opts.target_k);
  return g;
}

}  // namespace

GaussianGeometry cluster_geometry(const PointMatrix& points, const GeometryOptions& opts) {
  return finish_geometry(points, soft_cluster(points, opts.M, opts.kappa, opts.seed, opts.cluster), opts);
}

GaussianGeometry cluster_geometry_from(const PointMatrix& points, const PointMatrix& init,
                                       const GeometryOptions& opts) {
  if (static_cast<std::size_t>(init.rows()) != opts.M) {
    throw DimensionError("cluster_geometry_from: init has " + std::to_string(init.rows()) + " centers, expected " +
                         std::to_string(opts.M));
  }
  return finish_geometry(points, soft_cluster_from(points, init, opts.kappa, opts.cluster), opts);
}

Tensor gaussian_features(const Tensor& points, const GaussianGeometry& geom, const GaussianFeatureWeights& w,
                         const Mode& mode) {
  const Tensor f = edgeconv_features(points, geom.neighborhoods, w, mode);
  std::vector<std::vector<std::size_t>> members(geom.gaussians());
  for (std::size_t i = 0; i < geom.assign.size(); ++i) members[geom.assign[i]].push_back(i);
  std::vector<Tensor> rows;
  for (const auto& idx : members) {
    if (idx.empty()) {
      rows.emplace_back(Shape{1, kGaussianFeatureDim}, 0.0);
    } else {
      rows.push_back(gaussian_self_attention(index_select(f, 0, idx), w.wq, w.wk, w.wv));
    }
  }
  return concat(rows, 0);
}

GaussianMixtureState gaussianize(const PointMatrix& points, const GeometryOptions& opts,
                                 const GaussianFeatureWeights& w, const Mode& mode) {
  GaussianMixtureState s;
  s.geometry = cluster_geometry(points, opts);
  s.feat = gaussian_features(to_tensor(points), s.geometry, w, mode);
  return s;
}

std::string mixture_debug_json(const GaussianGeometry& geom) {
  nlohmann::json j;
  j["gaussians"] = geom.gaussians();
  j["points"] = geom.assign.size();
  auto& mu = j["mu"] = nlohmann::json::array();
  auto& sigma = j["sigma"] = nlohmann::json::array();
  std::vector<std::size_t> hist(geom.gaussians(), 0);
  for (auto a : geom.assign) ++hist[a];
  for (std::size_t m = 0; m < geom.gaussians(); ++m) {
    mu.push_back({geom.mu(static_cast<Eigen::Index>(m), 0), geom.mu(static_cast<Eigen::Index>(m), 1),
                  geom.mu(static_cast<Eigen::Index>(m), 2)});
    nlohmann::json s = nlohmann::json::array();
    for (int r = 0; r < 3; ++r) s.push_back({geom.sigma[m](r, 0), geom.sigma[m](r, 1), geom.sigma[m](r, 2)});
    sigma.push_back(std::move(s));
  }
  j["assignment_histogram"] = hist;
  return j.dump(2);
}

}  // namespace ng4d
