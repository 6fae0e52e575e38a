#include "ng4d/model.hpp"

#include <algorithm>
#include <cmath>

#include "ng4d/kdtree.hpp"
#include "ng4d/ops.hpp"

namespace ng4d {

ModelParams ModelParams::create(std::size_t frames, std::size_t gaussians, Rng& rng) {
  ModelParams p{NeuralFieldParams::create(rng),
                GaussianFeatureWeights::create(rng),
                RbfTemporalInterpolant::create(frames, gaussians, kGaussianFeatureDim, rng),
                TgGcnWeights::create(rng),
                DeformationHeads::create(rng),
                Linear::create(3 + kLatentDim, kGaussianFeatureDim, rng),
                FusionWeights::create(rng),
                PredictionHead::create(rng)};
  return p;
}

NamedParams ModelParams::named() const {
  NamedParams out;
  field.collect("field", out);
  gauss.collect("gauss", out);
  rbf.collect("rbf", out);
  gcn.collect("gcn", out);
  heads.collect("heads", out);
  pool_proj.collect("pool_proj", out);
  fusion.collect("fusion", out);
  head.collect("head", out);
  return out;
}

NamedParams ModelParams::active(const Components& c) const {
  NamedParams out;
  if (c.neural_field) field.collect("field", out);
  if (c.gauss_pc) gauss.collect("gauss", out);
  if (c.t_rbf_gr) rbf.collect("rbf", out);
  if (c.deformation) {
    gcn.collect("gcn", out);
    heads.collect("heads", out);
    pool_proj.collect("pool_proj", out);
  }
  if (c.fusion == FusionMode::Attention) {
    out.emplace_back("fusion.wq", fusion.wq);
    out.emplace_back("fusion.wk", fusion.wk);
    out.emplace_back("fusion.wv", fusion.wv);
  } else if (c.fusion == FusionMode::Cat) {
    fusion.cat.collect("fusion.cat", out);
  }
  head.collect("head", out);
  return out;
}

Normalization Normalization::fit(const Sequence& seq) {
  Eigen::RowVector3d lo = Eigen::RowVector3d::Constant(std::numeric_limits<double>::infinity());
  Eigen::RowVector3d hi = -lo;
  for (const auto& f : seq.frames) {
    lo = lo.cwiseMin(f.points.colwise().minCoeff());
    hi = hi.cwiseMax(f.points.colwise().maxCoeff());
  }
  Normalization n;
  n.center = 0.5 * (lo + hi);
  const double side = (hi - lo).maxCoeff();
  n.scale = side > 0.0 ? side : 1.0;
  return n;
}

PointMatrix Normalization::to_unit(const PointMatrix& p) const {
  return ((p.rowwise() - center) / scale).eval();
}

PointMatrix Normalization::from_unit(const PointMatrix& p) const {
  return ((p * scale).rowwise() + center).eval();
}

namespace {

// Normalized times come from affine maps of the inputs; distances that agree
// to this many units are ties, so exact-arithmetic ties resolve to the lower
// index regardless of rounding.
constexpr double kTimeTie = 1e-12;

bool closer(double t, double candidate, double incumbent) {
  return std::abs(candidate - t) < std::abs(incumbent - t) - kTimeTie;
}

}  // namespace

std::size_t Model::nearest_frame(double t) const {
  std::size_t best = 0;
  for (std::size_t i = 1; i < frames.size(); ++i) {
    if (closer(t, frames[i].time, frames[best].time)) best = i;
  }
  return best;
}

std::size_t Model::anchor_for(std::size_t target) const {
  std::size_t best = target == 0 ? 1 : 0;
  const double t = frames[target].time;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (i == target) continue;
    if (closer(t, frames[i].time, frames[best].time)) best = i;
  }
  return best;
}

double Model::to_raw_time(double t) const {
  const double t0 = frames.front().raw_time, t1 = frames.back().raw_time;
  return t0 + t * (t1 - t0);
}

Model assemble_model(const RunConfig& cfg, const Normalization& norm, std::vector<PointCloud> unit_frames,
                     std::vector<double> raw_times) {
  cfg.validate();
  if (unit_frames.size() < 2) throw DataError("a model needs at least 2 frames");
  Model m;
  m.config = cfg;
  m.norm = norm;
  GeometryOptions geo;
  geo.M = cfg.gaussians;
  geo.kappa = cfg.kappa;
  geo.seed = cfg.seed;
  for (std::size_t i = 0; i < unit_frames.size(); ++i) {
    auto& src = unit_frames[i];
    if (src.size() < cfg.gaussians) {
      throw DataError("frame " + std::to_string(i) + " has " + std::to_string(src.size()) +
                      " points, fewer than the " + std::to_string(cfg.gaussians) + " Gaussians");
    }
    FrameState f;
    f.time = src.timestamp;
    f.raw_time = raw_times.at(i);
    f.points = std::move(src.points);
    f.points_t = to_tensor(f.points);
    f.geometry = i == 0 ? cluster_geometry(f.points, geo)
                        : cluster_geometry_from(f.points, m.frames.back().geometry.mu, geo);
    const auto& g = f.geometry;
    f.soft = to_tensor(g.soft);
    f.mu = to_tensor(g.mu);
    std::vector<double> sv;
    sv.reserve(g.gaussians() * 9);
    for (const auto& s : g.sigma)
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) sv.push_back(s(r, c));
    f.sigma = Tensor({g.gaussians(), 3, 3}, std::move(sv));
    f.adjacency = to_tensor(normalized_adjacency(g.mu));
    if (cfg.smoothness) f.smooth_neighbors = knn_self(f.points, cfg.smooth_k);
    m.frames.push_back(std::move(f));
  }
  Rng rng(cfg.seed);
  m.params = ModelParams::create(m.frames.size(), cfg.gaussians, rng);
  return m;
}

Model build_model(const Sequence& seq, const RunConfig& cfg) {
  cfg.validate();
  validate_sequence(seq);
  Sequence prepared;
  std::vector<double> raw_times;
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    PointCloud f = seq.frames[i];
    if (cfg.outlier_removal) f = remove_outliers(f, cfg.outlier_k, cfg.outlier_std);
    if (f.size() < cfg.gaussians) {
      throw DataError("frame " + std::to_string(i) + " has " + std::to_string(f.size()) +
                      " points, fewer than the " + std::to_string(cfg.gaussians) + " Gaussians");
    }
    raw_times.push_back(f.timestamp);
    prepared.frames.push_back(sample_points(f, cfg.points_per_frame, cfg.seed + i));
  }
  prepared = normalize_timestamps(prepared);
  const auto norm = Normalization::fit(prepared);
  std::vector<PointCloud> unit;
  for (const auto& f : prepared.frames) unit.push_back({norm.to_unit(f.points), f.timestamp});
  return assemble_model(cfg, norm, std::move(unit), std::move(raw_times));
}

namespace {

constexpr double kSlope = 0.01;

// Per-time feature terms for one anchor.
struct TimeTerms {
  Tensor f_l;     // N x 32
  Tensor f_g;     // N x 32
  Tensor motion;  // M x 3, undefined without the deformation field
};

// Anchor-side values shared by every query.
struct AnchorContext {
  const FrameState* frame = nullptr;
  Tensor feat;   // M x 32, undefined without the Gaussian representation
  Tensor w_rbf;  // M x F, undefined without RBF residuals
};

TimeTerms time_terms(const Model& model, const AnchorContext& a, double t, const Tensor& mu_t,
                     const Tensor& sigma_t, const Tensor& feat_t) {
  const auto& c = model.config.components;
  const auto& p = model.params;
  const auto& f = *a.frame;
  const std::size_t n = f.points.rows();
  TimeTerms out;
  out.f_l = c.neural_field ? field_forward(posenc(f.points_t, t), p.field) : Tensor({n, kLatentDim}, 0.0);
  if (!c.gauss_pc) {
    out.f_g = Tensor({n, kGaussianFeatureDim}, 0.0);
    return out;
  }
  Tensor gauss_feat = feat_t;
  Tensor pooled;
  if (c.deformation) {
    const Tensor nf = tg_gcn_forward(node_inputs(mu_t, sigma_t, feat_t, t), f.adjacency, p.gcn);
    out.motion = motion_head(nf, p.heads);
    gauss_feat = feature_head(nf, p.heads);
    const Tensor per_point = leaky_relu(p.pool_proj(concat({f.points_t, out.f_l}, 1)), kSlope);
    pooled = unpool(gaussian_pool(per_point, f.geometry.assign, f.geometry.gaussians()), f.geometry.assign);
  }
  out.f_g = matmul(f.soft, gauss_feat);
  if (pooled.defined()) out.f_g = out.f_g + pooled;
  return out;
}

Tensor fuse(const Model& model, const TimeTerms& terms) {
  switch (model.config.components.fusion) {
    case FusionMode::Attention:
      return fast_lg_fusion(terms.f_l, terms.f_g, model.params.fusion);
    case FusionMode::Cat:
      return cat_fusion(terms.f_l, terms.f_g, model.params.fusion);
    case FusionMode::Off:
      break;
  }
  return terms.f_l + terms.f_g;
}

}  // namespace

std::vector<Prediction> predict(const Model& model, std::size_t anchor, std::span<const double> times,
                                const Mode& mode) {
  if (anchor >= model.frames.size()) throw ParameterError("predict: anchor frame out of range");
  for (double t : times) {
    if (!std::isfinite(t)) throw ParameterError("predict: query time must be finite");
  }
  const auto& c = model.config.components;
  const auto& p = model.params;
  const FrameState& f = model.frames[anchor];
  const std::size_t n = f.points.rows();
  AnchorContext ctx{&f, {}, {}};
  if (c.gauss_pc) ctx.feat = gaussian_features(f.points_t, f.geometry, p.gauss, mode);
  if (c.t_rbf_gr) ctx.w_rbf = rbf_attention(ctx.feat, p.rbf);

  const Tensor zero_flow({n, 3}, 0.0);
  Tensor motion_anchor;
  if (c.deformation) {
    motion_anchor =
        motion_head(tg_gcn_forward(node_inputs(f.mu, f.sigma, ctx.feat, f.time), f.adjacency, p.gcn), p.heads);
  }

  std::vector<Prediction> out;
  out.reserve(times.size());
  for (double t : times) {
    Tensor mu_t = f.mu, sigma_t = f.sigma, feat_t = ctx.feat, gauss_flow;
    if (c.t_rbf_gr) {
      const auto res = interpolate_residuals(f.time, t, ctx.w_rbf, p.rbf);
      mu_t = f.mu + res.dmu;
      sigma_t = update_covariance(f.sigma, res.dR);
      feat_t = ctx.feat + res.dfeat;
      gauss_flow = res.dmu;
    }
    const TimeTerms terms = time_terms(model, ctx, t, mu_t, sigma_t, feat_t);
    if (terms.motion.defined()) {
      const Tensor motion = terms.motion - motion_anchor;
      gauss_flow = gauss_flow.defined() ? gauss_flow + motion : motion;
    }
    Prediction pr;
    pr.point_flow = gauss_flow.defined() ? matmul(f.soft, gauss_flow) : zero_flow;
    const Tensor h = predict_residual_flow(fuse(model, terms), t, pr.point_flow, f.points_t, p.head);
    pr.residual = h * (t - f.time);
    pr.displacement = pr.point_flow + pr.residual;
    pr.points = f.points_t + pr.displacement;
    out.push_back(std::move(pr));
  }
  return out;
}

}  // namespace ng4d
