#include "ng4d/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "ng4d/kdtree.hpp"
#include "ng4d/losses.hpp"
#include "ng4d/ops.hpp"
#include "ng4d/pipeline.hpp"

namespace ng4d {

double GradcheckReport::max_rel() const {
  double m = 0.0;
  for (const auto& c : cases) m = std::max(m, c.max_rel);
  return m;
}

double GradcheckReport::max_rel_wide() const {
  double m = 0.0;
  for (const auto& c : cases) m = std::max(m, c.max_rel_wide);
  return m;
}

double GradcheckReport::max_rel_tensor() const {
  double m = 0.0;
  for (const auto& c : cases) m = std::max(m, c.max_rel_tensor);
  return m;
}

std::size_t GradcheckReport::checked() const {
  std::size_t n = 0;
  for (const auto& c : cases) n += c.checked;
  return n;
}

std::size_t GradcheckReport::kinks() const {
  std::size_t n = 0;
  for (const auto& c : cases) n += c.kinks;
  return n;
}

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

std::vector<std::size_t> entries_to_check(std::size_t numel, Rng& rng, const GradcheckOptions& opts) {
  std::vector<std::size_t> idx(numel);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (numel <= opts.full_limit || numel <= opts.samples) return idx;
  // Partial Fisher-Yates: the first `samples` slots become a uniform subset.
  for (std::size_t i = 0; i < opts.samples; ++i) {
    std::swap(idx[i], idx[i + rng.below(numel - i)]);
  }
  idx.resize(opts.samples);
  std::sort(idx.begin(), idx.end());
  return idx;
}

// <x, C> for a fixed random C, so every output entry carries gradient.
Tensor probe(const Tensor& x, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> c(x.numel());
  for (auto& v : c) v = rng.uniform(-1.0, 1.0);
  return sum(x * Tensor(x.shape(), std::move(c)));
}

Tensor random_tensor(Shape shape, Rng& rng, double lo, double hi, bool param) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return param ? Tensor::parameter(std::move(shape), std::move(v)) : Tensor(std::move(shape), std::move(v));
}

// Four frames of a 16-point cloud under a bending, rotating motion.
Sequence toy_sequence(Rng& rng) {
  PointMatrix base(16, 3);
  for (Eigen::Index i = 0; i < base.rows(); ++i) {
    for (int a = 0; a < 3; ++a) base(i, a) = rng.uniform(-0.5, 0.5) + (i < 8 ? -0.4 : 0.4) * (a == 0);
  }
  Sequence seq;
  for (int k = 0; k < 4; ++k) {
    const double t = k / 3.0, ang = 0.3 * t;
    PointMatrix p = base;
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      const double x = base(i, 0), y = base(i, 1);
      p(i, 0) = std::cos(ang) * x - std::sin(ang) * y + 0.2 * t;
      p(i, 1) = std::sin(ang) * x + std::cos(ang) * y + 0.1 * t * t * x;
    }
    seq.frames.push_back({p, static_cast<double>(k)});
  }
  return seq;
}

NamedParams prefixed(const NamedParams& all, std::initializer_list<std::string_view> prefixes) {
  NamedParams out;
  for (const auto& [name, t] : all) {
    for (auto p : prefixes) {
      if (name.starts_with(p)) {
        out.emplace_back(name, t);
        break;
      }
    }
  }
  return out;
}

}  // namespace

GradcheckCase check_gradients(const std::string& name, const std::function<Tensor()>& f, const NamedParams& params,
                              Rng& rng, const GradcheckOptions& opts) {
  GradcheckCase out;
  out.name = name;
  for (const auto& [n, p] : params) Tensor(p).clear_grad();
  backward(f());
  std::vector<std::vector<double>> analytic;
  for (const auto& [n, p] : params) {
    analytic.push_back(p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end())
                                    : std::vector<double>(p.numel(), 0.0));
    Tensor(p).clear_grad();
  }
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi].second;
    auto vals = p.mutable_values();
    double diff2 = 0.0, a2 = 0.0, n2sum = 0.0;
    for (auto i : entries_to_check(vals.size(), rng, opts)) {
      const double orig = vals[i];
      vals[i] = orig + opts.h;
      const double fp = f().item();
      vals[i] = orig - opts.h;
      const double fm = f().item();
      vals[i] = orig;
      const double num = (fp - fm) / (2.0 * opts.h);
      const double a = analytic[pi][i];
      const double scale = std::max(std::abs(a), std::abs(num));
      if (scale <= opts.floor) continue;
      const double rel = std::abs(a - num) / scale;
      if (rel >= opts.tol) {
        // A ReLU boundary, max-pool tie or matching switch within +-h makes
        // the central difference average two one-sided slopes. The analytic
        // gradient is then the slope of the side the point lies on.
        const double f0 = f().item();
        const double right = (fp - f0) / opts.h, left = (f0 - fm) / opts.h;
        const auto one_sided = [&](double s) { return std::abs(a - s) / std::max(std::abs(a), std::abs(s)); };
        // The jump must also clear the quantization of f by a wide margin so
        // that round-off jitter is never mistaken for a kink.
        const double jitter = 1e3 * kEps * std::max({std::abs(f0), std::abs(fp), std::abs(fm)}) / opts.h;
        if (std::abs(right - left) > std::max(opts.tol * scale, jitter) &&
            std::min(one_sided(right), one_sided(left)) < opts.tol) {
          ++out.kinks;
          continue;
        }
      }
      ++out.checked;
      diff2 += (a - num) * (a - num);
      a2 += a * a;
      n2sum += num * num;
      const double res = kEps * std::max(std::abs(fp), std::abs(fm)) / opts.h;
      double wide = rel;
      if (rel >= opts.tol) {
        ++out.failed;
        for (double step : {10.0 * opts.h, 100.0 * opts.h}) {
          vals[i] = orig + step;
          const double gp = f().item();
          vals[i] = orig - step;
          const double gm = f().item();
          vals[i] = orig;
          const double n2 = (gp - gm) / (2.0 * step);
          wide = std::min(wide, std::abs(a - n2) / std::max(std::abs(a), std::abs(n2)));
        }
      }
      out.max_rel_wide = std::max(out.max_rel_wide, wide);
      if (rel > out.max_rel) {
        out.max_rel = rel;
        out.worst_param = params[pi].first;
        out.worst_index = i;
        out.worst_analytic = a;
        out.worst_numeric = num;
        out.worst_resolution = res;
      }
    }
    const double norm = std::sqrt(std::max(a2, n2sum));
    if (norm > opts.floor) out.max_rel_tensor = std::max(out.max_rel_tensor, std::sqrt(diff2) / norm);
  }
  return out;
}

GradcheckReport run_gradcheck(std::uint64_t seed, const GradcheckOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(seed);
  RunConfig cfg;
  cfg.points_per_frame = 16;
  cfg.gaussians = 2;
  cfg.smoothness = true;
  cfg.seed = seed;
  Model model = build_model(toy_sequence(rng), cfg);
  const NamedParams all = model.params.named();
  // Zero-initialized tensors would mask every gradient upstream of them;
  // they get the standard fan-in init instead.
  for (const auto& [name, t] : all) {
    auto vals = Tensor(t).mutable_values();
    if (std::any_of(vals.begin(), vals.end(), [](double v) { return v != 0.0; })) continue;
    const double bound = std::sqrt(1.0 / static_cast<double>(t.rank() == 2 ? t.dim(0) : t.numel()));
    for (auto& v : vals) v = rng.uniform(-bound, bound);
  }

  const FrameState& fr = model.frames[1];
  const Tensor& pts = fr.points_t;
  const std::size_t n = fr.points.rows(), m = fr.geometry.gaussians();
  const auto& P = model.params;
  GradcheckReport rep;
  auto run = [&](const std::string& name, const std::function<Tensor()>& f, const NamedParams& params) {
    rep.cases.push_back(check_gradients(name, f, params, rng, opts));
  };

  run("neural_field", [&] { return probe(field_forward(posenc(pts, 0.4), P.field), 1); },
      prefixed(all, {"field."}));

  run("gaussian_features", [&] { return probe(gaussian_features(pts, fr.geometry, P.gauss), 2); },
      prefixed(all, {"gauss."}));

  const Tensor feat = random_tensor({m, kGaussianFeatureDim}, rng, -1.0, 1.0, true);
  {
    NamedParams ps = prefixed(all, {"rbf."});
    ps.emplace_back("feat", feat);
    run("temporal_rbf",
        [&] {
          const auto r = interpolate_residuals(0.2, 0.7, rbf_attention(feat, P.rbf), P.rbf);
          return probe(r.dmu, 3) + probe(update_covariance(fr.sigma, r.dR), 4) + probe(r.dfeat, 5);
        },
        ps);
  }

  {
    // One generic rotation vector and one on the small-angle series branch.
    const Tensor v = Tensor::parameter({2, 3}, {0.5, -0.7, 0.3, 1e-3, -2e-3, 5e-4});
    run("so3_exp", [&] { return probe(so3_exp(v), 6); }, {{"v", v}});
  }

  {
    const Tensor f_l = random_tensor({n, kLatentDim}, rng, -1.0, 1.0, false);
    NamedParams ps = prefixed(all, {"gcn.", "heads.", "pool_proj."});
    ps.emplace_back("feat", feat);
    run("deformation",
        [&] {
          const Tensor nf = tg_gcn_forward(node_inputs(fr.mu, fr.sigma, feat, 0.6), fr.adjacency, P.gcn);
          const auto b = broadcast_to_points(motion_head(nf, P.heads), feature_head(nf, P.heads), fr.soft);
          const Tensor per_point = leaky_relu(P.pool_proj(concat({pts, f_l}, 1)), 0.01);
          const Tensor pooled = unpool(gaussian_pool(per_point, fr.geometry.assign, m), fr.geometry.assign);
          return probe(b.point_flow, 7) + probe(b.point_feat, 8) + probe(pooled, 9);
        },
        ps);
  }

  {
    const Tensor f_l = random_tensor({n, kFusionDim}, rng, -1.0, 1.0, true);
    const Tensor f_g = random_tensor({n, kFusionDim}, rng, -1.0, 1.0, true);
    const Tensor flow = random_tensor({n, 3}, rng, -0.1, 0.1, true);
    NamedParams ps = prefixed(all, {"fusion.", "head."});
    ps.emplace_back("f_l", f_l);
    ps.emplace_back("f_g", f_g);
    ps.emplace_back("flow", flow);
    run("fusion_predict",
        [&] {
          const Tensor h = predict_residual_flow(fast_lg_fusion(f_l, f_g, P.fusion), 0.6, flow, pts, P.head);
          return probe(h, 10) + probe(cat_fusion(f_l, f_g, P.fusion), 11);
        },
        ps);
  }

  {
    const Tensor a = random_tensor({n, 3}, rng, -0.5, 0.5, true);
    const Tensor& b = model.frames[2].points_t;
    const auto nbrs = knn_self(fr.points, cfg.smooth_k);
    run("losses",
        [&] {
          return chamfer_loss(a, b) + emd_loss(a, b, EmdMode::Exact) * 50.0 +
                 smoothness_loss(a - pts, nbrs, cfg.smooth_k);
        },
        {{"a", a}});
  }

  run("pipeline", [&] { return sequence_loss(model, Mode{}); }, all);

  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // namespace ng4d
