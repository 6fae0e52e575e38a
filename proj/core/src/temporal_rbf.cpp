#include "ng4d/temporal_rbf.hpp"

#include <cmath>

#include "ng4d/ops.hpp"

namespace ng4d {

std::vector<double> rbf_centers(std::size_t count) {
  if (count == 0) throw ParameterError("RBF needs at least one center");
  std::vector<double> c(count, 0.0);
  for (std::size_t i = 0; i < count; ++i) {
    c[i] = count == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(count - 1);
  }
  return c;
}

RbfTemporalInterpolant RbfTemporalInterpolant::create(std::size_t centers, std::size_t gaussians,
                                                      std::size_t feat_dim, Rng& rng) {
  RbfTemporalInterpolant r;
  r.centers = rbf_centers(centers);
  const double spacing = centers > 1 ? 1.0 / static_cast<double>(centers - 1) : 1.0;
  const double raw = std::log(std::expm1(spacing));  // softplus^-1
  r.raw_width = Tensor::parameter({centers}, std::vector<double>(centers, raw));
  r.dmu = zero_param({gaussians, centers, 3});
  r.drot = zero_param({gaussians, centers, 3});
  r.dfeat = zero_param({gaussians, centers, feat_dim});
  r.attn_hidden = Linear::create(feat_dim, feat_dim, rng);
  r.attn_out = Linear::create(feat_dim, centers, rng);
  return r;
}

Tensor RbfTemporalInterpolant::widths() const { return softplus(raw_width); }

void RbfTemporalInterpolant::collect(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".raw_width", raw_width);
  out.emplace_back(prefix + ".dmu", dmu);
  out.emplace_back(prefix + ".drot", drot);
  out.emplace_back(prefix + ".dfeat", dfeat);
  attn_hidden.collect(prefix + ".attn_hidden", out);
  attn_out.collect(prefix + ".attn_out", out);
}

Tensor rbf_activations(double t, const RbfTemporalInterpolant& interp) {
  if (!std::isfinite(t)) throw ParameterError("rbf_activations: non-finite time");
  const std::size_t f = interp.center_count();
  std::vector<double> d2(f);
  for (std::size_t i = 0; i < f; ++i) d2[i] = -0.5 * (t - interp.centers[i]) * (t - interp.centers[i]);
  const Tensor sigma = interp.widths();
  // softmax of the log-kernels equals the normalized kernels without underflow
  return softmax(Tensor({f}, std::move(d2)) / square(sigma), 0);
}

Tensor rbf_attention(const Tensor& feat, const RbfTemporalInterpolant& interp) {
  return softmax(interp.attn_out(leaky_relu(interp.attn_hidden(feat), 0.01)), 1);
}

Tensor effective_weights(double t, const Tensor& w_rbf, const RbfTemporalInterpolant& interp) {
  const Tensor w = w_rbf * rbf_activations(t, interp);
  return w / sum(w, 1, true);
}

Residuals interpolate_residuals(double t1, double t2, const Tensor& w_rbf, const RbfTemporalInterpolant& interp) {
  const std::size_t m = interp.gaussians(), f = interp.center_count();
  const Tensor dw = reshape(effective_weights(t2, w_rbf, interp) - effective_weights(t1, w_rbf, interp), {m, 1, f});
  auto blend = [&](const Tensor& table) { return reshape(bmm(dw, table), {m, table.dim(2)}); };
  Residuals r;
  r.dmu = blend(interp.dmu);
  r.drot = blend(interp.drot);
  r.dR = so3_exp(r.drot);
  r.dfeat = blend(interp.dfeat);
  return r;
}

Residuals interpolate_residuals(double t1, double t2, const RbfTemporalInterpolant& interp, const Tensor& feat_t1) {
  return interpolate_residuals(t1, t2, rbf_attention(feat_t1, interp), interp);
}

namespace {

struct ExpCoeffs {
  double a, b, c, d;  // sin/th, (1-cos)/th^2, a'/th, b'/th
  double cos_th;
};

ExpCoeffs exp_coeffs(double th) {
  ExpCoeffs k;
  const double t2 = th * th;
  k.cos_th = std::cos(th);
  if (th < 1e-6) {
    k.a = 1.0 - t2 / 6.0;
    k.b = 0.5 - t2 / 24.0;
  } else {
    k.a = std::sin(th) / th;
    const double h = std::sin(0.5 * th) / (0.5 * th);
    k.b = 0.5 * h * h;
  }
  if (th < 1e-2) {
    k.c = -1.0 / 3.0 + t2 / 30.0 - t2 * t2 / 840.0;
    k.d = -1.0 / 12.0 + t2 / 180.0 - t2 * t2 / 6720.0;
  } else {
    const double s = std::sin(th);
    k.c = (th * k.cos_th - s) / (t2 * th);
    k.d = (th * s - 2.0 * (1.0 - k.cos_th)) / (t2 * t2);
  }
  return k;
}

}  // namespace

Tensor so3_exp(const Tensor& v) {
  if (v.rank() != 2 || v.dim(1) != 3) throw DimensionError("so3_exp expects [M x 3], got " + shape_str(v.shape()));
  const std::size_t m = v.dim(0);
  const auto vv = v.values();
  std::vector<double> out(m * 9);
  for (std::size_t g = 0; g < m; ++g) {
    const double x = vv[g * 3], y = vv[g * 3 + 1], z = vv[g * 3 + 2];
    const auto k = exp_coeffs(std::sqrt(x * x + y * y + z * z));
    // R = cos I + a [v]x + b v v^T, with the symmetric and skew parts kept
    // separate so R(-v) = R(v)^T exactly.
    double* r = &out[g * 9];
    r[0] = k.cos_th + k.b * x * x;
    r[4] = k.cos_th + k.b * y * y;
    r[8] = k.cos_th + k.b * z * z;
    const double sxy = k.b * x * y, sxz = k.b * x * z, syz = k.b * y * z;
    r[1] = sxy - k.a * z;
    r[3] = sxy + k.a * z;
    r[2] = sxz + k.a * y;
    r[6] = sxz - k.a * y;
    r[5] = syz - k.a * x;
    r[7] = syz + k.a * x;
  }
  auto vi = v.impl();
  return make_op("so3_exp", {m, 3, 3}, std::move(out), {v}, [vi, m](const detail::TensorImpl& o) {
    auto gv = detail::grad_buffer(*vi);
    for (std::size_t g = 0; g < m; ++g) {
      const double* p = &vi->data[g * 3];
      const double* G = &o.grad[g * 9];
      const double th = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
      const auto k = exp_coeffs(th);
      // <G, [v]x> and <G, v v^T>
      const double gk = G[7] * p[0] - G[5] * p[0] + G[2] * p[1] - G[6] * p[1] + G[3] * p[2] - G[1] * p[2];
      double gvv = 0.0;
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) gvv += G[i * 3 + j] * p[i] * p[j];
      const double trace = G[0] + G[4] + G[8];
      // <G, [e_k]x> for k = x, y, z
      const double ge[3] = {G[7] - G[5], G[2] - G[6], G[3] - G[1]};
      for (int c = 0; c < 3; ++c) {
        // <G, e_k v^T + v e_k^T> = (G v)_k + (G^T v)_k
        double sym = 0.0;
        for (int j = 0; j < 3; ++j) sym += (G[c * 3 + j] + G[j * 3 + c]) * p[j];
        gv[g * 3 + static_cast<std::size_t>(c)] +=
            -k.a * p[c] * trace + k.a * ge[c] + k.c * p[c] * gk + k.b * sym + k.d * p[c] * gvv;
      }
    }
  });
}

Tensor update_covariance(const Tensor& sigma, const Tensor& dR) {
  return bmm(bmm(dR, sigma), transpose(dR));
}

}  // namespace ng4d
