#include "ng4d/fusion.hpp"

#include <cmath>

#include "ng4d/ops.hpp"

namespace ng4d {

FusionWeights FusionWeights::create(Rng& rng) {
  FusionWeights w;
  w.wq = uniform_param({kFusionDim, kFusionDim}, kFusionDim, rng);
  w.wk = uniform_param({kFusionDim, kFusionDim}, kFusionDim, rng);
  w.wv = uniform_param({kFusionDim, kFusionDim}, kFusionDim, rng);
  w.cat = Linear::create(2 * kFusionDim, kFusionDim, rng);
  return w;
}

void FusionWeights::collect(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".wq", wq);
  out.emplace_back(prefix + ".wk", wk);
  out.emplace_back(prefix + ".wv", wv);
  cat.collect(prefix + ".cat", out);
}

Tensor fast_lg_fusion(const Tensor& f_l, const Tensor& f_g, const FusionWeights& w) {
  if (f_l.shape() != f_g.shape()) {
    throw DimensionError("fusion: F_L " + shape_str(f_l.shape()) + " vs F_G " + shape_str(f_g.shape()));
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(w.wk.dim(1)));
  return f_l + attention(matmul(f_l, w.wq), matmul(f_g, w.wk), matmul(f_g, w.wv), scale);
}

Tensor cat_fusion(const Tensor& f_l, const Tensor& f_g, const FusionWeights& w) {
  if (f_l.shape() != f_g.shape()) {
    throw DimensionError("fusion: F_L " + shape_str(f_l.shape()) + " vs F_G " + shape_str(f_g.shape()));
  }
  return w.cat(concat({f_l, f_g}, 1));
}

PredictionHead PredictionHead::create(Rng& rng) {
  return {Linear::create(kFusionDim + 6, kFusionDim, rng), Linear::create(kFusionDim, kFusionDim, rng),
          Linear::zeros(kFusionDim, 3)};
}

void PredictionHead::collect(const std::string& prefix, NamedParams& out) const {
  hidden1.collect(prefix + ".hidden1", out);
  hidden2.collect(prefix + ".hidden2", out);
  this->out.collect(prefix + ".out", out);
}

Tensor predict_residual_flow(const Tensor& fused, double t, const Tensor& flow, const Tensor& points,
                             const PredictionHead& head) {
  const std::size_t n = fused.dim(0);
  if (flow.shape() != Shape{n, 3} || points.shape() != Shape{n, 3}) {
    throw DimensionError("predict_residual_flow: inconsistent point counts");
  }
  const Tensor tenc = Tensor({1, 3}, {t, std::sin(t), std::cos(t)}) + Tensor({n, 1}, 0.0);
  const Tensor x = concat({fused, tenc, flow + points}, 1);
  return head.out(leaky_relu(head.hidden2(leaky_relu(head.hidden1(x), 0.01)), 0.01));
}

}  // namespace ng4d
