#include <gtest/gtest.h>

#include <cmath>

#include "fd_oracle.hpp"
#include "fixtures.hpp"
#include "ng4d/fusion.hpp"
#include "ng4d/ops.hpp"

using namespace ng4d;
using namespace ng4d::testing;

namespace {

// Attention composed from primitive ops, the reference for the fused kernel.
Tensor composed_attention(const Tensor& q, const Tensor& k, const Tensor& v, double scale) {
  return matmul(softmax(matmul(q, transpose(k)) * scale, 1), v);
}

}  // namespace

TEST(FusedAttention, MatchesComposedOpsForwardAndBackward) {
  // 300 rows spans more than one tile.
  for (std::size_t n : {1u, 5u, 300u}) {
    auto q = random_param({n, 4}, n + 1, -2, 2);
    auto k = random_param({n + 3, 4}, n + 2, -2, 2);
    auto v = random_param({n + 3, 6}, n + 3);
    const auto c = random_const({n, 6}, n + 4);
    const auto fused = attention(q, k, v, 0.5);
    const auto ref = composed_attention(q, k, v, 0.5);
    for (std::size_t i = 0; i < fused.numel(); ++i) EXPECT_NEAR(fused.at(i), ref.at(i), 1e-12);
    std::vector<std::vector<double>> gf, gr;
    backward(sum(attention(q, k, v, 0.5) * c));
    for (auto* t : {&q, &k, &v}) {
      gf.emplace_back(t->grad().begin(), t->grad().end());
      t->clear_grad();
    }
    backward(sum(composed_attention(q, k, v, 0.5) * c));
    for (auto* t : {&q, &k, &v}) {
      gr.emplace_back(t->grad().begin(), t->grad().end());
      t->clear_grad();
    }
    for (std::size_t p = 0; p < 3; ++p)
      for (std::size_t i = 0; i < gf[p].size(); ++i) EXPECT_NEAR(gf[p][i], gr[p][i], 1e-11);
  }
}

TEST(FastLgFusion, ZeroValueProjectionIsIdentity) {
  Rng rng(1);
  auto w = FusionWeights::create(rng);
  for (auto& v : w.wv.mutable_values()) v = 0.0;
  const auto fl = random_const({7, 32}, 2), fg = random_const({7, 32}, 3);
  const auto out = fast_lg_fusion(fl, fg, w);
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_EQ(out.at(i), fl.at(i));
}

TEST(FastLgFusion, SingleRowAddsProjectedValue) {
  Rng rng(4);
  const auto w = FusionWeights::create(rng);
  const auto fl = random_const({1, 32}, 5), fg = random_const({1, 32}, 6);
  const auto out = fast_lg_fusion(fl, fg, w);
  const auto want = fl + matmul(fg, w.wv);
  for (std::size_t i = 0; i < 32; ++i) EXPECT_NEAR(out.at(i), want.at(i), 1e-14);
}

TEST(FastLgFusion, ShapeMismatch) {
  Rng rng(7);
  const auto w = FusionWeights::create(rng);
  EXPECT_THROW(fast_lg_fusion(Tensor({3, 32}), Tensor({4, 32}), w), DimensionError);
}

TEST(FastLgFusion, GradientMatchesFiniteDifferences) {
  Rng rng(8);
  const auto w = FusionWeights::create(rng);
  auto fl = random_param({6, 32}, 9), fg = random_param({6, 32}, 10);
  const auto c = random_const({6, 32}, 11);
  const auto rep = fd_check([&] { return sum(fast_lg_fusion(fl, fg, w) * c); }, {fl, fg, w.wq, w.wk, w.wv});
  EXPECT_GT(rep.checked, 3000u);
  EXPECT_LT(rep.max_rel, 1e-4);
}

TEST(CatFusion, ShapeAndGradient) {
  Rng rng(12);
  const auto w = FusionWeights::create(rng);
  auto fl = random_param({4, 32}, 13), fg = random_param({4, 32}, 14);
  EXPECT_EQ(cat_fusion(fl, fg, w).shape(), (Shape{4, 32}));
  const auto c = random_const({4, 32}, 15);
  const auto rep = fd_check([&] { return sum(cat_fusion(fl, fg, w) * c); }, {fl, fg, w.cat.weight});
  EXPECT_LT(rep.max_rel, 1e-6);
}

TEST(PredictionHead, ZeroInitGivesZeroResidual) {
  Rng rng(16);
  const auto head = PredictionHead::create(rng);
  const auto r = predict_residual_flow(random_const({9, 32}, 17), 0.3, random_const({9, 3}, 18),
                                       random_const({9, 3}, 19), head);
  EXPECT_EQ(r.shape(), (Shape{9, 3}));
  for (double v : r.values()) EXPECT_EQ(v, 0.0);
}

TEST(PredictionHead, GradientMatchesFiniteDifferences) {
  Rng rng(20);
  auto head = PredictionHead::create(rng);
  for (auto& v : head.out.weight.mutable_values()) v = 0.05;
  auto fused = random_param({3, 32}, 21), flow = random_param({3, 3}, 22), pts = random_param({3, 3}, 23);
  const auto c = random_const({3, 3}, 24);
  NamedParams np;
  head.collect("head", np);
  std::vector<Tensor> ps{fused, flow, pts};
  for (auto& [n, t] : np) ps.push_back(t);
  const auto rep = fd_check([&] { return sum(predict_residual_flow(fused, 0.7, flow, pts, head) * c); }, ps, 1e-5, 1e-6);
  EXPECT_GT(rep.checked, 1000u);
  EXPECT_LT(rep.max_rel, 1e-4);
}
