#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <numbers>

#include "fd_oracle.hpp"
#include "fixtures.hpp"
#include "ng4d/ops.hpp"
#include "ng4d/temporal_rbf.hpp"

using namespace ng4d;
using namespace ng4d::testing;

namespace {

RbfTemporalInterpolant make(std::size_t m = 3, std::uint64_t seed = 1) {
  Rng rng(seed);
  return RbfTemporalInterpolant::create(4, m, 32, rng);
}

void set_width(RbfTemporalInterpolant& r, double sigma) {
  for (auto& v : r.raw_width.mutable_values()) v = std::log(std::expm1(sigma));
}

void randomize(Tensor& t, std::uint64_t seed, double scale) {
  const auto v = random_values(t.numel(), seed, -scale, scale);
  std::copy(v.begin(), v.end(), t.mutable_values().begin());
}

Eigen::Matrix3d block(const Tensor& r, std::size_t g) {
  Eigen::Matrix3d m;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m(i, j) = r.at(g, static_cast<std::size_t>(i), static_cast<std::size_t>(j));
  return m;
}

}  // namespace

TEST(RbfCenters, EvenlySpacedAndInitialWidth) {
  const auto r = make();
  EXPECT_EQ(r.centers, (std::vector<double>{0.0, 1.0 / 3, 2.0 / 3, 1.0}));
  const auto widths = r.widths();
  for (double w : widths.values()) EXPECT_NEAR(w, 1.0 / 3, 1e-15);
}

TEST(RbfActivations, NarrowWidthIsNearlyOneHot) {
  auto r = make();
  set_width(r, 0.01);
  EXPECT_GT(rbf_activations(r.centers[2], r).at(2), 0.999);
}

TEST(RbfActivations, NormalizedForAnyTime) {
  const auto r = make();
  for (double t : {-3.0, 0.0, 0.123, 0.5, 1.0, 7.5}) {
    const auto z = rbf_activations(t, r);
    double s = 0.0;
    for (double v : z.values()) {
      EXPECT_GE(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
  EXPECT_THROW(rbf_activations(NAN, r), ParameterError);
}

TEST(RbfActivations, EquidistantTimeSymmetric) {
  const auto z = rbf_activations(0.5, make());
  EXPECT_NEAR(z.at(1), z.at(2), 1e-12);
}

TEST(RbfAttention, ZeroMlpIsUniformAndReducesToZeta) {
  auto r = make();
  for (auto* t : {&r.attn_hidden.weight, &r.attn_hidden.bias, &r.attn_out.weight, &r.attn_out.bias}) {
    for (auto& v : t->mutable_values()) v = 0.0;
  }
  const auto w = rbf_attention(random_const({3, 32}, 2), r);
  for (double v : w.values()) EXPECT_NEAR(v, 0.25, 1e-15);
  const auto eff = effective_weights(0.3, w, r);
  const auto z = rbf_activations(0.3, r);
  for (std::size_t g = 0; g < 3; ++g)
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(eff.at(g, i), z.at(i), 1e-15);
}

TEST(RbfAttention, RowsSumToOne) {
  const auto w = rbf_attention(random_const({5, 32}, 3, -4, 4), make(5));
  const auto s = sum(w, 1);
  for (double v : s.values()) EXPECT_NEAR(v, 1.0, 1e-9);
}

TEST(RbfAttention, GradientThroughAttentionPath) {
  auto r = make(3, 4);
  randomize(r.dmu, 5, 0.5);
  randomize(r.drot, 6, 0.5);
  randomize(r.dfeat, 7, 0.5);
  auto feat = random_param({3, 32}, 8);
  const auto c1 = random_const({3, 3}, 9), c2 = random_const({3, 32}, 10), c3 = random_const({3, 3, 3}, 11);
  NamedParams np;
  r.collect("rbf", np);
  std::vector<Tensor> ps{feat};
  for (auto& [n, t] : np) ps.push_back(t);
  const auto rep = fd_check(
      [&] {
        const auto res = interpolate_residuals(0.1, 0.8, r, feat);
        return sum(res.dmu * c1) + sum(res.dfeat * c2) + sum(res.dR * c3);
      },
      ps);
  EXPECT_GT(rep.checked, 500u);
  EXPECT_LT(rep.max_rel, 1e-4);
}

TEST(InterpolateResiduals, EqualTimesAreIdentity) {
  auto r = make(4, 12);
  randomize(r.dmu, 13, 1.0);
  randomize(r.drot, 14, 1.0);
  randomize(r.dfeat, 15, 1.0);
  const auto res = interpolate_residuals(0.42, 0.42, r, random_const({4, 32}, 16));
  for (double v : res.dmu.values()) EXPECT_EQ(v, 0.0);
  for (double v : res.dfeat.values()) EXPECT_EQ(v, 0.0);
  for (std::size_t g = 0; g < 4; ++g) EXPECT_EQ(block(res.dR, g), Eigen::Matrix3d::Identity());
}

TEST(InterpolateResiduals, SingleActiveCenter) {
  auto r = make(2, 17);
  set_width(r, 0.01);
  randomize(r.dmu, 18, 1.0);
  const auto feat = random_const({2, 32}, 19);
  // t1 sits between centers where no center is active relative to t2 = c_3.
  const auto res = interpolate_residuals(r.centers[0], r.centers[3], r, feat);
  for (std::size_t g = 0; g < 2; ++g) {
    for (std::size_t a = 0; a < 3; ++a) {
      const double want = r.dmu.at(g, 3, a) - r.dmu.at(g, 0, a);
      EXPECT_NEAR(res.dmu.at(g, a), want, 1e-3);
    }
  }
}

TEST(InterpolateResiduals, AntisymmetricInTime) {
  auto r = make(3, 20);
  randomize(r.dmu, 21, 1.0);
  randomize(r.drot, 22, 1.5);
  randomize(r.dfeat, 23, 1.0);
  const auto feat = random_const({3, 32}, 24);
  const auto f = interpolate_residuals(0.15, 0.9, r, feat);
  const auto b = interpolate_residuals(0.9, 0.15, r, feat);
  for (std::size_t i = 0; i < f.dmu.numel(); ++i) EXPECT_EQ(f.dmu.at(i), -b.dmu.at(i));
  for (std::size_t i = 0; i < f.dfeat.numel(); ++i) EXPECT_EQ(f.dfeat.at(i), -b.dfeat.at(i));
  for (std::size_t g = 0; g < 3; ++g) {
    EXPECT_LT((block(f.dR, g) * block(b.dR, g) - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(So3Exp, RotationProperties) {
  for (double scale : {1e-9, 1e-4, 0.3, 2.0, 3.1}) {
    const auto v = random_const({6, 3}, static_cast<std::uint64_t>(scale * 1000) + 1, -scale, scale);
    const auto r = so3_exp(v);
    for (std::size_t g = 0; g < 6; ++g) {
      const auto m = block(r, g);
      EXPECT_LT((m.transpose() * m - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff(), 1e-9);
      EXPECT_NEAR(m.determinant(), 1.0, 1e-9);
    }
  }
}

TEST(So3Exp, QuarterTurnAboutZ) {
  const auto r = so3_exp(Tensor({1, 3}, {0, 0, std::numbers::pi / 2}));
  Eigen::Matrix3d want;
  want << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  EXPECT_LT((block(r, 0) - want).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(So3Exp, GradientAllBranches) {
  // Angles straddling both series thresholds and the general branch.
  for (double scale : {3e-7, 4e-3, 0.05, 1.2}) {
    auto v = random_param({5, 3}, static_cast<std::uint64_t>(scale * 1e7) + 3, -scale, scale);
    const auto c = random_const({5, 3, 3}, 30);
    const auto rep = fd_check([&] { return sum(so3_exp(v) * c); }, {v}, scale < 1e-3 ? 1e-8 : 1e-5);
    EXPECT_EQ(rep.checked, 15u);
    EXPECT_LT(rep.max_rel, 1e-4) << "scale " << scale;
  }
}

TEST(UpdateCovariance, IdentityRotationLeavesSigma) {
  const Tensor sigma({1, 3, 3}, {2, 0.1, 0, 0.1, 1, 0.2, 0, 0.2, 3});
  const auto out = update_covariance(sigma, so3_exp(Tensor({1, 3}, 0.0)));
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(out.at(i), sigma.at(i));
}

TEST(UpdateCovariance, SpectrumTraceDeterminantPreserved) {
  Rng rng(31);
  std::vector<double> sv;
  for (int g = 0; g < 8; ++g) {
    Eigen::Matrix3d a = Eigen::Matrix3d::Random();
    const Eigen::Matrix3d s = a * a.transpose() + 1e-3 * Eigen::Matrix3d::Identity();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) sv.push_back(s(i, j));
  }
  const Tensor sigma({8, 3, 3}, sv);
  const auto out = update_covariance(sigma, so3_exp(random_const({8, 3}, 32, -2, 2)));
  for (std::size_t g = 0; g < 8; ++g) {
    const auto s0 = block(sigma, g), s1 = block(out, g);
    EXPECT_LT((s1 - s1.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    const Eigen::Vector3d e0 = Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(s0).eigenvalues();
    const Eigen::Vector3d e1 = Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(s1).eigenvalues();
    EXPECT_LT((e0 - e1).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_GT(e1.minCoeff(), 0.0);
    EXPECT_NEAR(s0.trace(), s1.trace(), 1e-9);
    EXPECT_NEAR(s0.determinant(), s1.determinant(), 1e-9);
  }
}

TEST(UpdateCovariance, QuarterTurnSwapsAxes) {
  const Tensor sigma({1, 3, 3}, {1, 0, 0, 0, 2, 0, 0, 0, 3});
  const auto out = update_covariance(sigma, so3_exp(Tensor({1, 3}, {0, 0, std::numbers::pi / 2})));
  Eigen::Matrix3d want = Eigen::Vector3d(2, 1, 3).asDiagonal();
  EXPECT_LT((block(out, 0) - want).cwiseAbs().maxCoeff(), 1e-12);
}
