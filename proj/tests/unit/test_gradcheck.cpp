#include <gtest/gtest.h>

#include <cmath>

#include "fd_oracle.hpp"
#include "fixtures.hpp"
#include "ng4d/gradcheck.hpp"
#include "ng4d/ops.hpp"

namespace ng4d {
namespace {

// ---- [DERIVED] the library checker against the independent test oracle ----

TEST(Gradcheck, AgreesWithOracleOnSmoothFunction) {
  const Tensor a = testing::random_param({4, 5}, 1);
  const Tensor b = testing::random_param({5, 3}, 2);
  auto f = [&] { return sum(ng4d::exp(matmul(a, b) * 0.3)); };
  Rng rng(0);
  const auto c = check_gradients("m", f, {{"a", a}, {"b", b}}, rng);
  const auto o = testing::fd_check(f, {a, b});
  EXPECT_EQ(c.checked, o.checked);
  EXPECT_LT(c.max_rel, 1e-6);
  EXPECT_LT(o.max_rel, 1e-6);
  EXPECT_EQ(c.kinks, 0u);
}

TEST(Gradcheck, DetectsWrongGradient) {
  const Tensor x = testing::random_param({6}, 3);
  // Forward x^2, backward deliberately 3x.
  auto f = [&] {
    std::vector<double> v(x.values().begin(), x.values().end());
    double s = 0.0;
    for (double e : v) s += e * e;
    return sum(make_op("bad_square", {1}, {s}, {x}, [x](const detail::TensorImpl& out) {
      auto g = detail::grad_buffer(*x.impl());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[0] * 6.0 * x.values()[i];
    }));
  };
  Rng rng(0);
  const auto c = check_gradients("bad", f, {{"x", x}}, rng);
  EXPECT_NEAR(c.max_rel, 2.0 / 3.0, 1e-6);
  EXPECT_GT(c.max_rel_wide, 0.5);
  EXPECT_EQ(c.failed, 6u);
}

TEST(Gradcheck, ExcludesKinkWithinStep) {
  // relu at 4e-6: the central difference straddles zero, the analytic
  // gradient is the right-hand slope.
  const Tensor x = Tensor::parameter({2}, {4e-6, 0.7});
  auto f = [&] { return sum(relu(x)); };
  Rng rng(0);
  const auto c = check_gradients("relu", f, {{"x", x}}, rng);
  EXPECT_EQ(c.kinks, 1u);
  EXPECT_EQ(c.checked, 1u);
  EXPECT_LT(c.max_rel, 1e-9);
}

TEST(Gradcheck, SamplesLargeTensors) {
  const Tensor x = testing::random_param({10, 10}, 4);
  auto f = [&] { return sum(square(x)); };
  Rng rng(0);
  GradcheckOptions opts;
  const auto c = check_gradients("sq", f, {{"x", x}}, rng, opts);
  EXPECT_EQ(c.checked, opts.samples);
}

// ---- [DERIVED] suite structure -----------------------------------------

TEST(Gradcheck, SuiteCoversEveryModuleAndIsDeterministic) {
  const auto a = run_gradcheck(7);
  const std::vector<std::string> want{"neural_field", "gaussian_features", "temporal_rbf", "so3_exp",
                                      "deformation",  "fusion_predict",    "losses",       "pipeline"};
  ASSERT_EQ(a.cases.size(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) {
    EXPECT_EQ(a.cases[i].name, want[i]);
    EXPECT_GT(a.cases[i].checked, 0u) << want[i];
  }
  // Modules without deep stacks resolve far below the tolerance.
  for (const char* n : {"temporal_rbf", "so3_exp", "fusion_predict", "losses"}) {
    const auto& c = *std::find_if(a.cases.begin(), a.cases.end(), [&](const auto& x) { return x.name == n; });
    EXPECT_LT(c.max_rel, 1e-4) << n;
  }
  // Every entry off at step h recovers at a wider step: round-off, not a
  // wrong gradient.
  EXPECT_LT(a.max_rel_wide(), 1e-3);
  const auto b = run_gradcheck(7);
  EXPECT_EQ(a.max_rel(), b.max_rel());
  EXPECT_EQ(a.checked(), b.checked());
}

}  // namespace
}  // namespace ng4d
