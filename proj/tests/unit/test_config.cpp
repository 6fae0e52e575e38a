#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "ng4d/config.hpp"
#include "ng4d/error.hpp"
#include "ng4d/model.hpp"

namespace ng4d {
namespace {

// ---- [PAPER] published hyperparameters ------------------------------------

TEST(ConfigPaper, DefaultsMatchPublishedHyperparameters) {
  const RunConfig c;
  EXPECT_EQ(c.gaussians, 8u);
  EXPECT_EQ(RunConfig::preset(Preset::Lidar).gaussians, 16u);
  EXPECT_EQ(c.kappa, 200u);
  EXPECT_EQ(c.iterations, 5000u);
  EXPECT_EQ(c.lr, 0.001);
  EXPECT_EQ(c.weight_decay, 0.0);
  EXPECT_EQ(c.weights.chamfer, 1.0);
  EXPECT_EQ(c.weights.smooth, 1.0);
  EXPECT_EQ(c.weights.emd, 50.0);
  EXPECT_GT(c.poly_power, 0.0);
  EXPECT_EQ(kTimeEncodingDim, 8u);
  EXPECT_EQ(kGcnDim, 32u);
  EXPECT_EQ(rbf_centers(4), (std::vector<double>{0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0}));
}

TEST(ConfigPaper, PresetsFollowDataRegime) {
  const auto obj = RunConfig::preset(Preset::Object);
  EXPECT_EQ(obj.points_per_frame, 1024u);
  EXPECT_EQ(obj.gaussians, 8u);
  EXPECT_FALSE(obj.smoothness);
  const auto lidar = RunConfig::preset(Preset::Lidar);
  EXPECT_EQ(lidar.points_per_frame, 8192u);
  EXPECT_TRUE(lidar.smoothness);
}

TEST(ConfigPaper, AblationRowsMirrorPublishedStudy) {
  const auto rows = ablation_rows();
  ASSERT_EQ(rows.size(), 7u);
  EXPECT_EQ(rows.back().first, "full");
  EXPECT_EQ(rows.back().second, Components{});
  for (const auto& [name, c] : rows) {
    EXPECT_NO_THROW(c.validate()) << name;
  }
  // Every row other than the full model disables something.
  for (std::size_t i = 0; i + 1 < rows.size(); ++i) EXPECT_NE(rows[i].second, Components{}) << rows[i].first;
}

// ---- [TRIVIAL] text form --------------------------------------------------

TEST(ConfigText, RoundTripIsExact) {
  RunConfig c = RunConfig::preset(Preset::Lidar);
  c.lr = 0.1 + 0.2;  // not representable in short decimal
  c.dropout = 1.0 / 3.0;
  c.seed = 18446744073709551615ULL;
  c.components.fusion = FusionMode::Cat;
  c.components.deformation = false;
  EXPECT_EQ(RunConfig::from_text(c.to_text()), c);
}

TEST(ConfigText, OverlaysOnBaseAndSkipsComments) {
  const auto c = RunConfig::from_text("# comment\n\n  points = 64 \ngaussians=4\nfusion = attention\n");
  EXPECT_EQ(c.points_per_frame, 64u);
  EXPECT_EQ(c.gaussians, 4u);
  EXPECT_EQ(c.components.fusion, FusionMode::Attention);
  EXPECT_EQ(c.kappa, 200u);
}

TEST(ConfigText, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(RunConfig::from_text("colour = red"), ParameterError);
  EXPECT_THROW(RunConfig::from_text("points = -3"), ParameterError);
  EXPECT_THROW(RunConfig::from_text("lr = fast"), ParameterError);
  EXPECT_THROW(RunConfig::from_text("lr = nan"), ParameterError);
  EXPECT_THROW(RunConfig::from_text("smoothness = maybe"), ParameterError);
  EXPECT_THROW(RunConfig::from_text("fusion = sum"), ParameterError);
  EXPECT_THROW(RunConfig::from_text("points 12"), ParameterError);
}

TEST(ConfigText, LoadReadsFileAndNamesMissingPath) {
  const auto path = std::filesystem::temp_directory_path() / "ng4d_test_config.txt";
  {
    std::ofstream(path) << "iterations = 7\nseed = 3\n";
  }
  const auto c = RunConfig::load(path, RunConfig::preset(Preset::Lidar));
  EXPECT_EQ(c.iterations, 7u);
  EXPECT_EQ(c.seed, 3u);
  EXPECT_EQ(c.points_per_frame, 8192u);
  std::filesystem::remove(path);
  try {
    RunConfig::load(path, {});
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(path.string()), std::string::npos);
  }
}

// ---- [TRIVIAL] validation -------------------------------------------------

TEST(ConfigValidate, CountsMustBePositive) {
  for (const char* key : {"points", "gaussians", "kappa", "smooth_k", "outlier_k", "sinkhorn_iterations"}) {
    RunConfig c;
    c.set(key, "0");
    EXPECT_THROW(c.validate(), ParameterError) << key;
  }
  RunConfig c;
  c.gaussians = c.points_per_frame + 1;
  EXPECT_THROW(c.validate(), ParameterError);
  c = {};
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), ParameterError);
  c = {};
  c.weights.emd = -1.0;
  EXPECT_THROW(c.validate(), ParameterError);
  EXPECT_NO_THROW(RunConfig{}.validate());
}

TEST(ConfigValidate, AblationNeedsAFeaturePath) {
  Components c;
  c.neural_field = false;
  c.gauss_pc = false;
  c.t_rbf_gr = false;
  c.deformation = false;
  c.fusion = FusionMode::Off;
  EXPECT_THROW(c.validate(), ParameterError);

  Components rbf_without_gaussians{true, false, true, false, FusionMode::Off};
  EXPECT_THROW(rbf_without_gaussians.validate(), ParameterError);

  Components fusion_without_field{false, true, false, false, FusionMode::Attention};
  EXPECT_THROW(fusion_without_field.validate(), ParameterError);

  RunConfig cfg;
  cfg.components = c;
  EXPECT_THROW(cfg.validate(), ParameterError);
}

TEST(ConfigValidate, FusionNames) {
  EXPECT_EQ(parse_fusion("cat"), FusionMode::Cat);
  EXPECT_EQ(parse_fusion("attn"), FusionMode::Attention);
  EXPECT_EQ(parse_fusion("attention"), FusionMode::Attention);
  EXPECT_EQ(parse_fusion("off"), FusionMode::Off);
  for (auto m : {FusionMode::Cat, FusionMode::Attention, FusionMode::Off}) EXPECT_EQ(parse_fusion(fusion_name(m)), m);
}

}  // namespace
}  // namespace ng4d
