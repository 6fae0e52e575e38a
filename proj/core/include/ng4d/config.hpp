#pragma once

// Run configuration: presets, flat key=value text form and validation.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ng4d/losses.hpp"

namespace ng4d {

enum class FusionMode { Cat, Attention, Off };

std::string_view fusion_name(FusionMode mode);
/// Accepts "cat", "attn" or "attention", and "off".
FusionMode parse_fusion(std::string_view text);

/// Switches for the model components. A disabled component contributes
/// nothing and its parameters are not trained.
struct Components {
  bool neural_field = true;
  bool gauss_pc = true;
  bool t_rbf_gr = true;
  bool deformation = true;
  FusionMode fusion = FusionMode::Attention;

  /// Throws ParameterError unless some feature path reaches the prediction
  /// head: the RBF residuals and the deformation field need the Gaussian
  /// representation, and cat/attention fusion needs both feature sources.
  void validate() const;
  bool operator==(const Components&) const = default;
};

/// The component combinations of the ablation study, from the bare neural
/// field up to the full model in the last row.
std::vector<std::pair<std::string, Components>> ablation_rows();

enum class Preset {
  Object,  // 1024 points, 8 Gaussians, no smoothness term
  Lidar,   // 8192 points, 16 Gaussians, smoothness term on
};

struct RunConfig {
  std::size_t points_per_frame = 1024;
  std::size_t gaussians = 8;
  std::size_t kappa = 200;
  std::size_t iterations = 5000;
  /// Stop after this many iterations without a new best loss; 0 disables.
  std::size_t patience = 1000;
  double lr = 1e-3;
  double weight_decay = 0.0;
  double poly_power = 0.9;
  LossWeights weights;
  bool smoothness = false;
  std::size_t smooth_k = 9;
  std::uint64_t seed = 0;
  bool outlier_removal = false;
  std::size_t outlier_k = 16;
  double outlier_std = 2.0;
  /// Dropout in the Gaussian feature blocks during training.
  double dropout = 0.3;
  /// Training uses exact EMD up to this many points per cloud.
  std::size_t exact_emd_limit = 512;
  double sinkhorn_reg = 0.01;
  std::size_t sinkhorn_iterations = 200;
  Components components;

  static RunConfig preset(Preset preset);

  /// Throws ParameterError naming the offending key.
  void validate() const;
  /// Sets one key from its text form. Throws ParameterError for unknown keys
  /// or malformed values.
  void set(std::string_view key, std::string_view value);
  /// One "key = value" line per field; doubles round-trip exactly.
  std::string to_text() const;
  /// Applies the lines of `text` over `base`. Blank lines and lines starting
  /// with '#' are ignored.
  static RunConfig from_text(std::string_view text, RunConfig base);
  static RunConfig from_text(std::string_view text);
  static RunConfig load(const std::filesystem::path& path, RunConfig base);

  bool operator==(const RunConfig&) const = default;
};

}  // namespace ng4d
