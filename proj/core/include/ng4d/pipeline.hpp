#pragma once

// Per-sequence optimization and the inference modes built on a fitted model.

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ng4d/model.hpp"

namespace ng4d {

struct HeldOutMetrics {
  std::size_t frame = 0;
  std::size_t anchor = 0;
  CloudMetrics metrics;  // in input units
};

struct FitResult {
  Model model;  // parameters restored to the best snapshot
  std::vector<double> loss_history;
  /// Iteration whose parameters were kept; nullopt when no iteration ran.
  std::optional<std::size_t> best_iteration;
  double best_loss = 0.0;
  bool stopped_early = false;
  std::vector<HeldOutMetrics> held_out;
  double wall_time_s = 0.0;
};

struct FitProgress {
  std::size_t iteration = 0;
  double loss = 0.0;
  double lr = 0.0;
};
using FitCallback = std::function<void(const FitProgress&)>;

/// Loss of one leave-one-frame-out pass: every frame j is predicted from its
/// nearest other frame at t_j and compared with the observed frame j.
Tensor sequence_loss(const Model& model, const Mode& mode);

/// Builds the model and minimizes sequence_loss with AdamW under a poly
/// schedule, keeping the best-loss parameters. Parameters that receive no
/// gradient in the configured component set are left untouched. Throws
/// NumericalError naming the iteration when the loss turns non-finite.
FitResult fit_sequence(const Sequence& seq, const RunConfig& cfg, const FitCallback& progress = {});

/// Same from an already built model (used by tests and gradcheck).
FitResult fit_model(Model model, const FitCallback& progress = {});

/// Held-out metrics of the current parameters, one entry per frame.
std::vector<HeldOutMetrics> evaluate_frames(const Model& model);

struct Interpolation {
  PointCloud cloud;  // input units; timestamp in input time units
  std::size_t anchor = 0;
  bool extrapolated = false;  // t outside [0, 1]
};

/// Cloud at normalized time t predicted from the nearest frame.
Interpolation interpolate(const Model& model, double t);

/// Per-point flow between normalized times t1 and t2 for the points of the
/// frame nearest t1, in input units. Zero when t1 == t2.
PointMatrix scene_flow(const Model& model, double t1, double t2);
/// Anchor points advanced to t1 (the points the flow is attached to).
PointMatrix flow_origin(const Model& model, double t1);

/// The frames nearest each timestamp carried to the base frame's time,
/// concatenated after the base frame itself, in input units.
PointCloud densify(const Model& model, const std::vector<double>& timestamps, std::size_t base_frame);

/// {cd, emd, emd_mode, epe3d, acc_s, acc_r, outliers, iters, wall_time_s};
/// flow entries are null when no flow ground truth is given.
std::string metrics_json(const CloudMetrics& cloud, const std::optional<FlowMetrics>& flow, std::size_t iters,
                         double wall_time_s);

/// Versioned little-endian model file: magic "NG4D", version, config text,
/// normalization, preprocessed frames and named parameter tensors.
void save_model(const std::filesystem::path& path, const Model& model);
Model load_model(const std::filesystem::path& path);

}  // namespace ng4d
