#pragma once

// Finite-difference verification of every differentiable module and of the
// composed sequence loss on a small synthetic scene.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ng4d/nn.hpp"
#include "ng4d/random.hpp"

namespace ng4d {

struct GradcheckOptions {
  double h = 1e-5;      // central-difference step
  double floor = 1e-8;  // entries with both gradients at or below this are skipped
  /// Tensors up to this many entries are checked in full; larger ones on a
  /// seeded sample of `samples` entries.
  std::size_t full_limit = 64;
  std::size_t samples = 24;
  /// Relative tolerance. Entries off by at least this much are tested for a
  /// non-differentiable point within +-h.
  double tol = 1e-4;
};

struct GradcheckCase {
  std::string name;
  double max_rel = 0.0;
  std::size_t checked = 0;
  /// Worst entry error when entries off by at least `tol` at step h may use
  /// their best result at 10h or 100h instead. Round-off in f falls off as
  /// 1/h while a wrong gradient persists at every step.
  double max_rel_wide = 0.0;
  std::size_t failed = 0;  // entries at or above tol at step h
  /// Per-tensor |a - n| / max(|a|, |n|) over the checked entries, maximized
  /// over tensors whose gradient norm exceeds `floor`.
  double max_rel_tensor = 0.0;
  /// Entries excluded because f is not differentiable within +-h there: the
  /// one-sided slopes disagree and the analytic gradient matches one of them.
  std::size_t kinks = 0;
  std::string worst_param;  // empty when nothing exceeded zero error
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  /// eps |f| / h at the worst entry: the spacing of representable central
  /// differences, a lower bound on their round-off.
  double worst_resolution = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckCase> cases;
  double seconds = 0.0;

  double max_rel() const;
  double max_rel_wide() const;
  double max_rel_tensor() const;
  std::size_t checked() const;
  std::size_t kinks() const;
  bool passed(double tol = 1e-4) const { return max_rel() < tol; }
};

/// Compares backward() of the scalar `f` against central differences over
/// the entries of `params`. f must be deterministic.
GradcheckCase check_gradients(const std::string& name, const std::function<Tensor()>& f, const NamedParams& params,
                              Rng& rng, const GradcheckOptions& opts = {});

/// The full suite on a 16-point, 2-Gaussian, 4-frame scene drawn from
/// `seed`. Parameters are perturbed away from their identity initialization
/// so no path is masked by a zero head.
GradcheckReport run_gradcheck(std::uint64_t seed, const GradcheckOptions& opts = {});

}  // namespace ng4d
