#pragma once

#include <cstdint>
#include <vector>

#include "ng4d/tensor.hpp"

namespace ng4d {

struct AdamWOptions {
  double lr = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// AdamW with decoupled weight decay. Moment buffers are allocated per
/// parameter at construction and match the parameter shapes.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWOptions options = {});

  /// Applies one update using the gradients currently stored on the
  /// parameters, then zeroes them. Throws if a parameter has no gradient.
  void step();

  void set_lr(double lr) { options_.lr = lr; }
  double lr() const { return options_.lr; }
  const AdamWOptions& options() const { return options_; }
  std::int64_t step_count() const { return step_count_; }
  const std::vector<Tensor>& params() const { return params_; }
  const std::vector<double>& first_moment(std::size_t i) const { return m_[i]; }
  const std::vector<double>& second_moment(std::size_t i) const { return v_[i]; }

 private:
  std::vector<Tensor> params_;
  AdamWOptions options_;
  std::int64_t step_count_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Polynomial decay base_lr * (1 - iter/total)^power for 0 <= iter <= total.
double poly_lr(std::int64_t iter, std::int64_t total, double base_lr, double power = 0.9);

}  // namespace ng4d
