#include "ng4d/optim.hpp"

#include <cmath>
#include <string>

namespace ng4d {

AdamW::AdamW(std::vector<Tensor> params, AdamWOptions options)
    : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    if (!p.is_leaf() || !p.requires_grad()) {
      throw ParameterError("AdamW: every parameter must be a requires-grad leaf");
    }
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void AdamW::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].has_grad()) {
      throw Error("AdamW: parameter " + std::to_string(i) + " " +
                  shape_str(params_[i].shape()) + " has no gradient");
    }
  }
  ++step_count_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step_count_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto w = params_[i].mutable_values();
    const auto g = params_[i].grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      w[k] -= options_.lr * options_.weight_decay * w[k];
      m[k] = b1 * m[k] + (1.0 - b1) * g[k];
      v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      w[k] -= options_.lr * mhat / (std::sqrt(vhat) + options_.eps);
    }
    params_[i].zero_grad();
  }
}

double poly_lr(std::int64_t iter, std::int64_t total, double base_lr, double power) {
  if (total <= 0 || iter < 0 || iter > total) {
    throw ParameterError("poly_lr: need 0 <= iter <= total with total > 0");
  }
  const double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(total);
  return base_lr * std::pow(frac, power);
}

}  // namespace ng4d
