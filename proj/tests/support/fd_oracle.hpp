#pragma once

// Central finite-difference gradient oracle, written independently of the
// library's own gradcheck so the two can cross-validate.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "ng4d/tensor.hpp"

namespace ng4d::testing {

struct FdReport {
  double max_rel = 0.0;
  std::size_t checked = 0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Compares backward() against central differences for every element of
/// every parameter. Elements where both gradients are below `floor` or
/// `skip(param, index)` returns true are ignored.
inline FdReport fd_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                         double h = 1e-5, double floor = 1e-8,
                         const std::function<bool(std::size_t, std::size_t)>& skip = {}) {
  for (auto& p : params) p.clear_grad();
  backward(f());
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) {
    analytic.emplace_back(p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end())
                                       : std::vector<double>(p.numel(), 0.0));
    p.clear_grad();
  }
  FdReport rep;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto vals = params[pi].mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      if (skip && skip(pi, i)) continue;
      const double orig = vals[i];
      vals[i] = orig + h;
      const double fp = f().item();
      vals[i] = orig - h;
      const double fm = f().item();
      vals[i] = orig;
      const double num = (fp - fm) / (2.0 * h);
      const double a = analytic[pi][i];
      const double scale = std::max(std::abs(a), std::abs(num));
      if (scale <= floor) continue;
      const double rel = std::abs(a - num) / scale;
      if (rel > rep.max_rel) rep = {rel, rep.checked, pi, i, a, num};
      ++rep.checked;
    }
  }
  return rep;
}

}  // namespace ng4d::testing
