#include "ng4d/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace ng4d {

namespace {

using detail::grad_buffer;
using detail::TensorImpl;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

// Flat source indices of each output element under broadcasting.
struct BroadcastPlan {
  Shape out;
  bool same = false;
  std::vector<std::size_t> ia, ib;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  BroadcastPlan p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  const std::size_t r = std::max(a.size(), b.size());
  Shape pa(r, 1), pb(r, 1);
  std::copy(a.begin(), a.end(), pa.begin() + (r - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + (r - b.size()));
  p.out.resize(r);
  for (std::size_t d = 0; d < r; ++d) {
    if (pa[d] != pb[d] && pa[d] != 1 && pb[d] != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                           shape_str(b));
    }
    p.out[d] = std::max(pa[d], pb[d]);
  }
  // Strides with zero on broadcast axes.
  std::vector<std::size_t> sa(r, 0), sb(r, 0);
  std::size_t acc_a = 1, acc_b = 1;
  for (std::size_t d = r; d-- > 0;) {
    sa[d] = pa[d] == 1 ? 0 : acc_a;
    sb[d] = pb[d] == 1 ? 0 : acc_b;
    acc_a *= pa[d];
    acc_b *= pb[d];
  }
  const std::size_t n = shape_numel(p.out);
  p.ia.resize(n);
  p.ib.resize(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t offa = 0, offb = 0;
  for (std::size_t k = 0; k < n; ++k) {
    p.ia[k] = offa;
    p.ib[k] = offb;
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      offa += sa[d];
      offb += sb[d];
      if (idx[d] < p.out[d]) break;
      offa -= sa[d] * idx[d];
      offb -= sb[d] * idx[d];
      idx[d] = 0;
    }
  }
  return p;
}

template <class F, class DA, class DB>
Tensor binary(const char* name, const Tensor& a, const Tensor& b, F f, DA dfa, DB dfb) {
  auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(a.shape(), b.shape(), name));
  const auto av = a.values();
  const auto bv = b.values();
  const std::size_t n = shape_numel(plan->out);
  std::vector<double> out(n);
  if (plan->same) {
    for (std::size_t k = 0; k < n; ++k) out[k] = f(av[k], bv[k]);
  } else {
    for (std::size_t k = 0; k < n; ++k) out[k] = f(av[plan->ia[k]], bv[plan->ib[k]]);
  }
  auto ai = a.impl();
  auto bi = b.impl();
  return make_op(name, plan->out, std::move(out), {a, b},
                 [ai, bi, plan, dfa, dfb](const TensorImpl& o) {
                   const auto& g = o.grad;
                   const auto& x = ai->data;
                   const auto& y = bi->data;
                   const std::size_t n = g.size();
                   if (ai->requires_grad) {
                     auto ga = grad_buffer(*ai);
                     for (std::size_t k = 0; k < n; ++k) {
                       const std::size_t i = plan->same ? k : plan->ia[k];
                       const std::size_t j = plan->same ? k : plan->ib[k];
                       ga[i] += g[k] * dfa(x[i], y[j], o.data[k]);
                     }
                   }
                   if (bi->requires_grad) {
                     auto gb = grad_buffer(*bi);
                     for (std::size_t k = 0; k < n; ++k) {
                       const std::size_t i = plan->same ? k : plan->ia[k];
                       const std::size_t j = plan->same ? k : plan->ib[k];
                       gb[j] += g[k] * dfb(x[i], y[j], o.data[k]);
                     }
                   }
                 });
}

template <class F, class D>
Tensor unary(const char* name, const Tensor& a, F f, D df) {
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t k = 0; k < av.size(); ++k) out[k] = f(av[k]);
  auto ai = a.impl();
  return make_op(name, a.shape(), std::move(out), {a}, [ai, df](const TensorImpl& o) {
    auto ga = grad_buffer(*ai);
    for (std::size_t k = 0; k < ga.size(); ++k) ga[k] += o.grad[k] * df(ai->data[k], o.data[k]);
  });
}

// [outer, n, inner] view of `shape` around `axis`.
struct AxisView {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for " +
                         shape_str(shape));
  }
  AxisView v;
  for (std::size_t d = 0; d < axis; ++d) v.outer *= shape[d];
  v.n = shape[axis];
  for (std::size_t d = axis + 1; d < shape.size(); ++d) v.inner *= shape[d];
  return v;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double z) { return -z / y; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(
      "add_scalar", a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double s) {
  return unary(
      "mul_scalar", a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor exp(const Tensor& a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double z) { return z; });
}

Tensor log(const Tensor& a) {
  return unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sin(const Tensor& a) {
  return unary(
      "sin", a, [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}

Tensor cos(const Tensor& a) {
  return unary(
      "cos", a, [](double x) { return std::cos(x); },
      [](double x, double) { return -std::sin(x); });
}

Tensor sqrt(const Tensor& a) {
  return unary(
      "sqrt", a, [](double x) { return std::sqrt(x); },
      [](double, double z) { return 0.5 / z; });
}

Tensor square(const Tensor& a) {
  return unary(
      "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor softplus(const Tensor& a) {
  return unary(
      "softplus", a,
      [](double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& a, double slope) {
  if (!(slope > 0.0 && slope < 1.0)) {
    throw ParameterError("leaky_relu: slope must lie in (0, 1), got " + std::to_string(slope));
  }
  return unary(
      "leaky_relu", a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  MutMap(out.data(), m, n).noalias() =
      ConstMap(a.values().data(), m, k) * ConstMap(b.values().data(), k, n);
  auto ai = a.impl();
  auto bi = b.impl();
  return make_op("matmul", {m, n}, std::move(out), {a, b},
                 [ai, bi, m, k, n](const TensorImpl& o) {
                   ConstMap g(o.grad.data(), m, n);
                   if (ai->requires_grad) {
                     MutMap(grad_buffer(*ai).data(), m, k).noalias() +=
                         g * ConstMap(bi->data.data(), k, n).transpose();
                   }
                   if (bi->requires_grad) {
                     MutMap(grad_buffer(*bi).data(), k, n).noalias() +=
                         ConstMap(ai->data.data(), m, k).transpose() * g;
                   }
                 });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0) || b.numel() != w.dim(1)) {
    throw DimensionError("linear: incompatible shapes " + shape_str(x.shape()) + ", " + shape_str(w.shape()) +
                         " and " + shape_str(b.shape()));
  }
  const std::size_t m = x.dim(0), k = x.dim(1), n = w.dim(1);
  std::vector<double> out(m * n);
  MutMap ov(out.data(), m, n);
  ov.noalias() = ConstMap(x.values().data(), m, k) * ConstMap(w.values().data(), k, n);
  ov.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.values().data(), static_cast<Eigen::Index>(n));
  auto xi = x.impl(), wi = w.impl(), bi = b.impl();
  return make_op("linear", {m, n}, std::move(out), {x, w, b}, [xi, wi, bi, m, k, n](const TensorImpl& o) {
    ConstMap g(o.grad.data(), m, n);
    if (xi->requires_grad) {
      MutMap(grad_buffer(*xi).data(), m, k).noalias() += g * ConstMap(wi->data.data(), k, n).transpose();
    }
    if (wi->requires_grad) {
      MutMap(grad_buffer(*wi).data(), k, n).noalias() += ConstMap(xi->data.data(), m, k).transpose() * g;
    }
    if (bi->requires_grad) {
      Eigen::Map<Eigen::RowVectorXd>(grad_buffer(*bi).data(), static_cast<Eigen::Index>(n)) += g.colwise().sum();
    }
  });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<double> out(bs * m * n);
  const double* ap = a.values().data();
  const double* bp = b.values().data();
  for (std::size_t i = 0; i < bs; ++i) {
    MutMap(out.data() + i * m * n, m, n).noalias() =
        ConstMap(ap + i * m * k, m, k) * ConstMap(bp + i * k * n, k, n);
  }
  auto ai = a.impl();
  auto bi = b.impl();
  return make_op("bmm", {bs, m, n}, std::move(out), {a, b},
                 [ai, bi, bs, m, k, n](const TensorImpl& o) {
                   for (std::size_t i = 0; i < bs; ++i) {
                     ConstMap g(o.grad.data() + i * m * n, m, n);
                     if (ai->requires_grad) {
                       MutMap(grad_buffer(*ai).data() + i * m * k, m, k).noalias() +=
                           g * ConstMap(bi->data.data() + i * k * n, k, n).transpose();
                     }
                     if (bi->requires_grad) {
                       MutMap(grad_buffer(*bi).data() + i * k * n, k, n).noalias() +=
                           ConstMap(ai->data.data() + i * m * k, m, k).transpose() * g;
                     }
                   }
                 });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2 && a.rank() != 3) {
    throw DimensionError("transpose: expected rank 2 or 3, got " + shape_str(a.shape()));
  }
  const std::size_t bs = a.rank() == 3 ? a.dim(0) : 1;
  const std::size_t m = a.dim(a.rank() - 2), n = a.dim(a.rank() - 1);
  std::vector<double> out(bs * m * n);
  const double* ap = a.values().data();
  for (std::size_t i = 0; i < bs; ++i) {
    MutMap(out.data() + i * m * n, n, m) = ConstMap(ap + i * m * n, m, n).transpose();
  }
  Shape shape = a.rank() == 3 ? Shape{bs, n, m} : Shape{n, m};
  auto ai = a.impl();
  return make_op("transpose", std::move(shape), std::move(out), {a},
                 [ai, bs, m, n](const TensorImpl& o) {
                   auto ga = grad_buffer(*ai);
                   for (std::size_t i = 0; i < bs; ++i) {
                     MutMap(ga.data() + i * m * n, m, n) +=
                         ConstMap(o.grad.data() + i * m * n, n, m).transpose();
                   }
                 });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  auto ai = a.impl();
  return make_op("reshape", std::move(shape), std::move(out), {a}, [ai](const TensorImpl& o) {
    auto ga = grad_buffer(*ai);
    for (std::size_t k = 0; k < ga.size(); ++k) ga[k] += o.grad[k];
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  auto ai = a.impl();
  return make_op("sum", {1}, {s}, {a}, [ai](const TensorImpl& o) {
    auto ga = grad_buffer(*ai);
    for (auto& g : ga) g += o.grad[0];
  });
}

Tensor sum(const Tensor& a, std::size_t axis, bool keepdim) {
  const auto v = axis_view(a.shape(), axis, "sum");
  std::vector<double> out(v.outer * v.inner, 0.0);
  const auto av = a.values();
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t i = 0; i < v.n; ++i)
      for (std::size_t j = 0; j < v.inner; ++j)
        out[o * v.inner + j] += av[(o * v.n + i) * v.inner + j];
  Shape shape = a.shape();
  if (keepdim || shape.size() == 1) {
    shape[axis] = 1;
  } else {
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  auto ai = a.impl();
  return make_op("sum_axis", std::move(shape), std::move(out), {a}, [ai, v](const TensorImpl& o) {
    auto ga = grad_buffer(*ai);
    for (std::size_t oo = 0; oo < v.outer; ++oo)
      for (std::size_t i = 0; i < v.n; ++i)
        for (std::size_t j = 0; j < v.inner; ++j)
          ga[(oo * v.n + i) * v.inner + j] += o.grad[oo * v.inner + j];
  });
}

Tensor mean(const Tensor& a) { return mul_scalar(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor mean(const Tensor& a, std::size_t axis, bool keepdim) {
  const double n = static_cast<double>(a.dim(axis));
  return mul_scalar(sum(a, axis, keepdim), 1.0 / n);
}

Tensor softmax(const Tensor& a, std::size_t axis) {
  const auto v = axis_view(a.shape(), axis, "softmax");
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t j = 0; j < v.inner; ++j) {
      auto at = [&](std::size_t i) { return (o * v.n + i) * v.inner + j; };
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < v.n; ++i) mx = std::max(mx, av[at(i)]);
      double z = 0.0;
      for (std::size_t i = 0; i < v.n; ++i) {
        out[at(i)] = std::exp(av[at(i)] - mx);
        z += out[at(i)];
      }
      for (std::size_t i = 0; i < v.n; ++i) out[at(i)] /= z;
    }
  }
  auto ai = a.impl();
  return make_op("softmax", a.shape(), std::move(out), {a}, [ai, v](const TensorImpl& o) {
    auto ga = grad_buffer(*ai);
    for (std::size_t oo = 0; oo < v.outer; ++oo) {
      for (std::size_t j = 0; j < v.inner; ++j) {
        auto at = [&](std::size_t i) { return (oo * v.n + i) * v.inner + j; };
        double dot = 0.0;
        for (std::size_t i = 0; i < v.n; ++i) dot += o.grad[at(i)] * o.data[at(i)];
        for (std::size_t i = 0; i < v.n; ++i) ga[at(i)] += o.data[at(i)] * (o.grad[at(i)] - dot);
      }
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) throw DimensionError("concat: axis out of range for " + shape_str(ref));
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == ref.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == ref[d];
    if (!ok) {
      throw DimensionError("concat: shape " + shape_str(s) + " incompatible with " +
                           shape_str(ref) + " along axis " + std::to_string(axis));
    }
    total += s[axis];
  }
  Shape shape = ref;
  shape[axis] = total;
  const auto v = axis_view(shape, axis, "concat");
  std::vector<double> out(shape_numel(shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t n = p.dim(axis);
    const auto pv = p.values();
    for (std::size_t o = 0; o < v.outer; ++o)
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * n * v.inner), n * v.inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * total + off) * v.inner));
    off += n;
  }
  std::vector<detail::ImplPtr> impls;
  for (const auto& p : parts) impls.push_back(p.impl());
  return make_op("concat", std::move(shape), std::move(out), parts,
                 [impls, offsets, v, axis, total](const TensorImpl& o) {
                   for (std::size_t p = 0; p < impls.size(); ++p) {
                     if (!impls[p]->requires_grad) continue;
                     auto gp = grad_buffer(*impls[p]);
                     const std::size_t n = impls[p]->shape[axis];
                     for (std::size_t oo = 0; oo < v.outer; ++oo)
                       for (std::size_t k = 0; k < n * v.inner; ++k)
                         gp[oo * n * v.inner + k] += o.grad[(oo * total + offsets[p]) * v.inner + k];
                   }
                 });
}

Tensor index_select(const Tensor& a, std::size_t axis, std::span<const std::size_t> indices) {
  const auto v = axis_view(a.shape(), axis, "index_select");
  if (indices.empty()) throw DimensionError("index_select: empty index list");
  for (auto i : indices) {
    if (i >= v.n) {
      throw DimensionError("index_select: index " + std::to_string(i) + " out of range for " +
                           shape_str(a.shape()));
    }
  }
  const std::size_t m = indices.size();
  Shape shape = a.shape();
  shape[axis] = m;
  std::vector<double> out(v.outer * m * v.inner);
  const auto av = a.values();
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t r = 0; r < m; ++r)
      std::copy_n(av.begin() + static_cast<std::ptrdiff_t>((o * v.n + indices[r]) * v.inner),
                  v.inner, out.begin() + static_cast<std::ptrdiff_t>((o * m + r) * v.inner));
  auto ai = a.impl();
  auto idx = std::make_shared<std::vector<std::size_t>>(indices.begin(), indices.end());
  return make_op("index_select", std::move(shape), std::move(out), {a},
                 [ai, idx, v](const TensorImpl& o) {
                   auto ga = grad_buffer(*ai);
                   const std::size_t m = idx->size();
                   for (std::size_t oo = 0; oo < v.outer; ++oo)
                     for (std::size_t r = 0; r < m; ++r)
                       for (std::size_t j = 0; j < v.inner; ++j)
                         ga[(oo * v.n + (*idx)[r]) * v.inner + j] +=
                             o.grad[(oo * m + r) * v.inner + j];
                 });
}

Tensor segment_max(const Tensor& x, std::span<const std::size_t> segment, std::size_t count) {
  if (x.rank() != 2 || segment.size() != x.dim(0)) {
    throw DimensionError("segment_max: expected [N x D] with N segment ids, got " +
                         shape_str(x.shape()));
  }
  const std::size_t n = x.dim(0), d = x.dim(1);
  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  auto arg = std::make_shared<std::vector<std::size_t>>(count * d, kNone);
  std::vector<double> out(count * d, 0.0);
  const auto xv = x.values();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t s = segment[i];
    if (s >= count) throw DimensionError("segment_max: segment id out of range");
    for (std::size_t c = 0; c < d; ++c) {
      auto& a = (*arg)[s * d + c];
      if (a == kNone || xv[i * d + c] > out[s * d + c]) {
        a = i;
        out[s * d + c] = xv[i * d + c];
      }
    }
  }
  auto xi = x.impl();
  return make_op("segment_max", {count, d}, std::move(out), {x}, [xi, arg, d](const TensorImpl& o) {
    auto gx = grad_buffer(*xi);
    for (std::size_t k = 0; k < arg->size(); ++k) {
      const std::size_t i = (*arg)[k];
      if (i != kNone) gx[i * d + k % d] += o.grad[k];
    }
  });
}

}  // namespace ng4d

namespace ng4d {

namespace {
constexpr std::size_t kBlock = 256;  // query rows per attention tile
}  // namespace

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, double scale) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.dim(1) != k.dim(1) || k.dim(0) != v.dim(0)) {
    throw DimensionError("attention: incompatible shapes " + shape_str(q.shape()) + ", " +
                         shape_str(k.shape()) + ", " + shape_str(v.shape()));
  }
  const std::size_t n = q.dim(0), m = k.dim(0), d = q.dim(1), e = v.dim(1);
  const ConstMap Q(q.values().data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  const ConstMap K(k.values().data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
  const ConstMap V(v.values().data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(e));
  std::vector<double> out(n * e);
  auto lse = std::make_shared<std::vector<double>>(n);
  MutMap O(out.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(e));
  for (std::size_t r0 = 0; r0 < n; r0 += kBlock) {
    const auto b = static_cast<Eigen::Index>(std::min(kBlock, n - r0));
    const auto r = static_cast<Eigen::Index>(r0);
    RowMat s = (Q.middleRows(r, b) * K.transpose()) * scale;
    for (Eigen::Index i = 0; i < b; ++i) {
      const double mx = s.row(i).maxCoeff();
      s.row(i) = (s.row(i).array() - mx).exp();
      const double z = s.row(i).sum();
      s.row(i) /= z;
      (*lse)[r0 + static_cast<std::size_t>(i)] = mx + std::log(z);
    }
    O.middleRows(r, b).noalias() = s * V;
  }
  auto qi = q.impl(), ki = k.impl(), vi = v.impl();
  return make_op("attention", {n, e}, std::move(out), {q, k, v},
                 [qi, ki, vi, lse, n, m, d, e, scale](const TensorImpl& o) {
                   const ConstMap Q(qi->data.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
                   const ConstMap K(ki->data.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
                   const ConstMap V(vi->data.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(e));
                   const ConstMap G(o.grad.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(e));
                   const ConstMap Out(o.data.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(e));
                   RowMat gq = RowMat::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
                   RowMat gk = RowMat::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
                   RowMat gv = RowMat::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(e));
                   for (std::size_t r0 = 0; r0 < n; r0 += kBlock) {
                     const auto b = static_cast<Eigen::Index>(std::min(kBlock, n - r0));
                     const auto r = static_cast<Eigen::Index>(r0);
                     RowMat p = (Q.middleRows(r, b) * K.transpose()) * scale;
                     for (Eigen::Index i = 0; i < b; ++i) {
                       p.row(i) = (p.row(i).array() - (*lse)[r0 + static_cast<std::size_t>(i)]).exp();
                     }
                     const auto g = G.middleRows(r, b);
                     gv.noalias() += p.transpose() * g;
                     RowMat ds = g * V.transpose();
                     const Eigen::VectorXd dot = (g.array() * Out.middleRows(r, b).array()).rowwise().sum();
                     ds = p.array() * (ds.colwise() - dot).array();
                     gq.middleRows(r, b).noalias() = (ds * K) * scale;
                     gk.noalias() += (ds.transpose() * Q.middleRows(r, b)) * scale;
                   }
                   auto acc = [](const std::shared_ptr<TensorImpl>& t, const RowMat& g) {
                     if (!t->requires_grad) return;
                     auto buf = grad_buffer(*t);
                     for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g.data()[i];
                   };
                   acc(qi, gq);
                   acc(ki, gk);
                   acc(vi, gv);
                 });
}

}  // namespace ng4d
