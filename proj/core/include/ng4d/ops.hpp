#pragma once

// Differentiable tensor operations. Binary elementwise operations broadcast
// numpy-style (trailing-aligned extents that are equal or 1).

#include <cstddef>
#include <span>
#include <vector>

#include "ng4d/tensor.hpp"

namespace ng4d {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return add_scalar(a, -s); }
inline Tensor operator*(const Tensor& a, double s) { return mul_scalar(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul_scalar(a, s); }

Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sin(const Tensor& a);
Tensor cos(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor square(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor relu(const Tensor& a);
/// x for x > 0, slope * x otherwise (including x == 0). slope in (0, 1).
Tensor leaky_relu(const Tensor& a, double slope);

/// 2-D product [m x k] . [k x n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// x W + b with x [m x k], W [k x n], b [n]; one fused node.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
/// Batched product [B x m x k] . [B x k x n].
Tensor bmm(const Tensor& a, const Tensor& b);
/// Swaps the last two axes of a rank-2 or rank-3 tensor.
Tensor transpose(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);

Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, std::size_t axis, bool keepdim = false);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, std::size_t axis, bool keepdim = false);

/// Max-stabilized softmax along `axis`.
Tensor softmax(const Tensor& a, std::size_t axis);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// Gathers slices along `axis`; repeated indices accumulate in backward.
Tensor index_select(const Tensor& a, std::size_t axis, std::span<const std::size_t> indices);

/// Rows of x [N x D] max-reduced per segment id (segment[i] < count).
/// Empty segments yield zeros. Ties resolve to the lowest row index, which
/// alone receives the gradient.
Tensor segment_max(const Tensor& x, std::span<const std::size_t> segment, std::size_t count);

/// softmax(q k^T * scale) v over rows, q [N x d], k [M x d], v [M x e].
/// The N x M weights are recomputed in backward instead of stored.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, double scale);

}  // namespace ng4d
