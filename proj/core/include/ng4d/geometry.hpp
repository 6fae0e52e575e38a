#pragma once

#include <Eigen/Core>

#include "ng4d/tensor.hpp"

namespace ng4d {

/// N x 3 row-major point coordinates.
using PointMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
/// General row-major matrix, layout-compatible with a rank-2 Tensor.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class Derived>
Tensor to_tensor(const Eigen::MatrixBase<Derived>& m) {
  const RowMatrix r = m;
  return Tensor({static_cast<std::size_t>(r.rows()), static_cast<std::size_t>(r.cols())},
                std::vector<double>(r.data(), r.data() + r.size()));
}

/// Rank-2 tensor as an N x 3 point matrix.
PointMatrix to_points(const Tensor& t);
RowMatrix to_matrix(const Tensor& t);

}  // namespace ng4d
