#include "ng4d/geometry.hpp"

#include <algorithm>

namespace ng4d {

PointMatrix to_points(const Tensor& t) {
  if (t.rank() != 2 || t.dim(1) != 3) throw DimensionError("expected N x 3 tensor, got " + shape_str(t.shape()));
  PointMatrix p(static_cast<Eigen::Index>(t.dim(0)), 3);
  std::copy(t.values().begin(), t.values().end(), p.data());
  return p;
}

RowMatrix to_matrix(const Tensor& t) {
  if (t.rank() != 2) throw DimensionError("expected rank-2 tensor, got " + shape_str(t.shape()));
  RowMatrix m(static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
  std::copy(t.values().begin(), t.values().end(), m.data());
  return m;
}

}  // namespace ng4d
