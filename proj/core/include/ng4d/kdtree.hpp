#pragma once

// Exact 3-D k-nearest-neighbour search. Results are ordered by
// (squared distance, index), so ties always resolve to the lower index and
// queries agree element-for-element with a brute-force scan.

#include <cstddef>
#include <optional>
#include <vector>

#include "ng4d/geometry.hpp"

namespace ng4d {

struct Neighbor {
  std::size_t index;
  double dist2;
};

class KdTree {
 public:
  explicit KdTree(PointMatrix points, std::size_t leaf_size = 8);

  std::size_t size() const { return static_cast<std::size_t>(points_.rows()); }
  const PointMatrix& points() const { return points_; }

  /// Up to k nearest points to q, skipping index `exclude` when given.
  std::vector<Neighbor> knn(const Eigen::Vector3d& q, std::size_t k,
                            std::optional<std::size_t> exclude = std::nullopt) const;
  Neighbor nearest(const Eigen::Vector3d& q) const;

 private:
  struct Node {
    std::size_t begin = 0, end = 0;  // range in order_
    int axis = -1;           // -1 for leaves
    double split = 0.0;
    std::size_t left = 0, right = 0;
    Eigen::Vector3d lo, hi;  // bounding box
  };

  std::size_t build(std::size_t begin, std::size_t end);
  void search(std::size_t node, const Eigen::Vector3d& q, std::size_t k,
              std::optional<std::size_t> exclude, std::vector<Neighbor>& heap) const;

  PointMatrix points_;
  std::size_t leaf_size_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

/// k nearest neighbours of every point among the others (self excluded),
/// row-major N x k indices. Requires 1 <= k < N.
std::vector<std::size_t> knn_self(const PointMatrix& points, std::size_t k);

}  // namespace ng4d
