#include "ng4d/kdtree.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "ng4d/error.hpp"
#include "ng4d/parallel.hpp"

namespace ng4d {

namespace {

bool closer(const Neighbor& a, const Neighbor& b) {
  return a.dist2 < b.dist2 || (a.dist2 == b.dist2 && a.index < b.index);
}

double box_dist2(const Eigen::Vector3d& q, const Eigen::Vector3d& lo, const Eigen::Vector3d& hi) {
  double d = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double e = q[a] < lo[a] ? lo[a] - q[a] : (q[a] > hi[a] ? q[a] - hi[a] : 0.0);
    d += e * e;
  }
  return d;
}

}  // namespace

KdTree::KdTree(PointMatrix points, std::size_t leaf_size)
    : points_(std::move(points)), leaf_size_(std::max<std::size_t>(leaf_size, 1)) {
  order_.resize(size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (size() > 0) build(0, size());
}

std::size_t KdTree::build(std::size_t begin, std::size_t end) {
  const std::size_t id = nodes_.size();
  Node fresh;
  fresh.begin = begin;
  fresh.end = end;
  nodes_.push_back(fresh);
  Eigen::Vector3d lo = points_.row(static_cast<Eigen::Index>(order_[begin])).transpose();
  Eigen::Vector3d hi = lo;
  for (std::size_t i = begin; i < end; ++i) {
    const Eigen::Vector3d p = points_.row(static_cast<Eigen::Index>(order_[i])).transpose();
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  nodes_[id].lo = lo;
  nodes_[id].hi = hi;
  if (end - begin <= leaf_size_) return id;
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  if (hi[axis] == lo[axis]) return id;  // all coincident
  const std::size_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                   order_.begin() + static_cast<std::ptrdiff_t>(mid),
                   order_.begin() + static_cast<std::ptrdiff_t>(end),
                   [&](std::size_t a, std::size_t b) {
                     return points_(static_cast<Eigen::Index>(a), axis) <
                            points_(static_cast<Eigen::Index>(b), axis);
                   });
  nodes_[id].axis = axis;
  nodes_[id].split = points_(static_cast<Eigen::Index>(order_[mid]), axis);
  const std::size_t left = build(begin, mid);
  const std::size_t right = build(mid, end);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void KdTree::search(std::size_t node_id, const Eigen::Vector3d& q, std::size_t k,
                    std::optional<std::size_t> exclude, std::vector<Neighbor>& heap) const {
  const Node& node = nodes_[node_id];
  // Prune only when strictly farther: an equidistant point with a lower
  // index could still displace the current worst.
  if (heap.size() == k && box_dist2(q, node.lo, node.hi) > heap.front().dist2) return;
  if (node.axis < 0) {
    for (std::size_t i = node.begin; i < node.end; ++i) {
      const std::size_t idx = order_[i];
      if (exclude && *exclude == idx) continue;
      const double d2 = (points_.row(static_cast<Eigen::Index>(idx)).transpose() - q).squaredNorm();
      const Neighbor cand{idx, d2};
      if (heap.size() < k) {
        heap.push_back(cand);
        std::push_heap(heap.begin(), heap.end(), closer);
      } else if (closer(cand, heap.front())) {
        std::pop_heap(heap.begin(), heap.end(), closer);
        heap.back() = cand;
        std::push_heap(heap.begin(), heap.end(), closer);
      }
    }
    return;
  }
  const bool go_left = q[node.axis] < node.split;
  search(go_left ? node.left : node.right, q, k, exclude, heap);
  search(go_left ? node.right : node.left, q, k, exclude, heap);
}

std::vector<Neighbor> KdTree::knn(const Eigen::Vector3d& q, std::size_t k,
                                  std::optional<std::size_t> exclude) const {
  std::vector<Neighbor> heap;
  if (k == 0 || size() == 0) return heap;
  heap.reserve(k + 1);
  search(0, q, k, exclude, heap);
  std::sort_heap(heap.begin(), heap.end(), closer);
  return heap;
}

Neighbor KdTree::nearest(const Eigen::Vector3d& q) const {
  auto r = knn(q, 1);
  if (r.empty()) throw ParameterError("nearest: empty tree");
  return r.front();
}

std::vector<std::size_t> knn_self(const PointMatrix& points, std::size_t k) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (k < 1 || k >= n) {
    throw ParameterError("knn: need 1 <= k < N (k=" + std::to_string(k) +
                         ", N=" + std::to_string(n) + ")");
  }
  const KdTree tree(points);
  std::vector<std::size_t> out(n * k);
  parallel_for(n, [&](std::size_t i) {
    const auto nb = tree.knn(points.row(static_cast<Eigen::Index>(i)).transpose(), k, i);
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = nb[j].index;
  });
  return out;
}

}  // namespace ng4d
