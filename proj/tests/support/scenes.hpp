#pragma once

// Synthetic point-cloud fixtures shared by unit and acceptance tests.

#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Geometry>

#include "ng4d/geometry.hpp"
#include "ng4d/pointcloud.hpp"
#include "ng4d/random.hpp"

namespace ng4d::testing {

/// Isotropic Gaussian blobs, `per_blob` points each, in blob order.
inline PointMatrix blobs(const std::vector<Eigen::Vector3d>& centers, std::size_t per_blob, double sigma,
                         std::uint64_t seed) {
  Rng rng(seed);
  PointMatrix p(static_cast<Eigen::Index>(centers.size() * per_blob), 3);
  Eigen::Index r = 0;
  for (const auto& c : centers) {
    for (std::size_t i = 0; i < per_blob; ++i, ++r) {
      for (int a = 0; a < 3; ++a) p(r, a) = c[a] + sigma * rng.normal();
    }
  }
  return p;
}

/// Corners of an equilateral triangle with unit side in the z = 0 plane.
inline std::vector<Eigen::Vector3d> unit_triangle() {
  return {Eigen::Vector3d(0, 0, 0), Eigen::Vector3d(1, 0, 0), Eigen::Vector3d(0.5, std::sqrt(3.0) / 2, 0)};
}

/// Uniform samples inside an axis-aligned box centered at the origin.
inline PointMatrix box_cloud(std::size_t n, const Eigen::Vector3d& extent, std::uint64_t seed) {
  Rng rng(seed);
  PointMatrix p(static_cast<Eigen::Index>(n), 3);
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    for (int a = 0; a < 3; ++a) p(i, a) = rng.uniform(-0.5, 0.5) * extent[a];
  }
  return p;
}

inline double bbox_diagonal(const PointMatrix& p) {
  return (p.colwise().maxCoeff() - p.colwise().minCoeff()).norm();
}

/// Frames k = 0..frames-1 at raw times 0..frames-1 with points
/// motion(k / (frames - 1)).
inline Sequence make_sequence(std::size_t frames, const std::function<PointMatrix(double)>& motion) {
  Sequence seq;
  for (std::size_t k = 0; k < frames; ++k) {
    seq.frames.push_back({motion(static_cast<double>(k) / static_cast<double>(frames - 1)), static_cast<double>(k)});
  }
  return seq;
}

/// Three overlapping blobs, 256 points, the base cloud of the motion fixtures.
inline PointMatrix motion_base() {
  return blobs({Eigen::Vector3d(0, 0, 0), Eigen::Vector3d(1, 0.2, 0), Eigen::Vector3d(0.4, 0.8, 0.3)}, 86, 0.15, 3)
      .topRows(256);
}

struct RigidTranslation {
  PointMatrix base;
  Eigen::RowVector3d velocity;  // total displacement over t in [0, 1]
  double diagonal = 0.0;
  Sequence seq;

  PointMatrix at(double t) const { return (base.rowwise() + velocity * t).eval(); }
};

/// Constant velocity along (1, 1, 1) with total displacement 0.3 x the
/// bounding-box diagonal.
inline RigidTranslation rigid_translation(std::size_t frames = 4) {
  RigidTranslation r;
  r.base = motion_base();
  r.diagonal = bbox_diagonal(r.base);
  r.velocity = Eigen::RowVector3d::Constant(0.3 * r.diagonal / std::sqrt(3.0));
  r.seq = make_sequence(frames, [&](double t) { return r.at(t); });
  return r;
}

struct RigidRotation {
  PointMatrix base;  // centered on the rotation axis
  Eigen::Vector3d axis;
  double total_angle = 0.0;
  Sequence seq;

  PointMatrix at(double t) const {
    const Eigen::Matrix3d R = Eigen::AngleAxisd(total_angle * t, axis).toRotationMatrix();
    return (base * R.transpose()).eval();
  }
};

/// 30 degrees in total about a fixed tilted axis through the centroid.
inline RigidRotation rigid_rotation(std::size_t frames = 4) {
  RigidRotation r;
  r.base = motion_base();
  r.base.rowwise() -= r.base.colwise().mean();
  r.axis = Eigen::Vector3d(0.2, 1.0, 0.3).normalized();
  r.total_angle = 30.0 * 3.14159265358979323846 / 180.0;
  r.seq = make_sequence(frames, [&](double t) { return r.at(t); });
  return r;
}

struct Bending {
  PointMatrix left, right;  // blobs at t = 0
  double accel = 0.0;       // each blob moves +-accel t^2 along x

  PointMatrix at(double t) const {
    PointMatrix p(left.rows() + right.rows(), 3);
    p.topRows(left.rows()) = left;
    p.bottomRows(right.rows()) = right;
    p.topRows(left.rows()).col(0).array() -= accel * t * t;
    p.bottomRows(right.rows()).col(0).array() += accel * t * t;
    // A transverse drift quadratic in t bends the trajectories.
    p.col(1).array() += 0.5 * accel * t * t;
    return p;
  }
  Sequence seq;
};

/// Two blobs that separate along x with quadratic-in-t trajectories.
inline Bending bending(std::size_t frames = 4) {
  Bending b;
  b.left = blobs({Eigen::Vector3d(-0.3, 0, 0)}, 128, 0.1, 5);
  b.right = blobs({Eigen::Vector3d(0.3, 0, 0)}, 128, 0.1, 6);
  b.accel = 0.3;
  b.seq = make_sequence(frames, [&](double t) { return b.at(t); });
  return b;
}

}  // namespace ng4d::testing
