#pragma once

// Point-cloud frames, file I/O, sampling and preprocessing.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

#include "ng4d/geometry.hpp"

namespace ng4d {

struct PointCloud {
  PointMatrix points;
  double timestamp = 0.0;

  std::size_t size() const { return static_cast<std::size_t>(points.rows()); }
};

struct Sequence {
  std::vector<PointCloud> frames;
};

enum class CloudFormat { Xyz, PlyAscii, PlyBinaryLe };

/// Format implied by the file extension: ".xyz" (and ".txt") map to Xyz,
/// ".ply" to PlyBinaryLe for writing. Readers sniff PLY encoding from the
/// header regardless.
CloudFormat format_from_path(const std::filesystem::path& path);

/// Parses an in-memory file image. PLY input accepts both encodings.
PointCloud parse_cloud(std::string_view bytes, CloudFormat format, double timestamp = 0.0);
PointCloud load_cloud(const std::filesystem::path& path,
                      std::optional<CloudFormat> format = std::nullopt, double timestamp = 0.0);

std::string serialize_cloud(const PointCloud& pc, CloudFormat format);
void save_cloud(const std::filesystem::path& path, const PointCloud& pc,
                CloudFormat format = CloudFormat::PlyBinaryLe);

/// ASCII "x y z fx fy fz" per line.
void save_flow_xyz(const std::filesystem::path& path, const PointMatrix& points,
                   const PointMatrix& flow);

/// n points: a seeded subset without replacement when N >= n (a permutation
/// when N == n); otherwise all N points followed by n - N seeded draws with
/// replacement.
PointCloud sample_points(const PointCloud& pc, std::size_t n, std::uint64_t seed);

/// Drops points whose mean distance to their k nearest neighbours exceeds
/// mean + std_ratio * stddev over the cloud. Survivors keep their order.
PointCloud remove_outliers(const PointCloud& pc, std::size_t k, double std_ratio);

/// Per-point result of the statistic used by remove_outliers.
std::vector<double> mean_knn_distances(const PointMatrix& points, std::size_t k);

/// Affinely maps timestamps so the first frame is 0 and the last 1.
/// Requires >= 2 frames with strictly increasing times.
Sequence normalize_timestamps(const Sequence& seq);

/// Checks the Sequence invariants (>= 2 frames, nonempty finite frames,
/// strictly increasing finite times). Throws DataError.
void validate_sequence(const Sequence& seq);

}  // namespace ng4d
