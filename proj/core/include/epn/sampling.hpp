#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "epn/geom.hpp"

namespace epn {

struct PointCloud {
  std::vector<Vec3> points;
  std::vector<std::int64_t> labels;  ///< empty, or one per point

  std::size_t size() const { return points.size(); }
  /// Throws unless N >= 1, coordinates are finite and labels (if any) match.
  void validate() const;
};

/// Ball-query result. Row m holds up to k_max neighbor indices of center m,
/// nearest first; unused slots hold the shadow sentinel `source_size`.
struct NeighborhoodTable {
  std::vector<std::size_t> center_indices;  ///< into the source cloud, when centers come from it
  std::vector<std::size_t> neighbors;       ///< centers() x k_max
  std::vector<std::size_t> counts;
  std::size_t k_max = 0;
  std::size_t source_size = 0;
  double radius = 0.0;

  std::size_t centers() const { return counts.size(); }
  std::size_t sentinel() const { return source_size; }
  std::span<const std::size_t> row(std::size_t m) const { return {neighbors.data() + m * k_max, k_max}; }
  bool is_shadow(std::size_t index) const { return index == source_size; }

  /// Appends `extra` shadow columns to every row.
  NeighborhoodTable with_extra_shadow_slots(std::size_t extra) const;
};

/// Greedy max-min subset, starting at `seed_index`; ties go to the smallest index.
std::vector<std::size_t> farthest_point_sample(const PointCloud& cloud, std::size_t m,
                                               std::size_t seed_index = 0);

NeighborhoodTable ball_query(const PointCloud& source, std::span<const Vec3> centers, double radius,
                             std::size_t k_max);

struct HierarchyLevel {
  std::vector<std::size_t> sampled;  ///< indices into the previous level's points
  std::vector<Vec3> points;          ///< coordinates of the sampled centers
  NeighborhoodTable neighborhoods;   ///< centers = sampled, source = previous level
};

/// Strided hierarchy: level l centers are FPS over level l-1 points with
/// ceil(M/stride) samples, neighborhoods query the level l-1 cloud.
std::vector<HierarchyLevel> build_hierarchy(const PointCloud& cloud, std::size_t levels, std::size_t stride,
                                            std::span<const double> radii, std::span<const std::size_t> k_max);

// Point-cloud files. Text: "x y z [label]" per line, '#' comments.
// Binary: "EPNC", u32 LE count, then count * 3 LE float64.
PointCloud read_point_cloud_text(const std::filesystem::path& path);
void write_point_cloud_text(const PointCloud& cloud, const std::filesystem::path& path);
PointCloud read_point_cloud_binary(const std::filesystem::path& path);
void write_point_cloud_binary(const PointCloud& cloud, const std::filesystem::path& path);
/// Dispatches on the "EPNC" magic.
PointCloud read_point_cloud(const std::filesystem::path& path);

}  // namespace epn
