#include "epn/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "binary_io.hpp"

namespace epn {

void PointCloud::validate() const {
  if (points.empty()) throw Error("point cloud is empty");
  for (const auto& p : points) {
    if (!is_finite(p)) throw Error("point cloud has non-finite coordinates");
  }
  if (!labels.empty() && labels.size() != points.size()) throw Error("label count does not match point count");
}

NeighborhoodTable NeighborhoodTable::with_extra_shadow_slots(std::size_t extra) const {
  NeighborhoodTable out = *this;
  out.k_max = k_max + extra;
  out.neighbors.assign(centers() * out.k_max, sentinel());
  for (std::size_t m = 0; m < centers(); ++m) {
    std::copy_n(neighbors.begin() + static_cast<std::ptrdiff_t>(m * k_max), k_max,
                out.neighbors.begin() + static_cast<std::ptrdiff_t>(m * out.k_max));
  }
  return out;
}

std::vector<std::size_t> farthest_point_sample(const PointCloud& cloud, std::size_t m, std::size_t seed_index) {
  const std::size_t n = cloud.size();
  if (m < 1 || m > n) throw Error("farthest_point_sample: need 1 <= M <= N");
  if (seed_index >= n) throw Error("farthest_point_sample: seed index out of range");

  std::vector<std::size_t> selected;
  selected.reserve(m);
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  std::vector<bool> taken(n, false);
  std::size_t current = seed_index;
  for (std::size_t step = 0; step < m; ++step) {
    selected.push_back(current);
    taken[current] = true;
    const Vec3& c = cloud.points[current];
    std::size_t next = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      min_d2[i] = std::min(min_d2[i], (cloud.points[i] - c).squaredNorm());
      if (!taken[i] && min_d2[i] > best) {
        best = min_d2[i];
        next = i;
      }
    }
    current = next;
  }
  return selected;
}

NeighborhoodTable ball_query(const PointCloud& source, std::span<const Vec3> centers, double radius,
                             std::size_t k_max) {
  if (!(radius > 0.0)) throw Error("ball_query: radius must be positive");
  if (k_max < 1) throw Error("ball_query: k_max must be at least 1");

  NeighborhoodTable table;
  table.k_max = k_max;
  table.radius = radius;
  table.source_size = source.size();
  table.neighbors.assign(centers.size() * k_max, source.size());
  table.counts.assign(centers.size(), 0);

  const double r2 = radius * radius;
  std::vector<std::pair<double, std::size_t>> hits;
  for (std::size_t m = 0; m < centers.size(); ++m) {
    hits.clear();
    for (std::size_t i = 0; i < source.size(); ++i) {
      const double d2 = (source.points[i] - centers[m]).squaredNorm();
      if (d2 <= r2) hits.emplace_back(d2, i);
    }
    const std::size_t keep = std::min(k_max, hits.size());
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep), hits.end());
    for (std::size_t k = 0; k < keep; ++k) table.neighbors[m * k_max + k] = hits[k].second;
    table.counts[m] = keep;
  }
  return table;
}

std::vector<HierarchyLevel> build_hierarchy(const PointCloud& cloud, std::size_t levels, std::size_t stride,
                                            std::span<const double> radii, std::span<const std::size_t> k_max) {
  if (stride < 1) throw Error("build_hierarchy: stride must be >= 1");
  if (radii.size() != levels || k_max.size() != levels) {
    throw Error("build_hierarchy: need one radius and one k_max per level");
  }
  cloud.validate();

  std::vector<HierarchyLevel> out;
  PointCloud previous{cloud.points, {}};
  for (std::size_t l = 0; l < levels; ++l) {
    const std::size_t m = (previous.size() + stride - 1) / stride;
    if (m == 0) throw Error("build_hierarchy: level size reached zero");
    HierarchyLevel level;
    level.sampled = farthest_point_sample(previous, m, 0);
    level.points.reserve(m);
    for (std::size_t idx : level.sampled) level.points.push_back(previous.points[idx]);
    level.neighborhoods = ball_query(previous, level.points, radii[l], k_max[l]);
    level.neighborhoods.center_indices = level.sampled;
    previous.points = level.points;
    out.push_back(std::move(level));
  }
  return out;
}

PointCloud read_point_cloud_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  PointCloud cloud;
  bool any_label = false;
  bool any_unlabeled = false;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    double x, y, z;
    if (!(fields >> x)) continue;  // blank line
    if (!(fields >> y >> z)) throw Error(path.string() + ":" + std::to_string(line_no) + ": expected x y z");
    cloud.points.emplace_back(x, y, z);
    std::int64_t label;
    if (fields >> label) {
      any_label = true;
      cloud.labels.push_back(label);
    } else {
      any_unlabeled = true;
    }
    std::string rest;
    if (fields >> rest) throw Error(path.string() + ":" + std::to_string(line_no) + ": trailing fields");
  }
  if (any_label && any_unlabeled) throw Error(path.string() + ": labels must be given for all points or none");
  cloud.validate();
  return cloud;
}

void write_point_cloud_text(const PointCloud& cloud, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(17);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    out << p.x() << ' ' << p.y() << ' ' << p.z();
    if (!cloud.labels.empty()) out << ' ' << cloud.labels[i];
    out << '\n';
  }
}

PointCloud read_point_cloud_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  detail::expect_magic(in, "EPNC");
  const std::uint32_t n = detail::read_u32(in);
  PointCloud cloud;
  cloud.points.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const double x = detail::read_f64(in);
    const double y = detail::read_f64(in);
    const double z = detail::read_f64(in);
    cloud.points.emplace_back(x, y, z);
  }
  cloud.validate();
  return cloud;
}

void write_point_cloud_binary(const PointCloud& cloud, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write("EPNC", 4);
  detail::write_u32(out, static_cast<std::uint32_t>(cloud.size()));
  for (const auto& p : cloud.points) {
    detail::write_f64(out, p.x());
    detail::write_f64(out, p.y());
    detail::write_f64(out, p.z());
  }
}

PointCloud read_point_cloud(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() == 4 && std::string_view(magic, 4) == "EPNC") return read_point_cloud_binary(path);
  return read_point_cloud_text(path);
}

}  // namespace epn
