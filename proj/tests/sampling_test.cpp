#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

#include <gtest/gtest.h>

#include "epn/random.hpp"
#include "epn/sampling.hpp"
#include "test_support.hpp"

namespace epn {
namespace {

using testing::random_cloud;

PointCloud cloud_of(std::vector<Vec3> pts) { return PointCloud{std::move(pts), {}}; }

// Recomputes every min-distance from scratch at each step.
std::vector<std::size_t> brute_force_fps(const std::vector<Vec3>& pts, std::size_t m, std::size_t seed) {
  std::vector<std::size_t> chosen{seed};
  while (chosen.size() < m) {
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      double d = std::numeric_limits<double>::infinity();
      for (std::size_t c : chosen) d = std::min(d, (pts[i] - pts[c]).squaredNorm());
      if (d > best_d) {
        best_d = d;
        best = i;
      }
    }
    chosen.push_back(best);
  }
  return chosen;
}

// Exhaustive scan, nearest first, ties by index.
std::vector<std::size_t> brute_force_ball(const std::vector<Vec3>& pts, const Vec3& c, double r, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> in;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double d = (pts[i] - c).norm();
    if (d <= r) in.emplace_back(d, i);
  }
  std::sort(in.begin(), in.end());
  std::vector<std::size_t> out(k, pts.size());
  for (std::size_t j = 0; j < std::min(k, in.size()); ++j) out[j] = in[j].second;
  return out;
}

TEST(Fps, CollinearPicksEndpoints) {
  const auto c = cloud_of({{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}});
  EXPECT_EQ(farthest_point_sample(c, 2), (std::vector<std::size_t>{0, 3}));
}

TEST(Fps, FullSampleIsPermutation) {
  Rng rng(1);
  const auto c = cloud_of(random_cloud(20, rng));
  auto idx = farthest_point_sample(c, 20);
  std::sort(idx.begin(), idx.end());
  std::vector<std::size_t> all(20);
  std::iota(all.begin(), all.end(), 0);
  EXPECT_EQ(idx, all);
}

TEST(Fps, MatchesBruteForce) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const auto pts = random_cloud(32, rng);
    EXPECT_EQ(farthest_point_sample(cloud_of(pts), 8, seed % 32), brute_force_fps(pts, 8, seed % 32));
  }
}

TEST(Fps, RejectsOversample) {
  Rng rng(2);
  EXPECT_THROW(farthest_point_sample(cloud_of(random_cloud(4, rng)), 5), Error);
}

TEST(BallQuery, CenterIsItsOwnFirstNeighbor) {
  Rng rng(3);
  const auto pts = random_cloud(40, rng);
  const auto t = ball_query(cloud_of(pts), pts, 0.3, 8);
  for (std::size_t m = 0; m < pts.size(); ++m) EXPECT_EQ(t.row(m)[0], m);
}

TEST(BallQuery, FarCenterIsAllShadow) {
  Rng rng(4);
  const auto pts = random_cloud(16, rng);
  const std::vector<Vec3> far{Vec3(10, 10, 10)};
  const auto t = ball_query(cloud_of(pts), far, 0.5, 4);
  EXPECT_EQ(t.counts[0], 0u);
  for (std::size_t v : t.row(0)) EXPECT_TRUE(t.is_shadow(v));
}

TEST(BallQuery, MatchesExhaustiveScan) {
  Rng rng(5);
  const auto pts = random_cloud(64, rng);
  const auto centers = random_cloud(20, rng);
  const auto t = ball_query(cloud_of(pts), centers, 0.3, 16);
  for (std::size_t m = 0; m < centers.size(); ++m) {
    const auto oracle = brute_force_ball(pts, centers[m], 0.3, 16);
    const auto row = t.row(m);
    EXPECT_TRUE(std::equal(row.begin(), row.end(), oracle.begin()));
    for (std::size_t j = 0; j < t.k_max; ++j) {
      if (j < t.counts[m]) {
        EXPECT_LE((pts[row[j]] - centers[m]).norm(), 0.3 + 1e-12);
      } else {
        EXPECT_TRUE(t.is_shadow(row[j]));
      }
    }
  }
}

TEST(BallQuery, RotationAndTranslationKeepTables) {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const auto pts = random_cloud(64, rng);
    const Mat3 r = rng.rotation();
    const Vec3 shift(rng.normal(), rng.normal(), rng.normal());
    std::vector<Vec3> rotated, moved;
    for (const auto& p : pts) {
      rotated.push_back(r * p);
      moved.push_back(p + shift);
    }
    const auto base = ball_query(cloud_of(pts), pts, 0.4, 12);
    EXPECT_EQ(ball_query(cloud_of(rotated), rotated, 0.4, 12).neighbors, base.neighbors);
    EXPECT_EQ(ball_query(cloud_of(moved), moved, 0.4, 12).neighbors, base.neighbors);
  }
}

TEST(BallQuery, ExtraShadowSlots) {
  Rng rng(7);
  const auto pts = random_cloud(10, rng);
  const auto t = ball_query(cloud_of(pts), pts, 0.5, 4).with_extra_shadow_slots(3);
  EXPECT_EQ(t.k_max, 7u);
  for (std::size_t m = 0; m < t.centers(); ++m)
    for (std::size_t j = 4; j < 7; ++j) EXPECT_TRUE(t.is_shadow(t.row(m)[j]));
}

TEST(Hierarchy, IdentityLevel) {
  Rng rng(8);
  const auto c = cloud_of(random_cloud(30, rng));
  const std::vector<double> radii{0.5};
  const std::vector<std::size_t> k{8};
  const auto h = build_hierarchy(c, 1, 1, radii, k);
  ASSERT_EQ(h.size(), 1u);
  auto s = h[0].sampled;
  std::sort(s.begin(), s.end());
  std::vector<std::size_t> all(30);
  std::iota(all.begin(), all.end(), 0);
  EXPECT_EQ(s, all);
}

TEST(Hierarchy, StridedSizesAndNeighborhoods) {
  Rng rng(9);
  const auto c = cloud_of(random_cloud(1024, rng));
  const std::vector<double> radii{0.2, 0.3, 0.4, 0.5, 0.6};
  const std::vector<std::size_t> k{8, 8, 8, 8, 8};
  const auto h = build_hierarchy(c, 5, 2, radii, k);
  const std::vector<std::size_t> sizes{512, 256, 128, 64, 32};
  std::vector<Vec3> prev = c.points;
  for (std::size_t l = 0; l < 5; ++l) {
    EXPECT_EQ(h[l].points.size(), sizes[l]);
    for (std::size_t m = 0; m < sizes[l]; ++m) {
      const auto oracle = brute_force_ball(prev, h[l].points[m], radii[l], k[l]);
      const auto row = h[l].neighborhoods.row(m);
      EXPECT_TRUE(std::equal(row.begin(), row.end(), oracle.begin()));
    }
    prev = h[l].points;
  }
}

TEST(Hierarchy, RejectsMismatchedLevels) {
  Rng rng(10);
  const auto c = cloud_of(random_cloud(8, rng));
  const std::vector<double> radii{0.5};
  const std::vector<std::size_t> k{4, 4};
  EXPECT_THROW(build_hierarchy(c, 2, 2, radii, k), Error);
}

TEST(PointCloudIo, TextAndBinaryRoundTrip) {
  Rng rng(11);
  PointCloud c = cloud_of(random_cloud(25, rng));
  const auto dir = std::filesystem::temp_directory_path();
  const auto bin = dir / "epn_sampling_test.epnc";
  const auto txt = dir / "epn_sampling_test.xyz";
  write_point_cloud_binary(c, bin);
  write_point_cloud_text(c, txt);
  const auto b = read_point_cloud(bin);
  const auto t = read_point_cloud(txt);
  ASSERT_EQ(b.size(), c.size());
  ASSERT_EQ(t.size(), c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    EXPECT_EQ(b.points[i], c.points[i]);
    EXPECT_EQ(t.points[i], c.points[i]);
  }
  std::filesystem::remove(bin);
  std::filesystem::remove(txt);
}

TEST(PointCloudIo, TextCommentsAndLabels) {
  const auto path = std::filesystem::temp_directory_path() / "epn_sampling_labels.xyz";
  {
    std::ofstream f(path);
    f << "# header\n0 0 0 1\n1 2 3 4  # trailing\n\n";
  }
  const auto c = read_point_cloud(path);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c.labels, (std::vector<std::int64_t>{1, 4}));
  EXPECT_EQ(c.points[1], Vec3(1, 2, 3));
  std::filesystem::remove(path);
}

TEST(PointCloudIo, MalformedInputThrows) {
  const auto path = std::filesystem::temp_directory_path() / "epn_sampling_bad.xyz";
  {
    std::ofstream f(path);
    f << "0 0\n";
  }
  EXPECT_THROW(read_point_cloud(path), Error);
  std::filesystem::remove(path);
  EXPECT_THROW(read_point_cloud(path), Error);
}

}  // namespace
}  // namespace epn
