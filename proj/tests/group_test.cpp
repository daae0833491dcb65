#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include <gtest/gtest.h>

#include "epn/group.hpp"
#include "epn/group_json.hpp"
#include "epn/random.hpp"

namespace epn {
namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

// Largest nearest-element angle observed over 10^4 Haar rotations drawn from Rng(2024).
constexpr double kIcosaEmpiricalCovering = 43.976232672367843;
// Angle of the deep holes of the icosahedral group.
constexpr double kIcosaCoveringRadius = 44.47751218592985;

class AllGroups : public ::testing::TestWithParam<GroupKind> {};

TEST_P(AllGroups, OrderMatchesKind) {
  const auto g = build_group(GetParam());
  EXPECT_EQ(g.order(), expected_order(GetParam()));
  EXPECT_EQ(g.element(0), Mat3::Identity());
}

TEST_P(AllGroups, TablesMatchMatrixProducts) {
  const auto g = build_group(GetParam());
  const std::size_t n = g.order();
  for (std::size_t i = 0; i < n; ++i) {
    EXPECT_LT(orthogonality_defect(g.element(i)), 1e-12);
    EXPECT_EQ(g.mul(i, g.inv(i)), 0u);
    EXPECT_EQ(g.mul(g.inv(i), i), 0u);
    for (std::size_t j = 0; j < n; ++j) {
      const Mat3 prod = g.element(i) * g.element(j);
      EXPECT_LT((prod - g.element(g.mul(i, j))).cwiseAbs().maxCoeff(), 1e-9);
    }
  }
}

TEST_P(AllGroups, RowsAndColumnsArePermutations) {
  const auto g = build_group(GetParam());
  const std::size_t n = g.order();
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<bool> row(n, false), col(n, false);
    for (std::size_t j = 0; j < n; ++j) {
      row[g.mul(i, j)] = true;
      col[g.mul(j, i)] = true;
    }
    EXPECT_TRUE(std::all_of(row.begin(), row.end(), [](bool b) { return b; }));
    EXPECT_TRUE(std::all_of(col.begin(), col.end(), [](bool b) { return b; }));
  }
}

TEST_P(AllGroups, AssociativityExhaustive) {
  const auto g = build_group(GetParam());
  const std::size_t n = g.order();
  std::size_t violations = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < n; ++k) violations += g.mul(g.mul(i, j), k) != g.mul(i, g.mul(j, k)) ? 1 : 0;
  EXPECT_EQ(violations, 0u);
}

TEST_P(AllGroups, RebuildIsBitIdentical) {
  const auto a = build_group(GetParam());
  const auto b = build_group(GetParam());
  for (std::size_t i = 0; i < a.order(); ++i) EXPECT_EQ(a.element(i), b.element(i));
}

TEST_P(AllGroups, NeighborTableSortedByAngle) {
  const auto g = build_group(GetParam());
  const std::size_t k = std::min<std::size_t>(g.order(), 8);
  const auto ids = g.identity_neighbors(k);
  ASSERT_EQ(ids.size(), k);
  EXPECT_EQ(ids[0], 0u);
  for (std::size_t j = 1; j < k; ++j) EXPECT_LE(g.angle_deg(ids[j - 1]), g.angle_deg(ids[j]) + 1e-9);
  const auto table = g.neighbor_table(k);
  for (std::size_t i = 0; i < g.order(); ++i) {
    EXPECT_EQ(table[i * k], i);
    for (std::size_t j = 1; j < k; ++j) {
      EXPECT_LE(angular_distance(g.element(i), g.element(table[i * k + j - 1])),
                angular_distance(g.element(i), g.element(table[i * k + j])) + 1e-9);
    }
  }
}

TEST_P(AllGroups, LeftTranslationIsBijectionWithInverse) {
  const auto g = build_group(GetParam());
  for (std::size_t r = 0; r < g.order(); ++r) {
    const auto pi = left_translation_permutation(g, r);
    const auto pinv = left_translation_permutation(g, g.inv(r));
    std::vector<std::size_t> sorted = pi;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t j = 0; j < g.order(); ++j) {
      EXPECT_EQ(sorted[j], j);
      EXPECT_EQ(pi[pinv[j]], j);
    }
  }
  const auto id = left_translation_permutation(g, 0);
  for (std::size_t j = 0; j < g.order(); ++j) EXPECT_EQ(id[j], j);
}

TEST_P(AllGroups, JsonRoundTripIsExact) {
  const auto g = build_group(GetParam());
  const auto back = group_from_json(nlohmann::json::parse(to_json(g).dump()));
  ASSERT_EQ(back.order(), g.order());
  for (std::size_t i = 0; i < g.order(); ++i) {
    EXPECT_EQ(back.element(i), g.element(i));
    for (std::size_t j = 0; j < g.order(); ++j) EXPECT_EQ(back.mul(i, j), g.mul(i, j));
  }
}

INSTANTIATE_TEST_SUITE_P(Kinds, AllGroups,
                         ::testing::Values(GroupKind::kTetrahedral, GroupKind::kOctahedral, GroupKind::kIcosahedral),
                         [](const auto& info) { return to_string(info.param); });

TEST(Group, ParseKindAliases) {
  EXPECT_EQ(parse_group_kind("icosa"), GroupKind::kIcosahedral);
  EXPECT_EQ(parse_group_kind("tetrahedral"), GroupKind::kTetrahedral);
  EXPECT_EQ(parse_group_kind("octa"), GroupKind::kOctahedral);
  EXPECT_THROW(parse_group_kind("dodeca"), Error);
}

TEST(Group, IcosahedralAngleHistogram) {
  const auto g = build_group(GroupKind::kIcosahedral);
  std::map<long, int> hist;
  for (const auto& r : g.elements()) {
    const Eigen::AngleAxisd aa(r);
    hist[std::lround(aa.angle() / kDeg)] += 1;
  }
  const std::map<long, int> expected{{0, 1}, {72, 12}, {120, 20}, {144, 12}, {180, 15}};
  EXPECT_EQ(hist, expected);
}

// Cycle lengths of a permutation by explicit traversal.
std::vector<std::size_t> cycle_lengths(const Permutation& p) {
  std::vector<bool> seen(p.size(), false);
  std::vector<std::size_t> out;
  for (std::size_t s = 0; s < p.size(); ++s) {
    if (seen[s]) continue;
    std::size_t len = 0;
    for (std::size_t j = s; !seen[j]; j = p[j]) {
      seen[j] = true;
      ++len;
    }
    out.push_back(len);
  }
  return out;
}

TEST(Group, FiveFoldElementsHaveFiveCycles) {
  const auto g = build_group(GroupKind::kIcosahedral);
  int tested = 0;
  for (std::size_t r = 0; r < g.order(); ++r) {
    if (std::abs(g.angle_deg(r) - 72.0) > 1e-6) continue;
    ++tested;
    for (std::size_t len : cycle_lengths(left_translation_permutation(g, r))) EXPECT_EQ(5 % len, 0u);
  }
  EXPECT_EQ(tested, 12);
}

TEST(NearestElement, IdentityAndExactElements) {
  const auto g = build_group(GroupKind::kIcosahedral);
  const auto id = nearest_group_element(g, Mat3::Identity());
  EXPECT_EQ(id.index, 0u);
  EXPECT_LT((id.residual - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-12);
  for (std::size_t j = 0; j < g.order(); ++j) {
    const auto n = nearest_group_element(g, g.element(j));
    EXPECT_EQ(n.index, j);
    EXPECT_NEAR(angular_distance(n.residual, Mat3::Identity()), 0.0, 1e-6);
  }
}

TEST(NearestElement, SmallPerturbationMatchesBruteForce) {
  const auto g = build_group(GroupKind::kIcosahedral);
  Rng rng(13);
  for (std::size_t j = 0; j < g.order(); ++j) {
    const Vec3 axis(rng.normal(), rng.normal(), rng.normal());
    const Mat3 target = axis_angle(axis, 8.0 * kDeg) * g.element(j);
    std::size_t best = 0;
    for (std::size_t i = 1; i < g.order(); ++i) {
      if (angular_distance(target, g.element(i)) < angular_distance(target, g.element(best))) best = i;
    }
    const auto n = nearest_group_element(g, target);
    EXPECT_EQ(n.index, j);
    EXPECT_EQ(best, j);
    EXPECT_LT((n.residual * g.element(n.index) - target).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(NearestElement, CoveringRadius) {
  const auto g = build_group(GroupKind::kIcosahedral);
  Rng rng(2024);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const Mat3 r = rng.rotation();
    worst = std::max(worst, angular_distance(r, g.element(nearest_group_element(g, r).index)));
  }
  EXPECT_LE(worst, kIcosaCoveringRadius + 1e-9);
  EXPECT_NEAR(worst, kIcosaEmpiricalCovering, 1e-9);
}

}  // namespace
}  // namespace epn
