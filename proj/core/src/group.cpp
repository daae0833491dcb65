#include "epn/group.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>

namespace epn {
namespace {

constexpr double kDedupTolRad = 1e-6;
constexpr double kTableTol = 1e-9;

std::array<Mat3, 2> generators(GroupKind kind) {
  const double pi = std::numbers::pi;
  switch (kind) {
    case GroupKind::kTetrahedral:
      return {axis_angle(Vec3::UnitZ(), pi), axis_angle(Vec3(1, 1, 1), 2 * pi / 3)};
    case GroupKind::kOctahedral:
      return {axis_angle(Vec3::UnitZ(), pi / 2), axis_angle(Vec3(1, 1, 1), 2 * pi / 3)};
    case GroupKind::kIcosahedral: {
      const double phi = 0.5 * (1.0 + std::sqrt(5.0));
      // 72 deg about the vertex (0, 1, phi); 180 deg about the midpoint of the
      // edge joining (0, 1, phi) and (0, -1, phi).
      return {axis_angle(Vec3(0, 1, phi), 2 * pi / 5), axis_angle(Vec3::UnitZ(), pi)};
    }
  }
  throw Error("unknown group kind");
}

std::array<long long, 9> rounded_key(const Mat3& m) {
  std::array<long long, 9> key{};
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) key[3 * r + c] = std::llround(m(r, c) * 1e6);
  }
  return key;
}

std::size_t find_element(const std::vector<Mat3>& elements, const Mat3& m, double tol) {
  for (std::size_t k = 0; k < elements.size(); ++k) {
    if ((elements[k] - m).cwiseAbs().maxCoeff() < tol) return k;
  }
  return elements.size();
}

}  // namespace

GroupKind parse_group_kind(std::string_view name) {
  if (name == "tetrahedral" || name == "tetra") return GroupKind::kTetrahedral;
  if (name == "octahedral" || name == "octa") return GroupKind::kOctahedral;
  if (name == "icosahedral" || name == "icosa") return GroupKind::kIcosahedral;
  throw Error("unknown group kind '" + std::string(name) + "' (expected tetra, octa or icosa)");
}

std::string to_string(GroupKind kind) {
  switch (kind) {
    case GroupKind::kTetrahedral: return "tetrahedral";
    case GroupKind::kOctahedral: return "octahedral";
    case GroupKind::kIcosahedral: return "icosahedral";
  }
  return "unknown";
}

std::size_t expected_order(GroupKind kind) {
  switch (kind) {
    case GroupKind::kTetrahedral: return 12;
    case GroupKind::kOctahedral: return 24;
    case GroupKind::kIcosahedral: return 60;
  }
  return 0;
}

FiniteRotationGroup::FiniteRotationGroup(GroupKind kind, std::vector<Mat3> elements)
    : kind_(kind), elements_(std::move(elements)) {
  const std::size_t n = elements_.size();
  if (n == 0) throw Error("group must have at least one element");
  if ((elements_[0] - Mat3::Identity()).cwiseAbs().maxCoeff() > kTableTol) {
    throw Error("element 0 must be the identity");
  }
  mul_.resize(n * n);
  inv_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t k = find_element(elements_, elements_[i] * elements_[j], kTableTol);
      if (k == n) throw Error("element set is not closed under multiplication");
      mul_[i * n + j] = k;
      if (k == 0) inv_[i] = j;
    }
  }
  angles_deg_.resize(n);
  for (std::size_t i = 0; i < n; ++i) angles_deg_[i] = angular_distance(Mat3::Identity(), elements_[i]);
  by_angle_.resize(n);
  std::iota(by_angle_.begin(), by_angle_.end(), std::size_t{0});
  // Angles rounded to 1e-6 deg so symmetric elements compare equal and fall back to index order.
  std::stable_sort(by_angle_.begin(), by_angle_.end(), [&](std::size_t a, std::size_t b) {
    return std::llround(angles_deg_[a] * 1e6) < std::llround(angles_deg_[b] * 1e6);
  });
}

std::vector<std::size_t> FiniteRotationGroup::identity_neighbors(std::size_t k) const {
  if (k < 1 || k > order()) throw Error("neighbor count must be in [1, |G|]");
  return {by_angle_.begin(), by_angle_.begin() + static_cast<std::ptrdiff_t>(k)};
}

std::vector<std::size_t> FiniteRotationGroup::neighbor_table(std::size_t k) const {
  const auto nbrs = identity_neighbors(k);
  std::vector<std::size_t> table(order() * k);
  for (std::size_t i = 0; i < order(); ++i) {
    for (std::size_t j = 0; j < k; ++j) table[i * k + j] = mul(i, inv(nbrs[j]));
  }
  return table;
}

FiniteRotationGroup build_group(GroupKind kind) {
  const auto gens = generators(kind);
  const std::size_t target = expected_order(kind);

  std::vector<Mat3> elements{Mat3::Identity()};
  auto contains = [&](const Mat3& m) {
    return std::any_of(elements.begin(), elements.end(),
                       [&](const Mat3& e) { return angular_distance_rad_unchecked(e, m) < kDedupTolRad; });
  };
  for (std::size_t frontier = 0; frontier < elements.size(); ++frontier) {
    for (const Mat3& gen : gens) {
      const Mat3 candidate = orthonormalize(elements[frontier] * gen);
      if (!contains(candidate)) {
        elements.push_back(candidate);
        if (elements.size() > target) {
          throw Error("group closure exceeded the expected order " + std::to_string(target) +
                      " for " + to_string(kind));
        }
      }
    }
  }
  if (elements.size() != target) {
    throw Error("group closure stopped at " + std::to_string(elements.size()) + " elements, expected " +
                std::to_string(target));
  }

  std::sort(elements.begin() + 1, elements.end(),
            [](const Mat3& a, const Mat3& b) { return rounded_key(a) < rounded_key(b); });
  return FiniteRotationGroup(kind, std::move(elements));
}

Permutation left_translation_permutation(const FiniteRotationGroup& group, std::size_t r_index) {
  if (r_index >= group.order()) throw Error("rotation index out of range");
  const std::size_t r_inv = group.inv(r_index);
  Permutation pi(group.order());
  for (std::size_t j = 0; j < group.order(); ++j) pi[j] = group.mul(r_inv, j);
  return pi;
}

NearestElement nearest_group_element(const FiniteRotationGroup& group, const Mat3& target) {
  NearestElement best;
  double best_angle = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < group.order(); ++j) {
    const double a = angular_distance(target, group.element(j));
    if (a < best_angle) {
      best_angle = a;
      best.index = j;
    }
  }
  best.residual = target * group.element(best.index).transpose();
  return best;
}

}  // namespace epn
