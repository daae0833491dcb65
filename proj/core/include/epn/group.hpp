#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "epn/geom.hpp"

namespace epn {

enum class GroupKind { kTetrahedral, kOctahedral, kIcosahedral };

/// Accepts "tetrahedral"/"tetra", "octahedral"/"octa", "icosahedral"/"icosa".
GroupKind parse_group_kind(std::string_view name);
std::string to_string(GroupKind kind);
std::size_t expected_order(GroupKind kind);

using Permutation = std::vector<std::size_t>;

/// A finite rotation subgroup of SO(3) with precomputed Cayley tables.
///
/// Element 0 is the identity. mul(i, j) is the index of elements[i] * elements[j].
/// The object is immutable after construction.
class FiniteRotationGroup {
 public:
  /// Builds from raw parts; validates that the tables describe a group.
  FiniteRotationGroup(GroupKind kind, std::vector<Mat3> elements);

  GroupKind kind() const { return kind_; }
  std::size_t order() const { return elements_.size(); }
  const std::vector<Mat3>& elements() const { return elements_; }
  const Mat3& element(std::size_t i) const { return elements_.at(i); }

  std::size_t mul(std::size_t i, std::size_t j) const { return mul_[i * order() + j]; }
  std::size_t inv(std::size_t i) const { return inv_[i]; }

  /// Indices of the k elements closest to the identity, sorted by
  /// (angle, index). Entry 0 is the identity.
  std::vector<std::size_t> identity_neighbors(std::size_t k) const;

  /// |G| x k table: row i lists elements[i] * n_j^{-1} for the identity
  /// neighbors n_j, so each row is sorted by angle from elements[i].
  std::vector<std::size_t> neighbor_table(std::size_t k) const;

  /// Angle of element i from the identity, degrees.
  double angle_deg(std::size_t i) const { return angles_deg_[i]; }

 private:
  GroupKind kind_;
  std::vector<Mat3> elements_;
  std::vector<std::size_t> mul_;
  std::vector<std::size_t> inv_;
  std::vector<double> angles_deg_;
  std::vector<std::size_t> by_angle_;
};

/// Closure of a standard generator pair, deduplicated at 1e-6 rad,
/// re-orthonormalized and ordered (identity first, then lexicographic on
/// entries rounded to 1e-6). Deterministic.
FiniteRotationGroup build_group(GroupKind kind);

/// pi[j] = index of r^{-1} * g_j. Permuting a feature map's group axis with
/// F'[:, j] = F[:, pi[j]] realizes the action of rotating the input by r.
Permutation left_translation_permutation(const FiniteRotationGroup& group, std::size_t r_index);

struct NearestElement {
  std::size_t index = 0;
  Mat3 residual = Mat3::Identity();  ///< residual * elements[index] == target
};

/// Nearest group element by geodesic angle, ties broken by smallest index.
NearestElement nearest_group_element(const FiniteRotationGroup& group, const Mat3& target);

}  // namespace epn
