#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "epn/group.hpp"

namespace epn {

struct AuditOptions {
  std::uint64_t seed = 0;
  GroupKind group = GroupKind::kTetrahedral;
  std::size_t points = 64;
  std::size_t channels = 8;
  std::size_t kernel_points = 8;
  std::size_t group_neighbors = 4;
  std::size_t k_max = 16;
  double radius = 0.5;
  /// Test hook: swaps two entries of every group-axis permutation.
  bool corrupt_permutation = false;
};

struct AuditCheck {
  std::string name;
  double deviation = 0.0;  ///< max-abs deviation (or a violation count)
  double tolerance = 0.0;
  bool passed() const { return deviation <= tolerance; }
};

struct AuditReport {
  AuditOptions options;
  std::vector<AuditCheck> checks;
  bool passed() const;
  const AuditCheck& check(const std::string& name) const;
};

/// Group axioms, rotation and translation equivariance of every convolution,
/// separability reductions, pooling invariance and head consistency.
AuditReport run_audit(const AuditOptions& options);

nlohmann::json to_json(const AuditReport& report);

}  // namespace epn
