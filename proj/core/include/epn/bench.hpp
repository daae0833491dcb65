#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "epn/group.hpp"

namespace epn {

struct BenchOptions {
  std::vector<std::size_t> kernel_points{2, 4, 8, 16};
  std::vector<std::size_t> group_neighbors{2, 4, 8, 16};
  std::size_t channels = 8;  ///< C_in = C_out
  std::size_t points = 128;
  std::size_t k_max = 16;
  double radius = 0.4;
  GroupKind group = GroupKind::kIcosahedral;
  std::size_t runs = 5;
  std::uint64_t seed = 0;
  bool dry = false;  ///< count MACs only, no timing
};

struct BenchRow {
  std::size_t kernel_points = 0;
  std::size_t group_neighbors = 0;
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  std::size_t points = 0;
  std::size_t group_order = 0;
  std::uint64_t naive_macs = 0;
  std::uint64_t separable_macs = 0;
  std::uint64_t naive_gather = 0;
  std::uint64_t separable_gather = 0;
  double mac_ratio = 0.0;
  double expected_ratio = 0.0;  ///< K_p K_g / (K_p + K_g)
  bool ratio_exact = false;     ///< naive (K_p + K_g) == separable K_p K_g in integers
  std::optional<double> naive_ms;
  std::optional<double> separable_ms;
  std::optional<double> speedup;
};

struct BenchReport {
  BenchOptions options;
  std::vector<BenchRow> rows;
};

/// Naive 6D convolution versus point conv followed by group conv over the
/// cartesian product of kernel_points x group_neighbors.
BenchReport run_bench(const BenchOptions& options);

nlohmann::json to_json(const BenchReport& report);
std::string to_csv(const BenchReport& report);

}  // namespace epn
