#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "epn/group.hpp"

namespace epn {

enum class PoolingKind { kAttentive, kMax, kMean };
enum class PoseHeadKind { kDetection, kQuaternion };

PoolingKind parse_pooling(std::string_view name);
std::string to_string(PoolingKind kind);
PoseHeadKind parse_pose_head(std::string_view name);
std::string to_string(PoseHeadKind kind);

/// Hyperparameters for the toy experiments. Architecture defaults are
/// desk-scale choices, not values taken from any published model.
struct TrainConfig {
  // optimizer
  double lr = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::size_t batch_size = 8;
  std::size_t iterations = 400;
  std::size_t decay_every = 150;  ///< iterations per halving; 0 = constant
  double decay_factor = 0.5;
  std::uint64_t seed = 1;

  // network
  GroupKind group = GroupKind::kIcosahedral;
  std::size_t points = 128;
  std::size_t stride = 2;
  std::vector<double> radii{0.4, 0.8};
  std::vector<std::size_t> k_max{16, 24};
  std::vector<std::size_t> channels{8, 16};
  std::size_t kernel_points = 8;
  double sigma_ratio = 0.6;  ///< kernel bandwidth as a fraction of the level radius
  std::size_t group_neighbors = 6;
  std::size_t hidden = 32;

  // heads and losses
  double lambda = 1.0;       ///< regression (pose) or attention-supervision (cls) weight
  double temperature = 1.0;  ///< GA pooling temperature
  double margin = 1.0;       ///< triplet margin
  PoolingKind pooling = PoolingKind::kAttentive;
  /// Variants trained by the classification task; "pooling = all" selects all three.
  std::vector<PoolingKind> pooling_variants{PoolingKind::kAttentive, PoolingKind::kMax, PoolingKind::kMean};
  PoseHeadKind pose_head = PoseHeadKind::kDetection;
  bool supervise_attention = true;

  // evaluation
  std::size_t eval_rotations = 256;
  std::size_t eval_per_class = 50;
  /// Fresh batches used to re-estimate batch-norm statistics after training.
  std::size_t bn_calibration_batches = 16;

  std::size_t levels() const { return radii.size(); }
  /// Throws on inconsistent or non-positive settings.
  void validate() const;
};

/// Applies "key = value" lines ('#' comments) onto `base`. Unknown keys throw.
TrainConfig parse_train_config(std::string_view text, TrainConfig base = {});
TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base = {});

}  // namespace epn
