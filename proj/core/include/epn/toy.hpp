#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "epn/config.hpp"
#include "epn/group.hpp"
#include "epn/params.hpp"
#include "epn/random.hpp"
#include "epn/sampling.hpp"

namespace epn {

/// Three orthogonal bars of lengths 1.0, 0.65 and 0.35 meeting at a corner,
/// Gaussian jitter of std `jitter`, centered and scaled to unit max norm.
/// No nontrivial rotation maps it onto itself.
PointCloud bar_triple_shape(std::size_t points, double jitter, Rng& rng);

/// Two orthogonal bars of lengths 1.0 and 0.9 in the xy-plane, same normalization.
PointCloud l_shape(std::size_t points, double jitter, Rng& rng);

PointCloud rotate_cloud(const PointCloud& cloud, const Mat3& r);
PointCloud translate_cloud(const PointCloud& cloud, const Vec3& t);

struct ErrorSummary {
  double mean = 0.0;
  double median = 0.0;
  double max = 0.0;
};
ErrorSummary summarize_errors(std::vector<double> errors_deg);

/// Predicts the rotation that carries the canonical shape onto the given cloud.
using PosePredictor = std::function<Mat3(const PointCloud&)>;

/// Angular error (degrees) of `predict` on shape rotated by each of `rotations`.
std::vector<double> pose_errors(const PosePredictor& predict, const PointCloud& shape,
                                std::span<const Mat3> rotations);

struct PoseReport {
  TrainConfig config;
  std::size_t parameters = 0;
  ErrorSummary untrained;
  ErrorSummary trained;
  std::vector<double> losses;
};

struct PoseRun {
  PoseReport report;
  ParameterSet state;  ///< trained parameters and batch-norm statistics
};

/// Trains the configured pose head on random rotations of one fixed
/// bar-triple shape and evaluates on held-out rotations.
PoseRun toy_pose_task(const TrainConfig& config);

/// Canonical shape per class label.
using ClassShapeFn = std::function<PointCloud(std::size_t label, Rng& rng)>;

/// Class 0: bar triple, class 1: L-shape; fresh jitter per sample.
ClassShapeFn default_class_shapes(std::size_t points);

struct ClsVariantReport {
  PoolingKind pooling = PoolingKind::kAttentive;
  std::size_t parameters = 0;
  double untrained_accuracy = 0.0;
  double accuracy = 0.0;
  std::vector<std::size_t> confidence_histogram;  ///< max attention weight, 10 bins on [0, 1]; attentive only
  std::vector<double> losses;
};

struct ClsRun {
  TrainConfig config;
  std::vector<ClsVariantReport> variants;
  std::vector<ParameterSet> states;
};

/// Trains one classifier per entry of config.pooling_variants.
ClsRun toy_cls_task(const TrainConfig& config, const ClassShapeFn& shapes);
ClsRun toy_cls_task(const TrainConfig& config);

nlohmann::json to_json(const TrainConfig& config);
nlohmann::json to_json(const PoseReport& report);
nlohmann::json to_json(const ClsRun& run);

}  // namespace epn
