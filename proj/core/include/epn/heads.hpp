#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "epn/geom.hpp"
#include "epn/group.hpp"

namespace epn {

/// Row-major |G| x D block of features indexed by rotation, after spatial pooling.
struct GroupFeatures {
  std::size_t group_size = 0;
  std::size_t channels = 0;
  std::vector<double> values;

  std::span<const double> row(std::size_t g) const { return {values.data() + g * channels, channels}; }
};

std::vector<double> softmax(std::span<const double> logits);

/// Softmax over rotations; nonnegative and sums to one.
struct AttentionVector {
  std::vector<double> weights;
};

AttentionVector attention_from_logits(std::span<const double> logits);

/// sum_g exp(a_g / T) F(g) / sum_g exp(a_g / T), evaluated with the max
/// subtracted. Throws if some a_g / T is not finite (T too small).
std::vector<double> ga_pooling(const GroupFeatures& features, const AttentionVector& a, double temperature);
/// The normalized weights exp(a_g / T) / Z used by ga_pooling.
std::vector<double> ga_pooling_weights(const AttentionVector& a, double temperature);

std::vector<double> pool_max(const GroupFeatures& features);
std::vector<double> pool_mean(const GroupFeatures& features);

/// Fully connected layer y = x W + b, with W stored in_dim x out_dim.
struct Dense {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::vector<double> weights;
  std::vector<double> bias;

  Dense() = default;
  Dense(std::size_t in, std::size_t out) : in_dim(in), out_dim(out), weights(in * out, 0.0), bias(out, 0.0) {}

  /// rows x in_dim -> rows x out_dim.
  std::vector<double> apply(std::span<const double> x, std::size_t rows) const;
};

/// Per-anchor classification logits and residual rotations.
/// residuals[g] * elements[g] is the rotation proposed by anchor g.
struct DetectionOutput {
  std::vector<double> logits;
  std::vector<UnitQuaternion> residuals;
};

struct DetectionLoss {
  double total = 0.0;
  double classification = 0.0;
  double regression = 0.0;
  std::size_t label = 0;
};

/// Cross-entropy against the anchor nearest to r_gt, plus
/// lambda * |R(residual_u) g_u - r_gt|_F^2 at that anchor only.
DetectionLoss detection_loss(const DetectionOutput& out, const Mat3& r_gt, const FiniteRotationGroup& group,
                             double lambda);

/// R(residual_u) * g_u for u = argmax logits (first index on ties).
Mat3 predict_rotation(const DetectionOutput& out, const FiniteRotationGroup& group);

/// Batch-hard triplet loss for invariant descriptors:
/// mean_i max(0, |a_i - p_i| - min_{j != i} |a_i - p_j| + margin).
double batch_hard_triplet(std::span<const double> anchors, std::span<const double> positives, std::size_t batch,
                          std::size_t dim, double margin);

std::vector<double> classify(std::span<const double> pooled, const Dense& fc);
double cross_entropy(std::span<const double> logits, std::size_t label);

/// 4x4 matrix M with q * p * conj(q) = M p for every quaternion p (w, x, y, z).
Eigen::Matrix4d conjugation_matrix(const UnitQuaternion& q);

}  // namespace epn
