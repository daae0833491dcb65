#include "epn/heads.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace epn {

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw Error("softmax of an empty vector");
  const double mx = *std::max_element(logits.begin(), logits.end());
  if (!std::isfinite(mx)) throw Error("softmax: non-finite logits");
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

AttentionVector attention_from_logits(std::span<const double> logits) { return {softmax(logits)}; }

std::vector<double> ga_pooling_weights(const AttentionVector& a, double temperature) {
  if (!(temperature > 0.0)) throw Error("ga_pooling: temperature must be positive");
  std::vector<double> scaled(a.weights.size());
  for (std::size_t g = 0; g < scaled.size(); ++g) {
    scaled[g] = a.weights[g] / temperature;
    if (!std::isfinite(scaled[g])) {
      throw Error("ga_pooling: exp(a/T) is not finite; use a larger temperature");
    }
  }
  return softmax(scaled);
}

std::vector<double> ga_pooling(const GroupFeatures& features, const AttentionVector& a, double temperature) {
  if (a.weights.size() != features.group_size) throw Error("ga_pooling: attention size does not match |G|");
  const auto w = ga_pooling_weights(a, temperature);
  std::vector<double> out(features.channels, 0.0);
  for (std::size_t g = 0; g < features.group_size; ++g) {
    const auto row = features.row(g);
    for (std::size_t c = 0; c < features.channels; ++c) out[c] += w[g] * row[c];
  }
  return out;
}

std::vector<double> pool_max(const GroupFeatures& features) {
  if (features.group_size == 0) throw Error("pool_max over an empty group axis");
  std::vector<double> out(features.row(0).begin(), features.row(0).end());
  for (std::size_t g = 1; g < features.group_size; ++g) {
    const auto row = features.row(g);
    for (std::size_t c = 0; c < features.channels; ++c) out[c] = std::max(out[c], row[c]);
  }
  return out;
}

std::vector<double> pool_mean(const GroupFeatures& features) {
  if (features.group_size == 0) throw Error("pool_mean over an empty group axis");
  std::vector<double> out(features.channels, 0.0);
  for (std::size_t g = 0; g < features.group_size; ++g) {
    const auto row = features.row(g);
    for (std::size_t c = 0; c < features.channels; ++c) out[c] += row[c];
  }
  for (double& v : out) v /= static_cast<double>(features.group_size);
  return out;
}

std::vector<double> Dense::apply(std::span<const double> x, std::size_t rows) const {
  if (x.size() != rows * in_dim) throw Error("Dense: input shape mismatch");
  std::vector<double> y(rows * out_dim);
  for (std::size_t r = 0; r < rows; ++r) {
    double* yr = y.data() + r * out_dim;
    std::copy(bias.begin(), bias.end(), yr);
    for (std::size_t i = 0; i < in_dim; ++i) {
      const double xi = x[r * in_dim + i];
      const double* w = weights.data() + i * out_dim;
      for (std::size_t o = 0; o < out_dim; ++o) yr[o] += xi * w[o];
    }
  }
  return y;
}

DetectionLoss detection_loss(const DetectionOutput& out, const Mat3& r_gt, const FiniteRotationGroup& group,
                             double lambda) {
  if (out.logits.size() != group.order() || out.residuals.size() != group.order()) {
    throw Error("detection_loss: output size does not match |G|");
  }
  DetectionLoss loss;
  loss.label = nearest_group_element(group, r_gt).index;
  loss.classification = cross_entropy(out.logits, loss.label);
  const Mat3 pred = rotation_from_quaternion(out.residuals[loss.label]) * group.element(loss.label);
  loss.regression = (pred - r_gt).squaredNorm();
  loss.total = loss.classification + lambda * loss.regression;
  return loss;
}

Mat3 predict_rotation(const DetectionOutput& out, const FiniteRotationGroup& group) {
  if (out.logits.size() != group.order() || out.residuals.size() != group.order()) {
    throw Error("predict_rotation: output size does not match |G|");
  }
  const auto best = static_cast<std::size_t>(
      std::distance(out.logits.begin(), std::max_element(out.logits.begin(), out.logits.end())));
  return rotation_from_quaternion(out.residuals[best]) * group.element(best);
}

double batch_hard_triplet(std::span<const double> anchors, std::span<const double> positives, std::size_t batch,
                          std::size_t dim, double margin) {
  if (batch < 2) throw Error("batch_hard_triplet needs a batch of at least 2 (no negatives otherwise)");
  if (anchors.size() != batch * dim || positives.size() != batch * dim) {
    throw Error("batch_hard_triplet: descriptor shape mismatch");
  }
  auto dist = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t c = 0; c < dim; ++c) {
      const double d = anchors[i * dim + c] - positives[j * dim + c];
      s += d * d;
    }
    return std::sqrt(s);
  };
  double total = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    double hardest = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < batch; ++j) {
      if (j != i) hardest = std::min(hardest, dist(i, j));
    }
    total += std::max(0.0, dist(i, i) - hardest + margin);
  }
  return total / static_cast<double>(batch);
}

std::vector<double> classify(std::span<const double> pooled, const Dense& fc) { return fc.apply(pooled, 1); }

double cross_entropy(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) {
    throw Error("cross_entropy: label " + std::to_string(label) + " out of range for " +
                std::to_string(logits.size()) + " classes");
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  return mx + std::log(z) - logits[label];
}

Eigen::Matrix4d conjugation_matrix(const UnitQuaternion& q) {
  Eigen::Matrix4d m;
  const UnitQuaternion qc = conjugate(q);
  for (int col = 0; col < 4; ++col) {
    UnitQuaternion e{0, 0, 0, 0};
    (col == 0 ? e.w : col == 1 ? e.x : col == 2 ? e.y : e.z) = 1.0;
    const UnitQuaternion r = q * e * qc;
    m(0, col) = r.w;
    m(1, col) = r.x;
    m(2, col) = r.y;
    m(3, col) = r.z;
  }
  return m;
}

}  // namespace epn
