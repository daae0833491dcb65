#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "epn/config.hpp"
#include "epn/conv.hpp"
#include "epn/grad.hpp"
#include "epn/group.hpp"
#include "epn/heads.hpp"
#include "epn/params.hpp"
#include "epn/random.hpp"
#include "epn/sampling.hpp"

namespace epn {

/// Several clouds flattened into one feature map per level so batch norm sees
/// the whole batch. Neighborhood indices are offset per cloud.
struct BatchGeometry {
  struct Level {
    std::vector<Vec3> centers;
    NeighborhoodTable neighborhoods;
    std::vector<std::size_t> offsets;  ///< cloud b owns centers [offsets[b], offsets[b + 1])
  };
  std::size_t clouds = 0;
  std::vector<Vec3> input;
  std::vector<Level> levels;
};

BatchGeometry prepare_batch(std::span<const PointCloud> clouds, const TrainConfig& config);

/// Named view of a parameter or buffer inside a model.
struct Binding {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double>* data;
};

/// Thrown by backward() when the forward pass was run without recording.
class UnrecordedError : public Error {
 public:
  using Error::Error;
};

/// Stack of SPConv blocks followed by a per-cloud spatial mean.
class Backbone {
 public:
  Backbone() = default;
  Backbone(const TrainConfig& config, const FiniteRotationGroup& group, Rng& rng);

  struct LevelRecord {
    FeatureMap input, conv1, bn1, conv2_in, conv2, bn2;
  };
  struct Record {
    bool recorded = false;
    BnMode mode = BnMode::kTrain;
    std::vector<LevelRecord> levels;
    FeatureMap output;
  };

  /// Per-cloud |G| x D features. `record` may be null for inference.
  std::vector<GroupFeatures> forward(const BatchGeometry& batch, BnMode mode, Record* record);
  /// Accumulates parameter gradients into `grads` (names as in bindings()).
  void backward(const BatchGeometry& batch, const Record& record, std::span<const GroupFeatures> d_pooled,
                ParameterSet& grads) const;

  /// Replaces running statistics with the average batch statistics over `batches`.
  void recalibrate(std::span<const BatchGeometry> batches);

  std::vector<Binding> parameters(const std::string& prefix = "backbone");
  std::vector<Binding> buffers(const std::string& prefix = "backbone");
  std::size_t out_channels() const { return blocks_.empty() ? 1 : blocks_.back().group.out_channels; }
  const std::vector<SPConvBlock>& blocks() const { return blocks_; }

  /// Sign pattern of every leaky-ReLU pre-activation in the record.
  static std::vector<bool> activation_pattern(const Record& record);

 private:
  const FiniteRotationGroup* group_ = nullptr;
  std::vector<SPConvBlock> blocks_;
};

/// Per-anchor two-branch head: shared hidden layer, one logit and one local
/// residual quaternion per rotation. The residual in DetectionOutput is the
/// local one conjugated into the world frame, g q g^{-1}.
class DetectionHead {
 public:
  DetectionHead() = default;
  DetectionHead(std::size_t in, std::size_t hidden, const FiniteRotationGroup& group, Rng& rng);

  struct Record {
    bool recorded = false;
    GroupFeatures input;
    std::vector<double> hidden_pre;
    std::vector<double> hidden;
    std::vector<double> local_raw;
  };
  struct Output {
    std::vector<double> logits;
    std::vector<double> world_raw;  ///< |G| x 4 unnormalized residual quaternions
    DetectionOutput as_detection() const;
  };

  Output forward(const GroupFeatures& features, Record* record) const;
  /// Returns d features; accumulates parameter gradients.
  std::vector<double> backward(const Record& record, std::span<const double> d_logits,
                               std::span<const double> d_world_raw, ParameterSet& grads,
                               const std::string& prefix = "det") const;
  std::vector<Binding> parameters(const std::string& prefix = "det");
  std::vector<bool> activation_pattern(const Record& record) const;

 private:
  const FiniteRotationGroup* group_ = nullptr;
  std::vector<Eigen::Matrix4d> conjugations_;
  Dense hidden_, logit_, quat_;
};

/// Direct regression baseline: flattened |G| x D features -> hidden -> quaternion.
class QuaternionHead {
 public:
  QuaternionHead() = default;
  QuaternionHead(std::size_t in, std::size_t group_size, std::size_t hidden, Rng& rng);

  struct Record {
    bool recorded = false;
    std::vector<double> input, hidden_pre, hidden;
  };
  Eigen::Vector4d forward(const GroupFeatures& features, Record* record) const;
  std::vector<double> backward(const Record& record, const Eigen::Vector4d& d_raw, ParameterSet& grads,
                               const std::string& prefix = "quat") const;
  std::vector<Binding> parameters(const std::string& prefix = "quat");
  std::vector<bool> activation_pattern(const Record& record) const;

 private:
  Dense hidden_, out_;
};

/// Invariant classifier: attention branch, group pooling, linear layer.
class ClassifierHead {
 public:
  ClassifierHead() = default;
  ClassifierHead(std::size_t in, std::size_t hidden, std::size_t classes, PoolingKind pooling, double temperature,
                 Rng& rng);

  struct Record {
    bool recorded = false;
    GroupFeatures input;
    std::vector<double> att_pre, att_hidden, att_logits;
    AttentionVector attention;
    std::vector<double> pooled;
  };
  struct Output {
    std::vector<double> logits;
    std::vector<double> attention_logits;  ///< empty unless pooling is attentive
    AttentionVector attention;
  };
  Output forward(const GroupFeatures& features, Record* record) const;
  std::vector<double> backward(const Record& record, std::span<const double> d_logits,
                               std::span<const double> d_attention_logits, ParameterSet& grads,
                               const std::string& prefix = "cls") const;
  std::vector<Binding> parameters(const std::string& prefix = "cls");
  std::vector<bool> activation_pattern(const Record& record) const;
  PoolingKind pooling() const { return pooling_; }

 private:
  PoolingKind pooling_ = PoolingKind::kAttentive;
  double temperature_ = 1.0;
  Dense att_hidden_, att_out_, fc_;
};

ParameterSet export_bindings(const std::vector<Binding>& bindings);
void import_bindings(const std::vector<Binding>& bindings, const ParameterSet& values);

/// Result of a loss evaluation on one batch.
struct BatchLoss {
  double loss = 0.0;
  ParameterSet grads;               ///< empty unless requested
  std::vector<bool> kink_pattern;   ///< activation / argmax signature of this evaluation
};

/// Backbone + pose head (detection or quaternion baseline).
class PoseModel {
 public:
  PoseModel(const TrainConfig& config, const FiniteRotationGroup& group);

  BatchLoss loss(std::span<const PointCloud> clouds, std::span<const Mat3> rotations, bool with_grads);
  /// Inference-mode prediction of the rotation that maps the canonical shape onto `cloud`.
  Mat3 predict(const PointCloud& cloud);
  /// Inference-mode detection output (detection head only).
  DetectionOutput detect(const PointCloud& cloud);
  void recalibrate(std::span<const std::vector<PointCloud>> batches);

  std::vector<Binding> parameters();
  std::vector<Binding> state();  ///< parameters plus batch-norm running statistics
  const TrainConfig& config() const { return config_; }

 private:
  TrainConfig config_;
  const FiniteRotationGroup* group_;
  Backbone backbone_;
  DetectionHead detection_;
  QuaternionHead quaternion_;
};

/// Backbone + classifier head.
class ClsModel {
 public:
  ClsModel(const TrainConfig& config, const FiniteRotationGroup& group, std::size_t classes);

  /// `rotations` supplies attention supervision when config.supervise_attention is set.
  BatchLoss loss(std::span<const PointCloud> clouds, std::span<const std::size_t> labels,
                 std::span<const Mat3> rotations, bool with_grads);
  ClassifierHead::Output predict(const PointCloud& cloud);
  /// Invariant pooled descriptor (input of the final linear layer).
  std::vector<double> descriptor(const PointCloud& cloud);
  void recalibrate(std::span<const std::vector<PointCloud>> batches);

  std::vector<Binding> parameters();
  std::vector<Binding> state();
  const TrainConfig& config() const { return config_; }

 private:
  TrainConfig config_;
  const FiniteRotationGroup* group_;
  Backbone backbone_;
  ClassifierHead head_;
};

}  // namespace epn
