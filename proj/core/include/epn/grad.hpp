#pragma once

// Reverse-mode derivatives of every operator in conv.hpp and heads.hpp.
//
// Each *_backward takes the forward inputs and the upstream gradient of the
// output and returns gradients with respect to the inputs and parameters.
// Intermediates are recomputed from the inputs.

#include <span>
#include <vector>

#include "epn/conv.hpp"
#include "epn/heads.hpp"

namespace epn {

struct ConvGrads {
  std::vector<double> d_input;    ///< same layout as the input feature values
  std::vector<double> d_weights;  ///< same layout as the kernel weights
};

ConvGrads se3_point_conv_backward(const FeatureMap& in, const ExplicitKernel& kernel, const NeighborhoodTable& nbr,
                                  const FiniteRotationGroup& group, std::span<const Vec3> centers,
                                  std::span<const double> d_out);

ConvGrads implicit_point_conv_backward(const FeatureMap& in, const ImplicitKernelParams& params,
                                       const NeighborhoodTable& nbr, const FiniteRotationGroup& group,
                                       std::span<const Vec3> centers, std::span<const double> d_out);

ConvGrads se3_group_conv_backward(const FeatureMap& in, const GroupKernel& kernel, const FiniteRotationGroup& group,
                                  std::span<const double> d_out);

/// Gradient through leaky ReLU given its pre-activation.
std::vector<double> leaky_relu_backward(std::span<const double> pre, std::span<const double> d_out);

struct BatchNormGrads {
  std::vector<double> d_input;
  std::vector<double> d_gamma;
  std::vector<double> d_beta;
};

/// Training mode: differentiates through the batch statistics.
BatchNormGrads batch_norm_train_backward(const FeatureMap& in, const BatchNorm& bn, std::span<const double> d_out);
/// Inference mode: running statistics are constants.
BatchNormGrads batch_norm_infer_backward(const FeatureMap& in, const BatchNorm& bn, std::span<const double> d_out);

std::vector<double> pool_mean_backward(const GroupFeatures& features, std::span<const double> d_out);
/// Routes each channel's gradient to the first maximizing rotation.
std::vector<double> pool_max_backward(const GroupFeatures& features, std::span<const double> d_out);

struct GaPoolingGrads {
  std::vector<double> d_features;
  std::vector<double> d_attention;
};
GaPoolingGrads ga_pooling_backward(const GroupFeatures& features, const AttentionVector& a, double temperature,
                                   std::span<const double> d_out);

/// d logits of softmax given the softmax output.
std::vector<double> softmax_backward(std::span<const double> probs, std::span<const double> d_probs);

/// d features of spherical_interpolate (|G| x D).
std::vector<double> spherical_interpolate_backward(const FiniteRotationGroup& group, const Mat3& query,
                                                   std::size_t k, double lambda, std::size_t channels,
                                                   std::span<const double> d_out);

struct DenseGrads {
  std::vector<double> d_input;
  std::vector<double> d_weights;
  std::vector<double> d_bias;
};
DenseGrads dense_backward(const Dense& layer, std::span<const double> x, std::size_t rows,
                          std::span<const double> d_out);

/// Loss value and d logits.
struct LossGrad {
  double loss = 0.0;
  std::vector<double> d_logits;
};
LossGrad cross_entropy_backward(std::span<const double> logits, std::size_t label);

/// Detection loss on raw (unnormalized) residual quaternions, |G| x 4 in
/// (w, x, y, z) order; the residuals are normalized inside.
struct DetectionLossGrad {
  DetectionLoss loss;
  std::vector<double> d_logits;
  std::vector<double> d_residuals;
};
DetectionLossGrad detection_loss_backward(std::span<const double> logits, std::span<const double> raw_residuals,
                                          const Mat3& r_gt, const FiniteRotationGroup& group, double lambda);

/// |R(p / |p|) - target|_F^2 and its gradient with respect to the raw quaternion p.
struct QuaternionLossGrad {
  double loss = 0.0;
  Eigen::Vector4d d_raw = Eigen::Vector4d::Zero();
};
QuaternionLossGrad rotation_frobenius_backward(const Eigen::Vector4d& raw, const Mat3& target);

struct TripletGrads {
  double loss = 0.0;
  std::vector<double> d_anchors;
  std::vector<double> d_positives;
};
TripletGrads batch_hard_triplet_backward(std::span<const double> anchors, std::span<const double> positives,
                                         std::size_t batch, std::size_t dim, double margin);

}  // namespace epn
