#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "epn/geom.hpp"
#include "epn/group.hpp"
#include "epn/sampling.hpp"

namespace epn {

/// Features F(x_i, g_j) on N points x |G| rotations x D channels, stored
/// point-major then group then channel.
struct FeatureMap {
  std::vector<Vec3> coords;
  std::size_t group_size = 0;
  std::size_t channels = 0;
  std::vector<double> values;

  FeatureMap() = default;
  FeatureMap(std::vector<Vec3> coords, std::size_t group_size, std::size_t channels, double fill = 0.0);

  std::size_t points() const { return coords.size(); }
  std::size_t offset(std::size_t n, std::size_t g) const { return (n * group_size + g) * channels; }
  double& at(std::size_t n, std::size_t g, std::size_t d) { return values[offset(n, g) + d]; }
  double at(std::size_t n, std::size_t g, std::size_t d) const { return values[offset(n, g) + d]; }
  std::span<double> cell(std::size_t n, std::size_t g) { return {values.data() + offset(n, g), channels}; }
  std::span<const double> cell(std::size_t n, std::size_t g) const { return {values.data() + offset(n, g), channels}; }

  /// Throws unless sizes are consistent, D >= 1 and all values are finite.
  void validate() const;
};

/// F(x, g) = 1 for every point and rotation: the input signal of the first layer.
FeatureMap constant_features(std::vector<Vec3> coords, std::size_t group_size, std::size_t channels = 1);

/// Copy of `f` with the group axis permuted: out[:, j] = f[:, perm[j]].
FeatureMap permute_group_axis(const FeatureMap& f, const Permutation& perm);

enum class CorrelationKind { kLinear, kGaussian };

/// Kernel-point correlation; linear max(0, 1 - |y - yk| / sigma), gaussian exp(-|y - yk|^2 / (2 sigma^2)).
double correlation(const Vec3& y, const Vec3& y_k, double sigma, CorrelationKind kind);

/// K points in the radius-r ball: the origin, plus K-1 points relaxed by
/// 200 steps of inverse-square repulsion from a Fibonacci spiral at 0.7 r.
std::vector<Vec3> make_kernel_points(std::size_t k, double radius);

/// Explicit spatial kernel h1(y) = sum_k kappa(y, y_k) W_k.
struct ExplicitKernel {
  std::vector<Vec3> points;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::vector<double> weights;  ///< K x D_in x D_out
  double sigma = 1.0;
  double radius = 1.0;
  CorrelationKind kind = CorrelationKind::kLinear;

  std::size_t size() const { return points.size(); }
  void validate() const;
};

/// Group kernel h2(n_j) = W_j over the K_g rotations closest to the identity.
struct GroupKernel {
  std::size_t neighbors = 1;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::vector<double> weights;  ///< K_g x D_in x D_out
};

/// Weights W for the concatenated [F(x_i, g); g^{-1}(x_i - x)] input.
struct ImplicitKernelParams {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::vector<double> weights;  ///< (D_in + 3) x D_out
};

/// Unfactored SE(3) kernel: one weight matrix per (kernel point, group neighbor).
struct Kernel6d {
  std::vector<Vec3> points;
  std::size_t group_neighbors = 1;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::vector<double> weights;  ///< K_p x K_g x D_in x D_out
  double sigma = 1.0;
  CorrelationKind kind = CorrelationKind::kLinear;
};

/// Multiply-accumulate bookkeeping. `weight` counts channel-mixing MACs
/// (feature x weight-matrix entries), the quantity in the complexity
/// comparison; `gather` counts correlation-weighted feature accumulation.
struct MacCounter {
  std::uint64_t weight = 0;
  std::uint64_t gather = 0;
};

/// out(x_m, g) = sum_i F(x_i, g) sum_k kappa(g^{-1}(x_m - x_i), y_k) W_k.
/// Output coordinates are the center coordinates, taken as
/// `centers` (one per neighborhood row).
FeatureMap se3_point_conv(const FeatureMap& in, const ExplicitKernel& kernel, const NeighborhoodTable& nbr,
                          const FiniteRotationGroup& group, std::span<const Vec3> centers,
                          MacCounter* macs = nullptr);

/// out(x, g) = sum_i [F(x_i, g); g^{-1}(x_i - x)] W.
FeatureMap implicit_point_conv(const FeatureMap& in, const ImplicitKernelParams& params,
                               const NeighborhoodTable& nbr, const FiniteRotationGroup& group,
                               std::span<const Vec3> centers);

/// out(x, g) = sum_j F(x, g n_j^{-1}) W_j, gathered through the group's
/// precomputed neighbor table.
FeatureMap se3_group_conv(const FeatureMap& in, const GroupKernel& kernel, const FiniteRotationGroup& group,
                          MacCounter* macs = nullptr);

/// Direct evaluation of the discrete 6D convolution
/// out(x_m, g) = sum_i sum_j F(x_i, g n_j^{-1}) sum_k kappa(g^{-1}(x_m - x_i), y_k) W_{k,j}.
FeatureMap naive_se3_conv(const FeatureMap& in, const Kernel6d& kernel, const NeighborhoodTable& nbr,
                          const FiniteRotationGroup& group, std::span<const Vec3> centers,
                          MacCounter* macs = nullptr);

constexpr double kLeakySlope = 0.01;

double leaky_relu(double v);
FeatureMap leaky_relu(const FeatureMap& in);

/// Per-channel batch normalization, statistics pooled over points and rotations.
struct BatchNorm {
  std::vector<double> gamma;
  std::vector<double> beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  explicit BatchNorm(std::size_t channels = 0);
  std::size_t channels() const { return gamma.size(); }
};

/// Batch statistics; updates running statistics.
FeatureMap batch_norm_train(const FeatureMap& in, BatchNorm& bn);
/// Running statistics; no state change.
FeatureMap batch_norm_infer(const FeatureMap& in, const BatchNorm& bn);

/// Point conv -> BN -> leaky ReLU -> group conv -> BN -> leaky ReLU.
struct SPConvBlock {
  ExplicitKernel point;
  GroupKernel group;
  BatchNorm bn_point;
  BatchNorm bn_group;
};

enum class BnMode { kTrain, kInfer };

FeatureMap spconv_block(const FeatureMap& in, SPConvBlock& block, const NeighborhoodTable& nbr,
                        const FiniteRotationGroup& group, std::span<const Vec3> centers, BnMode mode);
FeatureMap spconv_block(const FeatureMap& in, const SPConvBlock& block, const NeighborhoodTable& nbr,
                        const FiniteRotationGroup& group, std::span<const Vec3> centers);

/// Interpolation weights over the k group elements nearest to `query`:
/// w_j proportional to exp(lambda (cos angle(query, g_j) - 1)), normalized.
/// An exact match (angle < 1e-9 rad) returns a single unit weight.
struct InterpolationWeights {
  std::vector<std::size_t> indices;
  std::vector<double> weights;
};
InterpolationWeights spherical_interpolation_weights(const FiniteRotationGroup& group, const Mat3& query,
                                                     std::size_t k, double lambda);

/// Feature at `query` from per-rotation features (|G| x D, row-major).
std::vector<double> spherical_interpolate(std::span<const double> features_by_rotation, std::size_t channels,
                                          const FiniteRotationGroup& group, const Mat3& query, std::size_t k,
                                          double lambda);

}  // namespace epn
