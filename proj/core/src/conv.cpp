#include "epn/conv.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "epn/parallel.hpp"

namespace epn {
namespace {

void require(bool ok, const char* what) {
  if (!ok) throw Error(what);
}

void check_neighborhood(const FeatureMap& in, const NeighborhoodTable& nbr, std::span<const Vec3> centers) {
  require(nbr.source_size == in.points(), "neighborhood table does not index this feature map");
  require(nbr.centers() == centers.size(), "center count does not match neighborhood rows");
  require(nbr.neighbors.size() == nbr.centers() * nbr.k_max, "malformed neighborhood table");
}

std::vector<Vec3> rotate_kernel_points(const FiniteRotationGroup& group, std::span<const Vec3> points) {
  std::vector<Vec3> out;
  out.reserve(group.order() * points.size());
  for (const Mat3& g : group.elements()) {
    for (const Vec3& y : points) out.push_back(g * y);
  }
  return out;
}

}  // namespace

FeatureMap::FeatureMap(std::vector<Vec3> c, std::size_t g, std::size_t d, double fill)
    : coords(std::move(c)), group_size(g), channels(d), values(coords.size() * g * d, fill) {}

void FeatureMap::validate() const {
  require(channels >= 1, "feature map needs at least one channel");
  require(group_size >= 1, "feature map needs at least one rotation");
  require(values.size() == coords.size() * group_size * channels, "feature map dimensions are inconsistent");
  for (double v : values) require(std::isfinite(v), "feature map has non-finite values");
}

FeatureMap constant_features(std::vector<Vec3> coords, std::size_t group_size, std::size_t channels) {
  return FeatureMap(std::move(coords), group_size, channels, 1.0);
}

FeatureMap permute_group_axis(const FeatureMap& f, const Permutation& perm) {
  require(perm.size() == f.group_size, "permutation size does not match the group axis");
  FeatureMap out(f.coords, f.group_size, f.channels);
  for (std::size_t n = 0; n < f.points(); ++n) {
    for (std::size_t j = 0; j < f.group_size; ++j) {
      std::copy_n(f.cell(n, perm[j]).begin(), f.channels, out.cell(n, j).begin());
    }
  }
  return out;
}

double correlation(const Vec3& y, const Vec3& y_k, double sigma, CorrelationKind kind) {
  const double d2 = (y - y_k).squaredNorm();
  if (kind == CorrelationKind::kLinear) {
    if (d2 >= sigma * sigma) return 0.0;
    return 1.0 - std::sqrt(d2) / sigma;
  }
  return std::exp(-d2 / (2.0 * sigma * sigma));
}

std::vector<Vec3> make_kernel_points(std::size_t k, double radius) {
  require(k >= 1, "kernel needs at least one point");
  std::vector<Vec3> pts{Vec3::Zero()};
  const std::size_t free = k - 1;
  if (free == 0) return pts;

  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (std::size_t i = 0; i < free; ++i) {
    const double z = 1.0 - (2.0 * static_cast<double>(i) + 1.0) / static_cast<double>(free);
    const double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * static_cast<double>(i);
    pts.emplace_back(0.7 * radius * rho * std::cos(phi), 0.7 * radius * rho * std::sin(phi), 0.7 * radius * z);
  }

  const double step = 0.01 * radius;
  std::vector<Vec3> force(k);
  for (int iter = 0; iter < 200; ++iter) {
    for (std::size_t i = 1; i < k; ++i) {
      Vec3 f = Vec3::Zero();
      for (std::size_t j = 0; j < k; ++j) {
        if (j == i) continue;
        const Vec3 d = pts[i] - pts[j];
        const double n = d.norm();
        if (n > 0.0) f += d / (n * n * n);
      }
      force[i] = f;
    }
    for (std::size_t i = 1; i < k; ++i) {
      const double n = force[i].norm();
      if (n > 0.0) pts[i] += step * force[i] / n;
      const double r = pts[i].norm();
      if (r > radius) pts[i] *= radius / r;
    }
  }
  return pts;
}

void ExplicitKernel::validate() const {
  require(!points.empty(), "kernel needs at least one point");
  require(sigma > 0.0, "kernel sigma must be positive");
  require(weights.size() == points.size() * in_channels * out_channels, "kernel weight shape mismatch");
  for (const auto& p : points) require(p.norm() <= radius * (1.0 + 1e-12), "kernel point outside its ball");
  for (double w : weights) require(std::isfinite(w), "kernel weights must be finite");
}

FeatureMap se3_point_conv(const FeatureMap& in, const ExplicitKernel& kernel, const NeighborhoodTable& nbr,
                          const FiniteRotationGroup& group, std::span<const Vec3> centers, MacCounter* macs) {
  require(in.group_size == group.order(), "feature map group axis does not match the group");
  require(kernel.in_channels == in.channels, "kernel input channels do not match the features");
  require(kernel.weights.size() == kernel.size() * kernel.in_channels * kernel.out_channels,
          "kernel weight shape mismatch");
  require(kernel.sigma > 0.0, "kernel sigma must be positive");
  check_neighborhood(in, nbr, centers);

  const std::size_t kp = kernel.size();
  const std::size_t din = in.channels;
  const std::size_t dout = kernel.out_channels;
  const std::size_t ng = group.order();
  const auto rotated = rotate_kernel_points(group, kernel.points);

  FeatureMap out({centers.begin(), centers.end()}, ng, dout);
  std::vector<std::uint64_t> gathered(centers.size(), 0);
  parallel_for(centers.size(), [&](std::size_t m) {
    std::vector<double> acc(kp * din);
    const auto row = nbr.row(m);
    for (std::size_t g = 0; g < ng; ++g) {
      std::fill(acc.begin(), acc.end(), 0.0);
      const Vec3* yk = rotated.data() + g * kp;
      for (std::size_t i : row) {
        if (nbr.is_shadow(i)) continue;
        const Vec3 d = centers[m] - in.coords[i];
        const double* f = in.values.data() + in.offset(i, g);
        for (std::size_t k = 0; k < kp; ++k) {
          const double kap = correlation(d, yk[k], kernel.sigma, kernel.kind);
          if (kap == 0.0) continue;
          double* a = acc.data() + k * din;
          for (std::size_t c = 0; c < din; ++c) a[c] += kap * f[c];
        }
        gathered[m] += kp * din;
      }
      double* o = out.values.data() + out.offset(m, g);
      for (std::size_t k = 0; k < kp; ++k) {
        for (std::size_t c = 0; c < din; ++c) {
          const double a = acc[k * din + c];
          if (a == 0.0) continue;
          const double* w = kernel.weights.data() + (k * din + c) * dout;
          for (std::size_t q = 0; q < dout; ++q) o[q] += a * w[q];
        }
      }
    }
  });
  if (macs) {
    macs->weight += static_cast<std::uint64_t>(centers.size()) * ng * kp * din * dout;
    macs->gather += std::accumulate(gathered.begin(), gathered.end(), std::uint64_t{0});
  }
  return out;
}

FeatureMap implicit_point_conv(const FeatureMap& in, const ImplicitKernelParams& params,
                               const NeighborhoodTable& nbr, const FiniteRotationGroup& group,
                               std::span<const Vec3> centers) {
  require(in.group_size == group.order(), "feature map group axis does not match the group");
  require(params.in_channels == in.channels, "implicit kernel input channels do not match the features");
  require(params.weights.size() == (params.in_channels + 3) * params.out_channels,
          "implicit kernel weight shape mismatch");
  check_neighborhood(in, nbr, centers);

  const std::size_t din = in.channels;
  const std::size_t dout = params.out_channels;
  const std::size_t ng = group.order();
  FeatureMap out({centers.begin(), centers.end()}, ng, dout);
  parallel_for(centers.size(), [&](std::size_t m) {
    for (std::size_t g = 0; g < ng; ++g) {
      const Mat3& rot = group.element(g);
      double* o = out.values.data() + out.offset(m, g);
      for (std::size_t i : nbr.row(m)) {
        if (nbr.is_shadow(i)) continue;
        const Vec3 local = rot.transpose() * (in.coords[i] - centers[m]);
        const double* f = in.values.data() + in.offset(i, g);
        for (std::size_t c = 0; c < din; ++c) {
          const double* w = params.weights.data() + c * dout;
          for (std::size_t q = 0; q < dout; ++q) o[q] += f[c] * w[q];
        }
        for (std::size_t a = 0; a < 3; ++a) {
          const double* w = params.weights.data() + (din + a) * dout;
          for (std::size_t q = 0; q < dout; ++q) o[q] += local[static_cast<Eigen::Index>(a)] * w[q];
        }
      }
    }
  });
  return out;
}

FeatureMap se3_group_conv(const FeatureMap& in, const GroupKernel& kernel, const FiniteRotationGroup& group,
                          MacCounter* macs) {
  require(in.group_size == group.order(), "feature map group axis does not match the group");
  require(kernel.neighbors >= 1 && kernel.neighbors <= group.order(), "group kernel size must be in [1, |G|]");
  require(kernel.in_channels == in.channels, "group kernel input channels do not match the features");
  require(kernel.weights.size() == kernel.neighbors * kernel.in_channels * kernel.out_channels,
          "group kernel weight shape mismatch");

  const std::size_t kg = kernel.neighbors;
  const std::size_t din = in.channels;
  const std::size_t dout = kernel.out_channels;
  const std::size_t ng = group.order();
  const auto table = group.neighbor_table(kg);

  FeatureMap out(in.coords, ng, dout);
  parallel_for(in.points(), [&](std::size_t n) {
    for (std::size_t g = 0; g < ng; ++g) {
      double* o = out.values.data() + out.offset(n, g);
      for (std::size_t j = 0; j < kg; ++j) {
        const double* f = in.values.data() + in.offset(n, table[g * kg + j]);
        const double* wj = kernel.weights.data() + j * din * dout;
        for (std::size_t c = 0; c < din; ++c) {
          const double fc = f[c];
          const double* w = wj + c * dout;
          for (std::size_t q = 0; q < dout; ++q) o[q] += fc * w[q];
        }
      }
    }
  });
  if (macs) macs->weight += static_cast<std::uint64_t>(in.points()) * ng * kg * din * dout;
  return out;
}

FeatureMap naive_se3_conv(const FeatureMap& in, const Kernel6d& kernel, const NeighborhoodTable& nbr,
                          const FiniteRotationGroup& group, std::span<const Vec3> centers, MacCounter* macs) {
  require(in.group_size == group.order(), "feature map group axis does not match the group");
  require(kernel.in_channels == in.channels, "kernel input channels do not match the features");
  require(kernel.group_neighbors >= 1 && kernel.group_neighbors <= group.order(),
          "group kernel size must be in [1, |G|]");
  require(kernel.weights.size() ==
              kernel.points.size() * kernel.group_neighbors * kernel.in_channels * kernel.out_channels,
          "6D kernel weight shape mismatch");
  check_neighborhood(in, nbr, centers);

  const std::size_t kp = kernel.points.size();
  const std::size_t kg = kernel.group_neighbors;
  const std::size_t din = in.channels;
  const std::size_t dout = kernel.out_channels;
  const std::size_t ng = group.order();
  const auto rotated = rotate_kernel_points(group, kernel.points);
  const auto table = group.neighbor_table(kg);

  FeatureMap out({centers.begin(), centers.end()}, ng, dout);
  std::vector<std::uint64_t> gathered(centers.size(), 0);
  parallel_for(centers.size(), [&](std::size_t m) {
    // acc[(k * kg + j) * din + c]
    std::vector<double> acc(kp * kg * din);
    std::vector<double> kap(kp);
    const auto row = nbr.row(m);
    for (std::size_t g = 0; g < ng; ++g) {
      std::fill(acc.begin(), acc.end(), 0.0);
      const Vec3* yk = rotated.data() + g * kp;
      for (std::size_t i : row) {
        if (nbr.is_shadow(i)) continue;
        const Vec3 d = centers[m] - in.coords[i];
        for (std::size_t k = 0; k < kp; ++k) kap[k] = correlation(d, yk[k], kernel.sigma, kernel.kind);
        for (std::size_t j = 0; j < kg; ++j) {
          const double* f = in.values.data() + in.offset(i, table[g * kg + j]);
          for (std::size_t k = 0; k < kp; ++k) {
            if (kap[k] == 0.0) continue;
            double* a = acc.data() + (k * kg + j) * din;
            for (std::size_t c = 0; c < din; ++c) a[c] += kap[k] * f[c];
          }
        }
        gathered[m] += kp * kg * din;
      }
      double* o = out.values.data() + out.offset(m, g);
      for (std::size_t kj = 0; kj < kp * kg; ++kj) {
        for (std::size_t c = 0; c < din; ++c) {
          const double a = acc[kj * din + c];
          if (a == 0.0) continue;
          const double* w = kernel.weights.data() + (kj * din + c) * dout;
          for (std::size_t q = 0; q < dout; ++q) o[q] += a * w[q];
        }
      }
    }
  });
  if (macs) {
    macs->weight += static_cast<std::uint64_t>(centers.size()) * ng * kp * kg * din * dout;
    macs->gather += std::accumulate(gathered.begin(), gathered.end(), std::uint64_t{0});
  }
  return out;
}

double leaky_relu(double v) { return v >= 0.0 ? v : kLeakySlope * v; }

FeatureMap leaky_relu(const FeatureMap& in) {
  FeatureMap out = in;
  for (double& v : out.values) v = leaky_relu(v);
  return out;
}

BatchNorm::BatchNorm(std::size_t channels)
    : gamma(channels, 1.0), beta(channels, 0.0), running_mean(channels, 0.0), running_var(channels, 1.0) {}

FeatureMap batch_norm_train(const FeatureMap& in, BatchNorm& bn) {
  require(bn.channels() == in.channels, "batch norm channel mismatch");
  const std::size_t rows = in.points() * in.group_size;
  if (rows == 0) throw Error("batch norm over an empty batch");
  const std::size_t d = in.channels;
  std::vector<double> mean(d, 0.0), var(d, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < d; ++c) mean[c] += in.values[r * d + c];
  }
  for (double& m : mean) m /= static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      const double x = in.values[r * d + c] - mean[c];
      var[c] += x * x;
    }
  }
  for (double& v : var) v /= static_cast<double>(rows);

  FeatureMap out(in.coords, in.group_size, d);
  for (std::size_t c = 0; c < d; ++c) {
    const double inv_std = 1.0 / std::sqrt(var[c] + bn.eps);
    for (std::size_t r = 0; r < rows; ++r) {
      out.values[r * d + c] = bn.gamma[c] * (in.values[r * d + c] - mean[c]) * inv_std + bn.beta[c];
    }
    bn.running_mean[c] = (1.0 - bn.momentum) * bn.running_mean[c] + bn.momentum * mean[c];
    bn.running_var[c] = (1.0 - bn.momentum) * bn.running_var[c] + bn.momentum * var[c];
  }
  return out;
}

FeatureMap batch_norm_infer(const FeatureMap& in, const BatchNorm& bn) {
  require(bn.channels() == in.channels, "batch norm channel mismatch");
  const std::size_t rows = in.points() * in.group_size;
  if (rows == 0) throw Error("batch norm over an empty batch");
  const std::size_t d = in.channels;
  FeatureMap out(in.coords, in.group_size, d);
  for (std::size_t c = 0; c < d; ++c) {
    const double scale = bn.gamma[c] / std::sqrt(bn.running_var[c] + bn.eps);
    for (std::size_t r = 0; r < rows; ++r) {
      out.values[r * d + c] = (in.values[r * d + c] - bn.running_mean[c]) * scale + bn.beta[c];
    }
  }
  return out;
}

FeatureMap spconv_block(const FeatureMap& in, SPConvBlock& block, const NeighborhoodTable& nbr,
                        const FiniteRotationGroup& group, std::span<const Vec3> centers, BnMode mode) {
  if (mode == BnMode::kInfer) return spconv_block(in, std::as_const(block), nbr, group, centers);
  auto x = se3_point_conv(in, block.point, nbr, group, centers);
  x = leaky_relu(batch_norm_train(x, block.bn_point));
  x = se3_group_conv(x, block.group, group);
  return leaky_relu(batch_norm_train(x, block.bn_group));
}

FeatureMap spconv_block(const FeatureMap& in, const SPConvBlock& block, const NeighborhoodTable& nbr,
                        const FiniteRotationGroup& group, std::span<const Vec3> centers) {
  auto x = se3_point_conv(in, block.point, nbr, group, centers);
  x = leaky_relu(batch_norm_infer(x, block.bn_point));
  x = se3_group_conv(x, block.group, group);
  return leaky_relu(batch_norm_infer(x, block.bn_group));
}

InterpolationWeights spherical_interpolation_weights(const FiniteRotationGroup& group, const Mat3& query,
                                                     std::size_t k, double lambda) {
  require(k >= 1 && k <= group.order(), "interpolation needs 1 <= k <= |G|");
  require(lambda > 0.0, "interpolation sharpness must be positive");

  const std::size_t n = group.order();
  std::vector<double> cosines(n);
  for (std::size_t j = 0; j < n; ++j) {
    cosines[j] = std::clamp(0.5 * ((query.transpose() * group.element(j)).trace() - 1.0), -1.0, 1.0);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return cosines[a] > cosines[b]; });

  // Small-angle-accurate angle: |R1 - R2|_F = 2 sqrt(2) sin(theta / 2).
  const double frob = (query - group.element(order[0])).norm();
  const double nearest_angle = 2.0 * std::asin(std::min(1.0, frob / (2.0 * std::numbers::sqrt2)));
  if (nearest_angle < 1e-9) return {{order[0]}, {1.0}};

  InterpolationWeights out;
  double total = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    out.indices.push_back(order[j]);
    const double w = std::exp(lambda * (cosines[order[j]] - 1.0));
    out.weights.push_back(w);
    total += w;
  }
  for (double& w : out.weights) w /= total;
  return out;
}

std::vector<double> spherical_interpolate(std::span<const double> features_by_rotation, std::size_t channels,
                                          const FiniteRotationGroup& group, const Mat3& query, std::size_t k,
                                          double lambda) {
  require(features_by_rotation.size() == group.order() * channels, "interpolation feature shape mismatch");
  const auto iw = spherical_interpolation_weights(group, query, k, lambda);
  std::vector<double> out(channels, 0.0);
  for (std::size_t t = 0; t < iw.indices.size(); ++t) {
    const double* f = features_by_rotation.data() + iw.indices[t] * channels;
    for (std::size_t c = 0; c < channels; ++c) out[c] += iw.weights[t] * f[c];
  }
  return out;
}

}  // namespace epn
