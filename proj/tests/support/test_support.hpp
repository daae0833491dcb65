#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "epn/conv.hpp"
#include "epn/random.hpp"

namespace epn::testing {

/// Central-difference step used by every gradient check.
constexpr double kFdStep = 1e-6;
/// Elementwise relative-error bound.
constexpr double kGradTol = 1e-4;
/// Denominator floor for the relative error: near-zero gradients are
/// compared on an absolute scale of kGradTol * kGradFloor.
constexpr double kGradFloor = 1e-4;

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kGradFloor});
}

struct GradReport {
  double max_rel = 0.0;
  std::size_t checked = 0;
  std::size_t excluded = 0;
  std::size_t worst = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

inline std::vector<bool> no_kinks() { return {}; }

/// Compares `analytic` with central differences of f() over every entry of x.
/// A coordinate is excluded when the kink signature (activation signs,
/// argmax choices) differs between x - h, x and x + h.
template <typename F, typename K>
GradReport check_gradient(std::vector<double>& x, std::span<const double> analytic, F&& f, K&& kinks) {
  GradReport report;
  const auto base = kinks();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + kFdStep;
    const double up = f();
    const auto sig_up = kinks();
    x[i] = keep - kFdStep;
    const double down = f();
    const auto sig_down = kinks();
    x[i] = keep;
    if (sig_up != base || sig_down != base) {
      ++report.excluded;
      continue;
    }
    const double numeric = (up - down) / (2.0 * kFdStep);
    const double rel = relative_error(analytic[i], numeric);
    ++report.checked;
    if (!(rel <= report.max_rel)) {
      report.max_rel = rel;
      report.worst = i;
      report.worst_analytic = analytic[i];
      report.worst_numeric = numeric;
    }
  }
  return report;
}

template <typename F>
GradReport check_gradient(std::vector<double>& x, std::span<const double> analytic, F&& f) {
  return check_gradient(x, analytic, std::forward<F>(f), no_kinks);
}

inline std::vector<double> normal_vector(std::size_t n, Rng& rng, double scale = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline std::vector<Vec3> random_cloud(std::size_t n, Rng& rng) {
  std::vector<Vec3> pts(n);
  for (auto& p : pts) p = rng.in_unit_ball();
  return pts;
}

inline FeatureMap random_features(std::vector<Vec3> coords, std::size_t g, std::size_t d, Rng& rng) {
  FeatureMap f(std::move(coords), g, d);
  for (double& v : f.values) v = rng.normal();
  return f;
}

inline ExplicitKernel random_kernel(std::size_t k, std::size_t din, std::size_t dout, double radius, Rng& rng,
                                    CorrelationKind kind = CorrelationKind::kLinear) {
  ExplicitKernel kernel;
  kernel.points = make_kernel_points(k, radius);
  kernel.in_channels = din;
  kernel.out_channels = dout;
  kernel.radius = radius;
  kernel.sigma = 0.6 * radius;
  kernel.kind = kind;
  kernel.weights = normal_vector(k * din * dout, rng);
  return kernel;
}

inline GroupKernel random_group_kernel(std::size_t kg, std::size_t din, std::size_t dout, Rng& rng) {
  return GroupKernel{kg, din, dout, normal_vector(kg * din * dout, rng)};
}

}  // namespace epn::testing
