#include "epn/audit.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include "epn/conv.hpp"
#include "epn/heads.hpp"
#include "epn/random.hpp"
#include "epn/sampling.hpp"

namespace epn {
namespace {

constexpr double kRotationTol = 1e-9;
constexpr double kExactTol = 0.0;
constexpr double kTightTol = 1e-12;
constexpr double kLinearityTol = 1e-9;

using ConvFn = std::function<FeatureMap(const FeatureMap&, std::span<const Vec3> centers)>;

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(a[i] - b[i]);
    if (!std::isfinite(d)) return std::numeric_limits<double>::infinity();
    m = std::max(m, d);
  }
  return m;
}

std::vector<Vec3> dyadic_cloud(std::size_t n, Rng& rng) {
  std::vector<Vec3> pts(n);
  for (auto& p : pts) {
    p = rng.in_unit_ball();
    for (int i = 0; i < 3; ++i) p[i] = std::ldexp(std::round(std::ldexp(p[i], 20)), -20);
  }
  return pts;
}

FeatureMap random_features(std::vector<Vec3> coords, std::size_t g, std::size_t d, Rng& rng) {
  FeatureMap f(std::move(coords), g, d);
  for (double& v : f.values) v = rng.normal();
  return f;
}

ExplicitKernel random_kernel(std::size_t k, std::size_t din, std::size_t dout, double radius, Rng& rng) {
  ExplicitKernel kernel;
  kernel.points = make_kernel_points(k, radius);
  kernel.in_channels = din;
  kernel.out_channels = dout;
  kernel.radius = radius;
  kernel.sigma = 0.6 * radius;
  kernel.weights.resize(k * din * dout);
  for (double& w : kernel.weights) w = rng.normal();
  return kernel;
}

GroupKernel random_group_kernel(std::size_t kg, std::size_t d, Rng& rng) {
  GroupKernel kernel{kg, d, d, std::vector<double>(kg * d * d)};
  for (double& w : kernel.weights) w = rng.normal();
  return kernel;
}

BatchNorm random_bn(std::size_t d, Rng& rng) {
  BatchNorm bn(d);
  for (std::size_t c = 0; c < d; ++c) {
    bn.gamma[c] = rng.normal();
    bn.beta[c] = rng.normal();
    bn.running_mean[c] = rng.normal();
    bn.running_var[c] = rng.uniform(0.5, 2.0);
  }
  return bn;
}

class Auditor {
 public:
  explicit Auditor(const AuditOptions& o) : opt_(o), group_(build_group(o.group)), rng_(o.seed) {
    if (o.points < 2 || o.channels < 1 || o.kernel_points < 1 || o.k_max < 1 || !(o.radius > 0.0)) {
      throw Error("audit: invalid sizes");
    }
    if (o.group_neighbors < 1 || o.group_neighbors > group_.order()) {
      throw Error("audit: group_neighbors must be in [1, |G|]");
    }
    coords_ = dyadic_cloud(o.points, rng_);
    nbr_ = ball_query(PointCloud{coords_, {}}, coords_, o.radius, o.k_max);
    features_ = random_features(coords_, group_.order(), o.channels, rng_);
  }

  AuditReport run() {
    AuditReport report;
    report.options = opt_;
    auto& out = report.checks;
    group_checks(out);

    const auto point = random_kernel(opt_.kernel_points, opt_.channels, opt_.channels, opt_.radius, rng_);
    const auto gk = random_group_kernel(opt_.group_neighbors, opt_.channels, rng_);
    ImplicitKernelParams implicit{opt_.channels, opt_.channels,
                                  std::vector<double>((opt_.channels + 3) * opt_.channels)};
    for (double& w : implicit.weights) w = rng_.normal();
    SPConvBlock b1{random_kernel(opt_.kernel_points, opt_.channels, opt_.channels, opt_.radius, rng_),
                   random_group_kernel(opt_.group_neighbors, opt_.channels, rng_), random_bn(opt_.channels, rng_),
                   random_bn(opt_.channels, rng_)};
    SPConvBlock b2{random_kernel(opt_.kernel_points, opt_.channels, opt_.channels, opt_.radius, rng_),
                   random_group_kernel(opt_.group_neighbors, opt_.channels, rng_), random_bn(opt_.channels, rng_),
                   random_bn(opt_.channels, rng_)};

    const ConvFn point_fn = [&](const FeatureMap& f, std::span<const Vec3> c) {
      return se3_point_conv(f, point, nbr_, group_, c);
    };
    const ConvFn group_fn = [&](const FeatureMap& f, std::span<const Vec3>) { return se3_group_conv(f, gk, group_); };
    const ConvFn implicit_fn = [&](const FeatureMap& f, std::span<const Vec3> c) {
      return implicit_point_conv(f, implicit, nbr_, group_, c);
    };
    const ConvFn stack_fn = [&](const FeatureMap& f, std::span<const Vec3> c) {
      const auto x = spconv_block(f, std::as_const(b1), nbr_, group_, c);
      return spconv_block(x, std::as_const(b2), nbr_, group_, c);
    };

    out.push_back({"point_conv.rotation", rotation_deviation(point_fn), kRotationTol});
    out.push_back({"group_conv.rotation", rotation_deviation(group_fn), kRotationTol});
    out.push_back({"implicit_conv.rotation", rotation_deviation(implicit_fn), kRotationTol});
    out.push_back({"spconv_stack.rotation", rotation_deviation(stack_fn), kRotationTol});

    out.push_back({"point_conv.translation", translation_deviation(point_fn), kExactTol});
    out.push_back({"implicit_conv.translation", translation_deviation(implicit_fn), kExactTol});
    out.push_back({"spconv_stack.translation", translation_deviation(stack_fn), kExactTol});
    out.push_back({"hierarchy.translation", hierarchy_translation(), kExactTol});

    out.push_back({"point_conv.linearity", linearity(point_fn), kLinearityTol});
    const auto padded = nbr_.with_extra_shadow_slots(5);
    out.push_back({"point_conv.shadow_neutrality",
                   max_abs_diff(se3_point_conv(features_, point, padded, group_, coords_).values,
                                point_fn(features_, coords_).values),
                   kExactTol});
    out.push_back({"implicit_conv.shadow_neutrality",
                   max_abs_diff(implicit_point_conv(features_, implicit, padded, group_, coords_).values,
                                implicit_fn(features_, coords_).values),
                   kExactTol});

    separability_checks(out, point, gk);
    pooling_checks(out);
    head_checks(out);
    return report;
  }

 private:
  Permutation permutation(std::size_t r) const {
    auto p = left_translation_permutation(group_, r);
    if (opt_.corrupt_permutation && p.size() > 1) std::swap(p[0], p[1]);
    return p;
  }

  double rotation_deviation(const ConvFn& fn) const {
    const auto base = fn(features_, coords_);
    double dev = 0.0;
    for (std::size_t r = 0; r < group_.order(); ++r) {
      const Mat3& rot = group_.element(r);
      const auto perm = permutation(r);
      auto moved = permute_group_axis(features_, perm);
      for (auto& p : moved.coords) p = rot * p;
      const auto out = fn(moved, moved.coords);
      dev = std::max(dev, max_abs_diff(out.values, permute_group_axis(base, perm).values));
    }
    return dev;
  }

  double translation_deviation(const ConvFn& fn) const {
    const Vec3 t(3.0, -2.0, 5.0);
    FeatureMap moved = features_;
    for (auto& p : moved.coords) p += t;
    return max_abs_diff(fn(moved, moved.coords).values, fn(features_, coords_).values);
  }

  double hierarchy_translation() const {
    const std::array<double, 2> radii{opt_.radius, 2.0 * opt_.radius};
    const std::array<std::size_t, 2> k{opt_.k_max, opt_.k_max};
    PointCloud cloud{coords_, {}};
    PointCloud moved = cloud;
    for (auto& p : moved.points) p += Vec3(3.0, -2.0, 5.0);
    const auto a = build_hierarchy(cloud, 2, 2, radii, k);
    const auto b = build_hierarchy(moved, 2, 2, radii, k);
    double mismatches = 0.0;
    for (std::size_t l = 0; l < a.size(); ++l) {
      if (a[l].sampled != b[l].sampled) mismatches += 1.0;
      if (a[l].neighborhoods.neighbors != b[l].neighborhoods.neighbors) mismatches += 1.0;
    }
    return mismatches;
  }

  double linearity(const ConvFn& fn) {
    const auto other = random_features(coords_, group_.order(), opt_.channels, rng_);
    const double a = 0.75, b = -1.5;
    FeatureMap mix = features_;
    for (std::size_t i = 0; i < mix.values.size(); ++i) mix.values[i] = a * features_.values[i] + b * other.values[i];
    const auto y1 = fn(features_, coords_);
    const auto y2 = fn(other, coords_);
    const auto y = fn(mix, coords_);
    std::vector<double> expected(y.values.size());
    for (std::size_t i = 0; i < expected.size(); ++i) expected[i] = a * y1.values[i] + b * y2.values[i];
    return max_abs_diff(y.values, expected);
  }

  void group_checks(std::vector<AuditCheck>& out) const {
    const std::size_t n = group_.order();
    out.push_back({"group.order",
                   std::abs(static_cast<double>(n) - static_cast<double>(expected_order(opt_.group))), kExactTol});
    double closure = 0.0;
    double assoc = 0.0;
    double inverse = 0.0;
    double ortho = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const Mat3& gi = group_.element(i);
      ortho = std::max({ortho, orthogonality_defect(gi), std::abs(gi.determinant() - 1.0)});
      if (group_.mul(i, group_.inv(i)) != 0 || group_.mul(group_.inv(i), i) != 0) inverse += 1.0;
      for (std::size_t j = 0; j < n; ++j) {
        const Mat3 prod = gi * group_.element(j);
        closure = std::max(closure, (prod - group_.element(group_.mul(i, j))).cwiseAbs().maxCoeff());
        for (std::size_t k = 0; k < n; ++k) {
          if (group_.mul(group_.mul(i, j), k) != group_.mul(i, group_.mul(j, k))) assoc += 1.0;
        }
      }
    }
    out.push_back({"group.closure", closure, kTightTol});
    out.push_back({"group.associativity", assoc, kExactTol});
    out.push_back({"group.inverse", inverse, kExactTol});
    out.push_back({"group.orthogonality", ortho, kTightTol});
  }

  void separability_checks(std::vector<AuditCheck>& out, const ExplicitKernel& point, const GroupKernel& gk) const {
    Kernel6d rot_delta;
    rot_delta.points = point.points;
    rot_delta.group_neighbors = 1;
    rot_delta.in_channels = point.in_channels;
    rot_delta.out_channels = point.out_channels;
    rot_delta.weights = point.weights;
    rot_delta.sigma = point.sigma;
    rot_delta.kind = point.kind;
    out.push_back({"separability.rotational_delta",
                   max_abs_diff(naive_se3_conv(features_, rot_delta, nbr_, group_, coords_).values,
                                se3_point_conv(features_, point, nbr_, group_, coords_).values),
                   kTightTol});

    NeighborhoodTable self;
    self.k_max = 1;
    self.source_size = coords_.size();
    self.radius = 0.0;
    for (std::size_t m = 0; m < coords_.size(); ++m) {
      self.center_indices.push_back(m);
      self.neighbors.push_back(m);
      self.counts.push_back(1);
    }
    Kernel6d spatial_delta;
    spatial_delta.points = {Vec3::Zero()};
    spatial_delta.group_neighbors = gk.neighbors;
    spatial_delta.in_channels = gk.in_channels;
    spatial_delta.out_channels = gk.out_channels;
    spatial_delta.weights = gk.weights;
    spatial_delta.sigma = 1.0;
    out.push_back({"separability.spatial_delta",
                   max_abs_diff(naive_se3_conv(features_, spatial_delta, self, group_, coords_).values,
                                se3_group_conv(features_, gk, group_).values),
                   kTightTol});
  }

  GroupFeatures permuted_rows(const GroupFeatures& f, const Permutation& perm) const {
    GroupFeatures out = f;
    for (std::size_t j = 0; j < f.group_size; ++j) {
      std::copy_n(f.values.begin() + static_cast<std::ptrdiff_t>(perm[j] * f.channels), f.channels,
                  out.values.begin() + static_cast<std::ptrdiff_t>(j * f.channels));
    }
    return out;
  }

  void pooling_checks(std::vector<AuditCheck>& out) {
    GroupFeatures f{group_.order(), opt_.channels, std::vector<double>(group_.order() * opt_.channels)};
    for (double& v : f.values) v = rng_.normal();
    GroupFeatures logits{group_.order(), 1, std::vector<double>(group_.order())};
    for (double& v : logits.values) v = rng_.normal();
    const auto a = attention_from_logits(logits.values);
    const auto base_max = pool_max(f);
    const auto base_mean = pool_mean(f);
    const auto base_ga = ga_pooling(f, a, 0.5);
    double dmax = 0.0, dmean = 0.0, dga = 0.0;
    for (std::size_t r = 0; r < group_.order(); ++r) {
      const auto perm = permutation(r);
      const auto pf = permuted_rows(f, perm);
      const auto pl = permuted_rows(logits, perm);
      dmax = std::max(dmax, max_abs_diff(pool_max(pf), base_max));
      dmean = std::max(dmean, max_abs_diff(pool_mean(pf), base_mean));
      dga = std::max(dga, max_abs_diff(ga_pooling(pf, attention_from_logits(pl.values), 0.5), base_ga));
    }
    out.push_back({"pooling.max_invariance", dmax, kTightTol});
    out.push_back({"pooling.mean_invariance", dmean, kTightTol});
    out.push_back({"pooling.ga_invariance", dga, kTightTol});
  }

  void head_checks(std::vector<AuditCheck>& out) {
    const std::size_t n = group_.order();
    std::vector<double> logits(n);
    for (double& v : logits) v = rng_.normal();
    const auto best = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    double shift_failures = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      const auto perm = permutation(r);
      std::vector<double> moved(n);
      for (std::size_t j = 0; j < n; ++j) moved[j] = logits[perm[j]];
      const auto b = static_cast<std::size_t>(std::max_element(moved.begin(), moved.end()) - moved.begin());
      if (b != group_.mul(r, best)) shift_failures += 1.0;
    }
    out.push_back({"detection.argmax_shift", shift_failures, kExactTol});

    constexpr std::size_t kBatch = 6, kDim = 5;
    std::vector<double> anchors(kBatch * kDim), positives(kBatch * kDim);
    for (double& v : anchors) v = rng_.normal();
    for (double& v : positives) v = rng_.normal();
    std::vector<std::size_t> order(kBatch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::reverse(order.begin(), order.end());
    std::rotate(order.begin(), order.begin() + 2, order.end());
    std::vector<double> pa(anchors.size()), pp(positives.size());
    for (std::size_t i = 0; i < kBatch; ++i) {
      std::copy_n(anchors.begin() + static_cast<std::ptrdiff_t>(order[i] * kDim), kDim,
                  pa.begin() + static_cast<std::ptrdiff_t>(i * kDim));
      std::copy_n(positives.begin() + static_cast<std::ptrdiff_t>(order[i] * kDim), kDim,
                  pp.begin() + static_cast<std::ptrdiff_t>(i * kDim));
    }
    out.push_back({"triplet.permutation_invariance",
                   std::abs(batch_hard_triplet(anchors, positives, kBatch, kDim, 1.0) -
                            batch_hard_triplet(pa, pp, kBatch, kDim, 1.0)),
                   kTightTol});

    const std::size_t k = std::min<std::size_t>(4, n);
    const auto w = spherical_interpolation_weights(group_, rng_.rotation(), k, 5.0);
    double dev = std::abs(std::accumulate(w.weights.begin(), w.weights.end(), 0.0) - 1.0);
    for (double v : w.weights) {
      if (v < 0.0) dev = std::max(dev, -v);
    }
    const auto exact = spherical_interpolation_weights(group_, group_.element(n - 1), k, 5.0);
    if (exact.weights.size() != 1 || exact.indices[0] != n - 1 || exact.weights[0] != 1.0) dev = 1.0;
    out.push_back({"interpolation.weights", dev, kTightTol});
  }

  AuditOptions opt_;
  FiniteRotationGroup group_;
  Rng rng_;
  std::vector<Vec3> coords_;
  NeighborhoodTable nbr_;
  FeatureMap features_;
};

}  // namespace

bool AuditReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const AuditCheck& c) { return c.passed(); });
}

const AuditCheck& AuditReport::check(const std::string& name) const {
  for (const auto& c : checks) {
    if (c.name == name) return c;
  }
  throw Error("no audit check named " + name);
}

AuditReport run_audit(const AuditOptions& options) { return Auditor(options).run(); }

nlohmann::json to_json(const AuditReport& report) {
  const auto& o = report.options;
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& c : report.checks) {
    checks.push_back({{"name", c.name}, {"deviation", c.deviation}, {"tolerance", c.tolerance}, {"pass", c.passed()}});
  }
  return {
      {"environment",
       {{"seed", o.seed},
        {"group", to_string(o.group)},
        {"group_order", expected_order(o.group)},
        {"points", o.points},
        {"channels", o.channels},
        {"kernel_points", o.kernel_points},
        {"group_neighbors", o.group_neighbors},
        {"k_max", o.k_max},
        {"radius", o.radius},
        {"corrupt_permutation", o.corrupt_permutation}}},
      {"checks", checks},
      {"pass", report.passed()},
  };
}

}  // namespace epn
