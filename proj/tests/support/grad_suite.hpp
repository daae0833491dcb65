#pragma once

// Finite-difference checks for every differentiable operator and for the
// toy models end to end. Shared by the unit tests and the acceptance run.

#include <functional>
#include <string>
#include <vector>

#include "epn/grad.hpp"
#include "epn/model.hpp"
#include "epn/toy.hpp"
#include "test_support.hpp"

namespace epn::testing {

struct GradCase {
  std::string name;
  std::function<GradReport()> run;
};

inline void merge(GradReport& into, const GradReport& r) {
  if (!(r.max_rel <= into.max_rel)) {
    into.max_rel = r.max_rel;
    into.worst = r.worst;
    into.worst_analytic = r.worst_analytic;
    into.worst_numeric = r.worst_numeric;
  }
  into.checked += r.checked;
  into.excluded += r.excluded;
}

inline std::vector<bool> signs(std::span<const double> v) {
  std::vector<bool> s;
  for (double x : v) s.push_back(x > 0.0);
  return s;
}

struct ConvScene {
  FiniteRotationGroup group = build_group(GroupKind::kTetrahedral);
  std::vector<Vec3> pts;
  NeighborhoodTable nbr;
  FeatureMap features;

  ConvScene(std::size_t n, std::size_t d, Rng& rng) {
    pts = random_cloud(n, rng);
    nbr = ball_query(PointCloud{pts, {}}, pts, 0.7, 6);
    features = random_features(pts, group.order(), d, rng);
  }
};

inline GradReport grad_point_conv(CorrelationKind kind) {
  Rng rng(101);
  ConvScene s(10, 2, rng);
  auto k = random_kernel(4, 2, 3, 0.7, rng, kind);
  const auto r = normal_vector(s.nbr.centers() * s.group.order() * 3, rng);
  auto f = [&] { return dot(r, se3_point_conv(s.features, k, s.nbr, s.group, s.pts).values); };
  const auto g = se3_point_conv_backward(s.features, k, s.nbr, s.group, s.pts, r);
  GradReport out = check_gradient(s.features.values, g.d_input, f);
  merge(out, check_gradient(k.weights, g.d_weights, f));
  return out;
}

inline GradReport grad_implicit_conv() {
  Rng rng(102);
  ConvScene s(10, 2, rng);
  ImplicitKernelParams w{2, 3, normal_vector(5 * 3, rng)};
  const auto r = normal_vector(s.nbr.centers() * s.group.order() * 3, rng);
  auto f = [&] { return dot(r, implicit_point_conv(s.features, w, s.nbr, s.group, s.pts).values); };
  const auto g = implicit_point_conv_backward(s.features, w, s.nbr, s.group, s.pts, r);
  GradReport out = check_gradient(s.features.values, g.d_input, f);
  merge(out, check_gradient(w.weights, g.d_weights, f));
  return out;
}

inline GradReport grad_group_conv() {
  Rng rng(103);
  ConvScene s(6, 3, rng);
  auto k = random_group_kernel(4, 3, 2, rng);
  const auto r = normal_vector(6 * s.group.order() * 2, rng);
  auto f = [&] { return dot(r, se3_group_conv(s.features, k, s.group).values); };
  const auto g = se3_group_conv_backward(s.features, k, s.group, r);
  GradReport out = check_gradient(s.features.values, g.d_input, f);
  merge(out, check_gradient(k.weights, g.d_weights, f));
  return out;
}

inline GradReport grad_leaky_relu() {
  Rng rng(104);
  auto x = normal_vector(200, rng);
  const auto r = normal_vector(200, rng);
  auto f = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += r[i] * leaky_relu(x[i]);
    return s;
  };
  const auto g = leaky_relu_backward(x, r);
  return check_gradient(x, g, f, [&] { return signs(x); });
}

inline GradReport grad_batch_norm(BnMode mode) {
  Rng rng(105);
  ConvScene s(5, 3, rng);
  BatchNorm bn(3);
  bn.gamma = normal_vector(3, rng);
  bn.beta = normal_vector(3, rng);
  bn.running_mean = normal_vector(3, rng);
  bn.running_var = {0.5, 1.5, 2.0};
  const auto r = normal_vector(s.features.values.size(), rng);
  auto f = [&] {
    BatchNorm scratch = bn;
    const auto y = mode == BnMode::kTrain ? batch_norm_train(s.features, scratch) : batch_norm_infer(s.features, bn);
    return dot(r, y.values);
  };
  const auto g = mode == BnMode::kTrain ? batch_norm_train_backward(s.features, bn, r)
                                        : batch_norm_infer_backward(s.features, bn, r);
  GradReport out = check_gradient(s.features.values, g.d_input, f);
  merge(out, check_gradient(bn.gamma, g.d_gamma, f));
  merge(out, check_gradient(bn.beta, g.d_beta, f));
  return out;
}

inline GradReport grad_pooling() {
  Rng rng(106);
  GroupFeatures feat{12, 4, normal_vector(48, rng)};
  const auto r = normal_vector(4, rng);
  GradReport out = check_gradient(feat.values, pool_mean_backward(feat, r), [&] { return dot(r, pool_mean(feat)); });
  auto argmax = [&] {
    std::vector<bool> sig;
    const auto m = pool_max(feat);
    for (std::size_t j = 0; j < feat.group_size; ++j)
      for (std::size_t c = 0; c < feat.channels; ++c) sig.push_back(feat.values[j * feat.channels + c] == m[c]);
    return sig;
  };
  merge(out, check_gradient(feat.values, pool_max_backward(feat, r), [&] { return dot(r, pool_max(feat)); }, argmax));
  return out;
}

inline GradReport grad_ga_pooling() {
  Rng rng(107);
  GroupFeatures feat{12, 3, normal_vector(36, rng)};
  AttentionVector a = attention_from_logits(normal_vector(12, rng));
  const auto r = normal_vector(3, rng);
  auto f = [&] { return dot(r, ga_pooling(feat, a, 0.3)); };
  const auto g = ga_pooling_backward(feat, a, 0.3, r);
  GradReport out = check_gradient(feat.values, g.d_features, f);
  merge(out, check_gradient(a.weights, g.d_attention, f));
  return out;
}

inline GradReport grad_softmax() {
  Rng rng(108);
  auto x = normal_vector(9, rng);
  const auto r = normal_vector(9, rng);
  const auto g = softmax_backward(softmax(x), r);
  return check_gradient(x, g, [&] { return dot(r, softmax(x)); });
}

inline GradReport grad_interpolation() {
  Rng rng(109);
  const auto group = build_group(GroupKind::kOctahedral);
  auto feat = normal_vector(group.order() * 3, rng);
  const Mat3 q = rng.rotation();
  const auto r = normal_vector(3, rng);
  const auto g = spherical_interpolate_backward(group, q, 6, 4.0, 3, r);
  return check_gradient(feat, g, [&] { return dot(r, spherical_interpolate(feat, 3, group, q, 6, 4.0)); });
}

inline GradReport grad_dense() {
  Rng rng(110);
  Dense d(4, 3);
  d.weights = normal_vector(12, rng);
  d.bias = normal_vector(3, rng);
  auto x = normal_vector(5 * 4, rng);
  const auto r = normal_vector(5 * 3, rng);
  auto f = [&] { return dot(r, d.apply(x, 5)); };
  const auto g = dense_backward(d, x, 5, r);
  GradReport out = check_gradient(x, g.d_input, f);
  merge(out, check_gradient(d.weights, g.d_weights, f));
  merge(out, check_gradient(d.bias, g.d_bias, f));
  return out;
}

inline GradReport grad_cross_entropy() {
  Rng rng(111);
  auto x = normal_vector(7, rng, 2.0);
  const auto g = cross_entropy_backward(x, 4);
  return check_gradient(x, g.d_logits, [&] { return cross_entropy(x, 4); });
}

inline GradReport grad_detection_loss() {
  Rng rng(112);
  const auto group = build_group(GroupKind::kIcosahedral);
  const Mat3 target = rng.rotation();
  auto logits = normal_vector(60, rng);
  auto raw = normal_vector(60 * 4, rng);
  auto f = [&] { return detection_loss_backward(logits, raw, target, group, 1.5).loss.total; };
  const auto g = detection_loss_backward(logits, raw, target, group, 1.5);
  GradReport out = check_gradient(logits, g.d_logits, f);
  merge(out, check_gradient(raw, g.d_residuals, f));
  return out;
}

inline GradReport grad_quaternion_loss() {
  Rng rng(113);
  const Mat3 target = rng.rotation();
  std::vector<double> raw = normal_vector(4, rng);
  auto vec = [&] { return Eigen::Vector4d(raw[0], raw[1], raw[2], raw[3]); };
  const auto g = rotation_frobenius_backward(vec(), target);
  const std::vector<double> analytic{g.d_raw[0], g.d_raw[1], g.d_raw[2], g.d_raw[3]};
  return check_gradient(raw, analytic, [&] { return rotation_frobenius_backward(vec(), target).loss; });
}

inline GradReport grad_triplet() {
  Rng rng(114);
  const std::size_t b = 5, d = 3;
  auto a = normal_vector(b * d, rng, 0.5);
  auto p = normal_vector(b * d, rng, 0.5);
  auto f = [&] { return batch_hard_triplet(a, p, b, d, 1.0); };
  // Hinge activity and hardest-negative choice per sample.
  auto kinks = [&] {
    std::vector<bool> sig;
    for (std::size_t i = 0; i < b; ++i) {
      auto dist = [&](std::size_t j) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += (a[i * d + c] - p[j * d + c]) * (a[i * d + c] - p[j * d + c]);
        return std::sqrt(s);
      };
      std::size_t hard = i == 0 ? 1 : 0;
      for (std::size_t j = 0; j < b; ++j)
        if (j != i && dist(j) < dist(hard)) hard = j;
      for (std::size_t j = 0; j < b; ++j) sig.push_back(j == hard);
      sig.push_back(dist(i) - dist(hard) + 1.0 > 0.0);
    }
    return sig;
  };
  const auto g = batch_hard_triplet_backward(a, p, b, d, 1.0);
  GradReport out = check_gradient(a, g.d_anchors, f, kinks);
  merge(out, check_gradient(p, g.d_positives, f, kinks));
  return out;
}

/// Small 2-level configuration so that every parameter can be perturbed.
inline TrainConfig tiny_config() {
  TrainConfig c;
  c.group = GroupKind::kTetrahedral;
  c.points = 24;
  c.batch_size = 2;
  c.channels = {3, 4};
  c.radii = {0.5, 1.0};
  c.k_max = {6, 8};
  c.kernel_points = 4;
  c.group_neighbors = 3;
  c.hidden = 5;
  return c;
}

template <typename Model, typename LossFn>
GradReport check_model(Model& model, LossFn&& loss) {
  const auto base = loss(true);
  std::vector<bool> pattern = base.kink_pattern;
  auto f = [&] {
    auto r = loss(false);
    pattern = std::move(r.kink_pattern);
    return r.loss;
  };
  GradReport out;
  for (auto& b : model.parameters()) {
    const auto it = base.grads.find(b.name);
    if (it == base.grads.end()) throw Error("no gradient for " + b.name);
    merge(out, check_gradient(*b.data, it->second.data, f, [&] { return pattern; }));
  }
  return out;
}

inline GradReport grad_pose_model(PoseHeadKind head) {
  TrainConfig c = tiny_config();
  c.pose_head = head;
  const auto group = build_group(c.group);
  PoseModel model(c, group);
  Rng rng(115);
  const PointCloud shape = bar_triple_shape(c.points, 0.02, rng);
  std::vector<PointCloud> clouds;
  std::vector<Mat3> rots;
  for (std::size_t b = 0; b < c.batch_size; ++b) {
    rots.push_back(rng.rotation());
    clouds.push_back(rotate_cloud(shape, rots.back()));
  }
  return check_model(model, [&](bool grads) { return model.loss(clouds, rots, grads); });
}

inline GradReport grad_cls_model(PoolingKind pooling) {
  TrainConfig c = tiny_config();
  c.pooling = pooling;
  c.temperature = 0.5;
  c.lambda = 0.7;
  const auto group = build_group(c.group);
  ClsModel model(c, group, 2);
  Rng rng(116);
  const auto shapes = default_class_shapes(c.points);
  std::vector<PointCloud> clouds;
  std::vector<std::size_t> labels{0, 1};
  std::vector<Mat3> rots;
  for (std::size_t b = 0; b < 2; ++b) {
    rots.push_back(rng.rotation());
    clouds.push_back(rotate_cloud(shapes(labels[b], rng), rots.back()));
  }
  return check_model(model, [&](bool grads) { return model.loss(clouds, labels, rots, grads); });
}

inline std::vector<GradCase> gradient_cases() {
  return {
      {"point_conv_linear", [] { return grad_point_conv(CorrelationKind::kLinear); }},
      {"point_conv_gaussian", [] { return grad_point_conv(CorrelationKind::kGaussian); }},
      {"implicit_conv", grad_implicit_conv},
      {"group_conv", grad_group_conv},
      {"leaky_relu", grad_leaky_relu},
      {"batch_norm_train", [] { return grad_batch_norm(BnMode::kTrain); }},
      {"batch_norm_infer", [] { return grad_batch_norm(BnMode::kInfer); }},
      {"pooling", grad_pooling},
      {"ga_pooling", grad_ga_pooling},
      {"softmax", grad_softmax},
      {"interpolation", grad_interpolation},
      {"dense", grad_dense},
      {"cross_entropy", grad_cross_entropy},
      {"detection_loss", grad_detection_loss},
      {"quaternion_loss", grad_quaternion_loss},
      {"triplet", grad_triplet},
      {"pose_model_detection", [] { return grad_pose_model(PoseHeadKind::kDetection); }},
      {"pose_model_quaternion", [] { return grad_pose_model(PoseHeadKind::kQuaternion); }},
      {"cls_model_attentive", [] { return grad_cls_model(PoolingKind::kAttentive); }},
      {"cls_model_max", [] { return grad_cls_model(PoolingKind::kMax); }},
      {"cls_model_mean", [] { return grad_cls_model(PoolingKind::kMean); }},
  };
}

}  // namespace epn::testing
