#include <gtest/gtest.h>

#include "epn/model.hpp"
#include "epn/toy.hpp"
#include "grad_suite.hpp"

namespace epn {
namespace {

using testing::max_abs_diff;
using testing::tiny_config;

std::vector<PointCloud> random_batch(const PointCloud& shape, std::size_t n, Rng& rng) {
  std::vector<PointCloud> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(rotate_cloud(shape, rng.rotation()));
  return out;
}

TEST(Backbone, UnrecordedBackwardThrows) {
  const auto c = tiny_config();
  const auto g = build_group(c.group);
  Rng rng(1);
  Backbone backbone(c, g, rng);
  const auto shape = bar_triple_shape(c.points, 0.02, rng);
  const auto batch = prepare_batch(std::span<const PointCloud>(&shape, 1), c);
  const auto pooled = backbone.forward(batch, BnMode::kTrain, nullptr);
  ParameterSet grads;
  EXPECT_THROW(backbone.backward(batch, Backbone::Record{}, pooled, grads), UnrecordedError);

  DetectionHead head(backbone.out_channels(), 4, g, rng);
  const std::vector<double> d(g.order(), 0.0), dq(g.order() * 4, 0.0);
  EXPECT_THROW(head.backward(DetectionHead::Record{}, d, dq, grads), UnrecordedError);
}

TEST(Backbone, PooledFeaturesPermuteUnderGroupRotations) {
  TrainConfig c = tiny_config();
  c.points = 40;
  const auto g = build_group(c.group);
  Rng rng(2);
  Backbone backbone(c, g, rng);
  for (auto& b : backbone.buffers()) {
    for (double& v : *b.data) v = b.name.find("var") != std::string::npos ? 1.5 : 0.1;
  }
  std::vector<Vec3> pts;
  for (std::size_t i = 0; i < c.points; ++i) pts.push_back(rng.in_unit_ball());
  const PointCloud cloud{pts, {}};
  const auto base = backbone.forward(prepare_batch(std::span<const PointCloud>(&cloud, 1), c), BnMode::kInfer, nullptr);
  for (std::size_t r = 0; r < g.order(); ++r) {
    const auto moved = translate_cloud(rotate_cloud(cloud, g.element(r)), Vec3(0.5, -1.0, 2.0));
    const auto out = backbone.forward(prepare_batch(std::span<const PointCloud>(&moved, 1), c), BnMode::kInfer, nullptr);
    const auto perm = left_translation_permutation(g, r);
    std::vector<double> expected(base[0].values.size());
    for (std::size_t j = 0; j < g.order(); ++j)
      for (std::size_t d = 0; d < base[0].channels; ++d)
        expected[j * base[0].channels + d] = base[0].values[perm[j] * base[0].channels + d];
    EXPECT_LT(max_abs_diff(out[0].values, expected), 1e-9);
  }
}

TEST(Backbone, RecalibrateUsesBatchStatistics) {
  const auto c = tiny_config();
  const auto g = build_group(c.group);
  Rng rng(3);
  Backbone backbone(c, g, rng);
  Backbone copy = backbone;
  const auto shape = bar_triple_shape(c.points, 0.02, rng);
  const auto clouds = random_batch(shape, 2, rng);
  const auto batch = prepare_batch(clouds, c);
  backbone.recalibrate(std::span<const BatchGeometry>(&batch, 1));
  const auto recalibrated = backbone.forward(batch, BnMode::kInfer, nullptr);
  const auto trained = copy.forward(batch, BnMode::kTrain, nullptr);
  // Running variance is the biased batch variance, so inference reproduces training mode.
  for (std::size_t b = 0; b < 2; ++b) EXPECT_LT(max_abs_diff(recalibrated[b].values, trained[b].values), 1e-12);
  EXPECT_EQ(backbone.blocks()[0].bn_point.momentum, 0.1);
}

TEST(Bindings, ExportImportRoundTrip) {
  const auto c = tiny_config();
  const auto g = build_group(c.group);
  PoseModel a(c, g);
  TrainConfig other = c;
  other.seed = 99;
  PoseModel b(other, g);
  const auto state = export_bindings(a.state());
  EXPECT_NE(export_bindings(b.state()).at("det.hidden.weights").data, state.at("det.hidden.weights").data);
  import_bindings(b.state(), state);
  for (const auto& [name, arr] : export_bindings(b.state())) EXPECT_EQ(arr.data, state.at(name).data) << name;
}

TEST(Bindings, ImportRejectsMismatch) {
  const auto c = tiny_config();
  const auto g = build_group(c.group);
  PoseModel model(c, g);
  auto state = export_bindings(model.state());
  auto missing = state;
  missing.erase(missing.begin());
  EXPECT_THROW(import_bindings(model.state(), missing), Error);
  auto extra = state;
  extra.emplace("zzz", Array({1}, {0.0}));
  EXPECT_THROW(import_bindings(model.state(), extra), Error);
  auto reshaped = state;
  reshaped.at("det.logit.bias") = Array({2}, {0.0, 0.0});
  EXPECT_THROW(import_bindings(model.state(), reshaped), Error);
}

TEST(Bindings, StateAddsRunningStatistics) {
  const auto c = tiny_config();
  const auto g = build_group(c.group);
  ClsModel model(c, g, 2);
  const auto params = export_bindings(model.parameters());
  const auto state = export_bindings(model.state());
  EXPECT_EQ(state.size(), params.size() + 4 * c.levels());
  EXPECT_TRUE(state.count("backbone.L0.bn_point.running_mean"));
  EXPECT_TRUE(params.count("cls.att_hidden.weights"));
}

TEST(Models, ConstructionIsDeterministic) {
  const auto c = tiny_config();
  const auto g = build_group(c.group);
  PoseModel a(c, g), b(c, g);
  const auto sa = export_bindings(a.state()), sb = export_bindings(b.state());
  for (const auto& [name, arr] : sa) EXPECT_EQ(arr.data, sb.at(name).data);
}

TEST(Models, GradientNamesMatchParameters) {
  const auto c = tiny_config();
  const auto g = build_group(c.group);
  PoseModel model(c, g);
  Rng rng(4);
  const auto shape = bar_triple_shape(c.points, 0.02, rng);
  std::vector<Mat3> rots{rng.rotation(), rng.rotation()};
  const std::vector<PointCloud> clouds{rotate_cloud(shape, rots[0]), rotate_cloud(shape, rots[1])};
  const auto loss = model.loss(clouds, rots, true);
  const auto params = export_bindings(model.parameters());
  require_same_layout(params, loss.grads);
  EXPECT_TRUE(model.loss(clouds, rots, false).grads.empty());
}

TEST(Models, MismatchedBatchThrows) {
  const auto c = tiny_config();
  const auto g = build_group(c.group);
  PoseModel model(c, g);
  Rng rng(5);
  const std::vector<PointCloud> clouds{bar_triple_shape(c.points, 0.02, rng)};
  const std::vector<Mat3> rots{Mat3::Identity(), Mat3::Identity()};
  EXPECT_THROW(model.loss(clouds, rots, false), Error);
}

TEST(Models, QuaternionHeadHasNoDetection) {
  TrainConfig c = tiny_config();
  c.pose_head = PoseHeadKind::kQuaternion;
  const auto g = build_group(c.group);
  PoseModel model(c, g);
  Rng rng(6);
  const auto cloud = bar_triple_shape(c.points, 0.02, rng);
  EXPECT_THROW(model.detect(cloud), Error);
  EXPECT_LT(orthogonality_defect(model.predict(cloud)), 1e-12);
}

TEST(Models, ClassifierLogitsInvariantUnderGroupRotation) {
  TrainConfig c = tiny_config();
  c.points = 32;
  const auto g = build_group(c.group);
  for (auto pooling : {PoolingKind::kAttentive, PoolingKind::kMax, PoolingKind::kMean}) {
    c.pooling = pooling;
    ClsModel model(c, g, 2);
    Rng rng(7);
    std::vector<Vec3> pts;
    for (std::size_t i = 0; i < c.points; ++i) pts.push_back(rng.in_unit_ball());
    const PointCloud cloud{pts, {}};
    const auto base = model.predict(cloud);
    for (std::size_t r = 1; r < g.order(); ++r) {
      const auto out = model.predict(rotate_cloud(cloud, g.element(r)));
      EXPECT_LT(max_abs_diff(out.logits, base.logits), 1e-9) << to_string(pooling);
    }
  }
}

}  // namespace
}  // namespace epn
