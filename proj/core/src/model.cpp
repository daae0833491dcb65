#include "epn/model.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace epn {
namespace {

void accumulate(ParameterSet& grads, const std::string& name, std::vector<std::size_t> shape,
                const std::vector<double>& values) {
  auto it = grads.find(name);
  if (it == grads.end()) {
    grads.emplace(name, Array(std::move(shape), values));
    return;
  }
  if (it->second.data.size() != values.size()) throw Error("gradient size mismatch for " + name);
  for (std::size_t i = 0; i < values.size(); ++i) it->second.data[i] += values[i];
}

void fill_normal(std::vector<double>& w, double scale, Rng& rng) {
  for (double& v : w) v = scale * rng.normal();
}

Dense make_dense(std::size_t in, std::size_t out, Rng& rng) {
  Dense d(in, out);
  fill_normal(d.weights, std::sqrt(2.0 / static_cast<double>(in)), rng);
  return d;
}

void bind_dense(std::vector<Binding>& out, const std::string& name, Dense& d) {
  out.push_back({name + ".weights", {d.in_dim, d.out_dim}, &d.weights});
  out.push_back({name + ".bias", {d.out_dim}, &d.bias});
}

void accumulate_dense(ParameterSet& grads, const std::string& name, const Dense& d, const DenseGrads& g) {
  accumulate(grads, name + ".weights", {d.in_dim, d.out_dim}, g.d_weights);
  accumulate(grads, name + ".bias", {d.out_dim}, g.d_bias);
}

std::vector<double> leaky(std::span<const double> x) {
  std::vector<double> out(x.size());
  std::transform(x.begin(), x.end(), out.begin(), [](double v) { return leaky_relu(v); });
  return out;
}

void append_signs(std::vector<bool>& out, std::span<const double> pre) {
  for (double v : pre) out.push_back(v >= 0.0);
}

std::vector<double> scaled(std::vector<double> v, double s) {
  for (double& x : v) x *= s;
  return v;
}

}  // namespace

BatchGeometry prepare_batch(std::span<const PointCloud> clouds, const TrainConfig& config) {
  if (clouds.empty()) throw Error("empty batch");
  BatchGeometry batch;
  batch.clouds = clouds.size();
  const std::size_t levels = config.levels();
  batch.levels.resize(levels);
  std::vector<std::size_t> prev_offsets{0};
  for (const auto& cloud : clouds) {
    cloud.validate();
    batch.input.insert(batch.input.end(), cloud.points.begin(), cloud.points.end());
    prev_offsets.push_back(batch.input.size());
  }
  std::vector<std::vector<HierarchyLevel>> hierarchies;
  hierarchies.reserve(clouds.size());
  for (const auto& cloud : clouds) {
    hierarchies.push_back(build_hierarchy(cloud, levels, config.stride, config.radii, config.k_max));
  }
  for (std::size_t l = 0; l < levels; ++l) {
    auto& level = batch.levels[l];
    const std::size_t source_total = prev_offsets.back();
    const std::size_t k_max = config.k_max[l];
    level.neighborhoods.k_max = k_max;
    level.neighborhoods.source_size = source_total;
    level.neighborhoods.radius = config.radii[l];
    level.offsets.push_back(0);
    for (std::size_t b = 0; b < clouds.size(); ++b) {
      const auto& h = hierarchies[b][l];
      const auto& nbr = h.neighborhoods;
      for (std::size_t m = 0; m < nbr.centers(); ++m) {
        for (std::size_t idx : nbr.row(m)) {
          level.neighborhoods.neighbors.push_back(nbr.is_shadow(idx) ? source_total : idx + prev_offsets[b]);
        }
        level.neighborhoods.counts.push_back(nbr.counts[m]);
        level.neighborhoods.center_indices.push_back(nbr.center_indices[m] + prev_offsets[b]);
      }
      level.centers.insert(level.centers.end(), h.points.begin(), h.points.end());
      level.offsets.push_back(level.centers.size());
    }
    prev_offsets = level.offsets;
  }
  return batch;
}

ParameterSet export_bindings(const std::vector<Binding>& bindings) {
  ParameterSet out;
  for (const auto& b : bindings) out.emplace(b.name, Array(b.shape, *b.data));
  return out;
}

void import_bindings(const std::vector<Binding>& bindings, const ParameterSet& values) {
  for (const auto& b : bindings) {
    const auto it = values.find(b.name);
    if (it == values.end()) throw Error("missing parameter " + b.name);
    if (it->second.shape != b.shape) throw Error("shape mismatch for parameter " + b.name);
    *b.data = it->second.data;
  }
  if (values.size() != bindings.size()) throw Error("parameter set has unexpected entries");
}

// ---------------------------------------------------------------- backbone

Backbone::Backbone(const TrainConfig& config, const FiniteRotationGroup& group, Rng& rng) : group_(&group) {
  config.validate();
  std::size_t in = 1;
  for (std::size_t l = 0; l < config.levels(); ++l) {
    const std::size_t out = config.channels[l];
    SPConvBlock block;
    block.point.points = make_kernel_points(config.kernel_points, config.radii[l]);
    block.point.radius = config.radii[l];
    block.point.sigma = config.sigma_ratio * config.radii[l];
    block.point.kind = CorrelationKind::kLinear;
    block.point.in_channels = in;
    block.point.out_channels = out;
    block.point.weights.resize(config.kernel_points * in * out);
    fill_normal(block.point.weights, 1.0 / std::sqrt(static_cast<double>(config.kernel_points * in)), rng);
    block.group.neighbors = config.group_neighbors;
    block.group.in_channels = out;
    block.group.out_channels = out;
    block.group.weights.resize(config.group_neighbors * out * out);
    fill_normal(block.group.weights, 1.0 / std::sqrt(static_cast<double>(config.group_neighbors * out)), rng);
    block.bn_point = BatchNorm(out);
    block.bn_group = BatchNorm(out);
    blocks_.push_back(std::move(block));
    in = out;
  }
}

std::vector<GroupFeatures> Backbone::forward(const BatchGeometry& batch, BnMode mode, Record* record) {
  if (group_ == nullptr) throw Error("backbone is not initialized");
  if (batch.levels.size() != blocks_.size()) throw Error("batch geometry has the wrong number of levels");
  if (record != nullptr) {
    *record = Record{};
    record->mode = mode;
  }
  FeatureMap x = constant_features(batch.input, group_->order());
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    auto& block = blocks_[l];
    const auto& level = batch.levels[l];
    LevelRecord rec;
    rec.input = std::move(x);
    rec.conv1 = se3_point_conv(rec.input, block.point, level.neighborhoods, *group_, level.centers);
    rec.bn1 = mode == BnMode::kTrain ? batch_norm_train(rec.conv1, block.bn_point)
                                     : batch_norm_infer(rec.conv1, block.bn_point);
    rec.conv2_in = leaky_relu(rec.bn1);
    rec.conv2 = se3_group_conv(rec.conv2_in, block.group, *group_);
    rec.bn2 = mode == BnMode::kTrain ? batch_norm_train(rec.conv2, block.bn_group)
                                     : batch_norm_infer(rec.conv2, block.bn_group);
    x = leaky_relu(rec.bn2);
    if (record != nullptr) record->levels.push_back(std::move(rec));
  }

  const auto& offsets = batch.levels.back().offsets;
  std::vector<GroupFeatures> pooled(batch.clouds);
  const std::size_t width = x.group_size * x.channels;
  for (std::size_t b = 0; b < batch.clouds; ++b) {
    auto& p = pooled[b];
    p.group_size = x.group_size;
    p.channels = x.channels;
    p.values.assign(width, 0.0);
    const std::size_t count = offsets[b + 1] - offsets[b];
    for (std::size_t n = offsets[b]; n < offsets[b + 1]; ++n) {
      const double* src = x.values.data() + n * width;
      for (std::size_t i = 0; i < width; ++i) p.values[i] += src[i];
    }
    for (double& v : p.values) v /= static_cast<double>(count);
  }
  if (record != nullptr) {
    record->output = std::move(x);
    record->recorded = true;
  }
  return pooled;
}

void Backbone::backward(const BatchGeometry& batch, const Record& record, std::span<const GroupFeatures> d_pooled,
                        ParameterSet& grads) const {
  if (!record.recorded) throw UnrecordedError("backbone backward without a recorded forward pass");
  if (d_pooled.size() != batch.clouds) throw Error("backbone backward: one gradient per cloud expected");
  const auto& offsets = batch.levels.back().offsets;
  const FeatureMap& out = record.output;
  const std::size_t width = out.group_size * out.channels;
  std::vector<double> d(out.values.size(), 0.0);
  for (std::size_t b = 0; b < batch.clouds; ++b) {
    if (d_pooled[b].values.size() != width) throw Error("backbone backward: gradient shape mismatch");
    const double inv = 1.0 / static_cast<double>(offsets[b + 1] - offsets[b]);
    for (std::size_t n = offsets[b]; n < offsets[b + 1]; ++n) {
      for (std::size_t i = 0; i < width; ++i) d[n * width + i] = d_pooled[b].values[i] * inv;
    }
  }

  for (std::size_t l = blocks_.size(); l-- > 0;) {
    const auto& block = blocks_[l];
    const auto& rec = record.levels[l];
    const auto& level = batch.levels[l];
    const std::string name = "backbone.L" + std::to_string(l);
    const std::size_t c = block.group.out_channels;

    d = leaky_relu_backward(rec.bn2.values, d);
    auto bn2 = record.mode == BnMode::kTrain ? batch_norm_train_backward(rec.conv2, block.bn_group, d)
                                             : batch_norm_infer_backward(rec.conv2, block.bn_group, d);
    accumulate(grads, name + ".bn_group.gamma", {c}, bn2.d_gamma);
    accumulate(grads, name + ".bn_group.beta", {c}, bn2.d_beta);
    auto gc = se3_group_conv_backward(rec.conv2_in, block.group, *group_, bn2.d_input);
    accumulate(grads, name + ".group.weights", {block.group.neighbors, c, c}, gc.d_weights);

    d = leaky_relu_backward(rec.bn1.values, gc.d_input);
    auto bn1 = record.mode == BnMode::kTrain ? batch_norm_train_backward(rec.conv1, block.bn_point, d)
                                             : batch_norm_infer_backward(rec.conv1, block.bn_point, d);
    accumulate(grads, name + ".bn_point.gamma", {c}, bn1.d_gamma);
    accumulate(grads, name + ".bn_point.beta", {c}, bn1.d_beta);
    auto pc = se3_point_conv_backward(rec.input, block.point, level.neighborhoods, *group_, level.centers,
                                      bn1.d_input);
    accumulate(grads, name + ".point.weights", {block.point.size(), block.point.in_channels, c}, pc.d_weights);
    d = std::move(pc.d_input);
  }
}

void Backbone::recalibrate(std::span<const BatchGeometry> batches) {
  std::vector<double> momenta;
  for (auto& b : blocks_) momenta.insert(momenta.end(), {b.bn_point.momentum, b.bn_group.momentum});
  for (std::size_t k = 0; k < batches.size(); ++k) {
    const double m = 1.0 / static_cast<double>(k + 1);
    for (auto& b : blocks_) b.bn_point.momentum = b.bn_group.momentum = m;
    forward(batches[k], BnMode::kTrain, nullptr);
  }
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].bn_point.momentum = momenta[2 * i];
    blocks_[i].bn_group.momentum = momenta[2 * i + 1];
  }
}

std::vector<Binding> Backbone::parameters(const std::string& prefix) {
  std::vector<Binding> out;
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    auto& b = blocks_[l];
    const std::string name = prefix + ".L" + std::to_string(l);
    const std::size_t c = b.group.out_channels;
    out.push_back({name + ".point.weights", {b.point.size(), b.point.in_channels, c}, &b.point.weights});
    out.push_back({name + ".group.weights", {b.group.neighbors, c, c}, &b.group.weights});
    out.push_back({name + ".bn_point.gamma", {c}, &b.bn_point.gamma});
    out.push_back({name + ".bn_point.beta", {c}, &b.bn_point.beta});
    out.push_back({name + ".bn_group.gamma", {c}, &b.bn_group.gamma});
    out.push_back({name + ".bn_group.beta", {c}, &b.bn_group.beta});
  }
  return out;
}

std::vector<Binding> Backbone::buffers(const std::string& prefix) {
  std::vector<Binding> out;
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    auto& b = blocks_[l];
    const std::string name = prefix + ".L" + std::to_string(l);
    const std::size_t c = b.group.out_channels;
    out.push_back({name + ".bn_point.running_mean", {c}, &b.bn_point.running_mean});
    out.push_back({name + ".bn_point.running_var", {c}, &b.bn_point.running_var});
    out.push_back({name + ".bn_group.running_mean", {c}, &b.bn_group.running_mean});
    out.push_back({name + ".bn_group.running_var", {c}, &b.bn_group.running_var});
  }
  return out;
}

std::vector<bool> Backbone::activation_pattern(const Record& record) {
  std::vector<bool> out;
  for (const auto& rec : record.levels) {
    append_signs(out, rec.bn1.values);
    append_signs(out, rec.bn2.values);
  }
  return out;
}

// ---------------------------------------------------------------- detection head

DetectionHead::DetectionHead(std::size_t in, std::size_t hidden, const FiniteRotationGroup& group, Rng& rng)
    : group_(&group),
      hidden_(make_dense(in, hidden, rng)),
      logit_(make_dense(hidden, 1, rng)),
      quat_(make_dense(hidden, 4, rng)) {
  for (double& w : quat_.weights) w *= 0.1;
  quat_.bias = {1.0, 0.0, 0.0, 0.0};
  for (const Mat3& g : group.elements()) conjugations_.push_back(conjugation_matrix(quaternion_from_rotation(g)));
}

DetectionOutput DetectionHead::Output::as_detection() const {
  DetectionOutput out;
  out.logits = logits;
  for (std::size_t g = 0; g < logits.size(); ++g) {
    out.residuals.push_back(
        UnitQuaternion::normalized(world_raw[4 * g], world_raw[4 * g + 1], world_raw[4 * g + 2], world_raw[4 * g + 3]));
  }
  return out;
}

DetectionHead::Output DetectionHead::forward(const GroupFeatures& features, Record* record) const {
  if (group_ == nullptr) throw Error("detection head is not initialized");
  if (features.group_size != group_->order() || features.channels != hidden_.in_dim) {
    throw Error("detection head: feature shape mismatch");
  }
  const std::size_t n = features.group_size;
  auto pre = hidden_.apply(features.values, n);
  auto h = leaky(pre);
  Output out;
  out.logits = logit_.apply(h, n);
  auto local = quat_.apply(h, n);
  out.world_raw.resize(4 * n);
  for (std::size_t g = 0; g < n; ++g) {
    const Eigen::Vector4d w = conjugations_[g] * Eigen::Map<const Eigen::Vector4d>(local.data() + 4 * g);
    std::copy(w.data(), w.data() + 4, out.world_raw.begin() + static_cast<std::ptrdiff_t>(4 * g));
  }
  if (record != nullptr) {
    record->input = features;
    record->hidden_pre = std::move(pre);
    record->hidden = std::move(h);
    record->local_raw = std::move(local);
    record->recorded = true;
  }
  return out;
}

std::vector<double> DetectionHead::backward(const Record& record, std::span<const double> d_logits,
                                            std::span<const double> d_world_raw, ParameterSet& grads,
                                            const std::string& prefix) const {
  if (!record.recorded) throw UnrecordedError("detection head backward without a recorded forward pass");
  const std::size_t n = record.input.group_size;
  std::vector<double> d_local(4 * n);
  for (std::size_t g = 0; g < n; ++g) {
    const Eigen::Vector4d v =
        conjugations_[g].transpose() * Eigen::Map<const Eigen::Vector4d>(d_world_raw.data() + 4 * g);
    std::copy(v.data(), v.data() + 4, d_local.begin() + static_cast<std::ptrdiff_t>(4 * g));
  }
  auto gl = dense_backward(logit_, record.hidden, n, d_logits);
  auto gq = dense_backward(quat_, record.hidden, n, d_local);
  accumulate_dense(grads, prefix + ".logit", logit_, gl);
  accumulate_dense(grads, prefix + ".quat", quat_, gq);
  for (std::size_t i = 0; i < gl.d_input.size(); ++i) gl.d_input[i] += gq.d_input[i];
  auto d_pre = leaky_relu_backward(record.hidden_pre, gl.d_input);
  auto gh = dense_backward(hidden_, record.input.values, n, d_pre);
  accumulate_dense(grads, prefix + ".hidden", hidden_, gh);
  return gh.d_input;
}

std::vector<Binding> DetectionHead::parameters(const std::string& prefix) {
  std::vector<Binding> out;
  bind_dense(out, prefix + ".hidden", hidden_);
  bind_dense(out, prefix + ".logit", logit_);
  bind_dense(out, prefix + ".quat", quat_);
  return out;
}

std::vector<bool> DetectionHead::activation_pattern(const Record& record) const {
  std::vector<bool> out;
  append_signs(out, record.hidden_pre);
  return out;
}

// ---------------------------------------------------------------- quaternion head

QuaternionHead::QuaternionHead(std::size_t in, std::size_t group_size, std::size_t hidden, Rng& rng)
    : hidden_(make_dense(in * group_size, hidden, rng)), out_(make_dense(hidden, 4, rng)) {
  for (double& w : out_.weights) w *= 0.1;
  out_.bias = {1.0, 0.0, 0.0, 0.0};
}

Eigen::Vector4d QuaternionHead::forward(const GroupFeatures& features, Record* record) const {
  if (features.values.size() != hidden_.in_dim) throw Error("quaternion head: feature shape mismatch");
  auto pre = hidden_.apply(features.values, 1);
  auto h = leaky(pre);
  const auto q = out_.apply(h, 1);
  if (record != nullptr) {
    record->input = features.values;
    record->hidden_pre = std::move(pre);
    record->hidden = std::move(h);
    record->recorded = true;
  }
  return {q[0], q[1], q[2], q[3]};
}

std::vector<double> QuaternionHead::backward(const Record& record, const Eigen::Vector4d& d_raw, ParameterSet& grads,
                                             const std::string& prefix) const {
  if (!record.recorded) throw UnrecordedError("quaternion head backward without a recorded forward pass");
  const std::vector<double> d(d_raw.data(), d_raw.data() + 4);
  auto go = dense_backward(out_, record.hidden, 1, d);
  accumulate_dense(grads, prefix + ".out", out_, go);
  auto d_pre = leaky_relu_backward(record.hidden_pre, go.d_input);
  auto gh = dense_backward(hidden_, record.input, 1, d_pre);
  accumulate_dense(grads, prefix + ".hidden", hidden_, gh);
  return gh.d_input;
}

std::vector<Binding> QuaternionHead::parameters(const std::string& prefix) {
  std::vector<Binding> out;
  bind_dense(out, prefix + ".hidden", hidden_);
  bind_dense(out, prefix + ".out", out_);
  return out;
}

std::vector<bool> QuaternionHead::activation_pattern(const Record& record) const {
  std::vector<bool> out;
  append_signs(out, record.hidden_pre);
  return out;
}

// ---------------------------------------------------------------- classifier head

ClassifierHead::ClassifierHead(std::size_t in, std::size_t hidden, std::size_t classes, PoolingKind pooling,
                               double temperature, Rng& rng)
    : pooling_(pooling), temperature_(temperature) {
  if (pooling_ == PoolingKind::kAttentive) {
    att_hidden_ = make_dense(in, hidden, rng);
    att_out_ = make_dense(hidden, 1, rng);
  }
  fc_ = make_dense(in, classes, rng);
}

ClassifierHead::Output ClassifierHead::forward(const GroupFeatures& features, Record* record) const {
  if (features.channels != fc_.in_dim) throw Error("classifier head: feature shape mismatch");
  Output out;
  Record rec;
  if (pooling_ == PoolingKind::kAttentive) {
    rec.att_pre = att_hidden_.apply(features.values, features.group_size);
    rec.att_hidden = leaky(rec.att_pre);
    rec.att_logits = att_out_.apply(rec.att_hidden, features.group_size);
    rec.attention = attention_from_logits(rec.att_logits);
    rec.pooled = ga_pooling(features, rec.attention, temperature_);
    out.attention_logits = rec.att_logits;
    out.attention = rec.attention;
  } else if (pooling_ == PoolingKind::kMax) {
    rec.pooled = pool_max(features);
  } else {
    rec.pooled = pool_mean(features);
  }
  out.logits = classify(rec.pooled, fc_);
  if (record != nullptr) {
    rec.input = features;
    rec.recorded = true;
    *record = std::move(rec);
  }
  return out;
}

std::vector<double> ClassifierHead::backward(const Record& record, std::span<const double> d_logits,
                                             std::span<const double> d_attention_logits, ParameterSet& grads,
                                             const std::string& prefix) const {
  if (!record.recorded) throw UnrecordedError("classifier head backward without a recorded forward pass");
  auto gf = dense_backward(fc_, record.pooled, 1, d_logits);
  accumulate_dense(grads, prefix + ".fc", fc_, gf);
  const auto& x = record.input;
  if (pooling_ == PoolingKind::kMax) return pool_max_backward(x, gf.d_input);
  if (pooling_ == PoolingKind::kMean) return pool_mean_backward(x, gf.d_input);

  auto gp = ga_pooling_backward(x, record.attention, temperature_, gf.d_input);
  auto d_s = softmax_backward(record.attention.weights, gp.d_attention);
  if (!d_attention_logits.empty()) {
    if (d_attention_logits.size() != d_s.size()) throw Error("attention gradient size mismatch");
    for (std::size_t g = 0; g < d_s.size(); ++g) d_s[g] += d_attention_logits[g];
  }
  auto go = dense_backward(att_out_, record.att_hidden, x.group_size, d_s);
  accumulate_dense(grads, prefix + ".att_out", att_out_, go);
  auto d_pre = leaky_relu_backward(record.att_pre, go.d_input);
  auto gh = dense_backward(att_hidden_, x.values, x.group_size, d_pre);
  accumulate_dense(grads, prefix + ".att_hidden", att_hidden_, gh);
  for (std::size_t i = 0; i < gp.d_features.size(); ++i) gp.d_features[i] += gh.d_input[i];
  return gp.d_features;
}

std::vector<Binding> ClassifierHead::parameters(const std::string& prefix) {
  std::vector<Binding> out;
  if (pooling_ == PoolingKind::kAttentive) {
    bind_dense(out, prefix + ".att_hidden", att_hidden_);
    bind_dense(out, prefix + ".att_out", att_out_);
  }
  bind_dense(out, prefix + ".fc", fc_);
  return out;
}

std::vector<bool> ClassifierHead::activation_pattern(const Record& record) const {
  std::vector<bool> out;
  append_signs(out, record.att_pre);
  if (pooling_ == PoolingKind::kMax) {
    const auto& x = record.input;
    for (std::size_t c = 0; c < x.channels; ++c) {
      std::size_t best = 0;
      for (std::size_t g = 1; g < x.group_size; ++g) {
        if (x.values[g * x.channels + c] > x.values[best * x.channels + c]) best = g;
      }
      for (std::size_t g = 0; g < x.group_size; ++g) out.push_back(g == best);
    }
  }
  return out;
}

// ---------------------------------------------------------------- models

PoseModel::PoseModel(const TrainConfig& config, const FiniteRotationGroup& group)
    : config_(config), group_(&group) {
  config_.validate();
  if (group.kind() != config_.group) throw Error("pose model: group does not match the configuration");
  Rng rng(config_.seed);
  backbone_ = Backbone(config_, group, rng);
  const std::size_t d = backbone_.out_channels();
  if (config_.pose_head == PoseHeadKind::kDetection) {
    detection_ = DetectionHead(d, config_.hidden, group, rng);
  } else {
    quaternion_ = QuaternionHead(d, group.order(), config_.hidden, rng);
  }
}

BatchLoss PoseModel::loss(std::span<const PointCloud> clouds, std::span<const Mat3> rotations, bool with_grads) {
  if (clouds.size() != rotations.size()) throw Error("pose loss: one rotation per cloud expected");
  const auto batch = prepare_batch(clouds, config_);
  Backbone::Record brec;
  const auto pooled = backbone_.forward(batch, BnMode::kTrain, &brec);
  const double inv_b = 1.0 / static_cast<double>(clouds.size());

  BatchLoss result;
  result.kink_pattern = Backbone::activation_pattern(brec);
  std::vector<GroupFeatures> d_pooled(clouds.size());
  for (std::size_t b = 0; b < clouds.size(); ++b) {
    std::vector<double> d_feat;
    if (config_.pose_head == PoseHeadKind::kDetection) {
      DetectionHead::Record hrec;
      const auto out = detection_.forward(pooled[b], &hrec);
      auto lg = detection_loss_backward(out.logits, out.world_raw, rotations[b], *group_, config_.lambda);
      result.loss += lg.loss.total * inv_b;
      const auto pattern = detection_.activation_pattern(hrec);
      result.kink_pattern.insert(result.kink_pattern.end(), pattern.begin(), pattern.end());
      if (with_grads) {
        d_feat = detection_.backward(hrec, scaled(lg.d_logits, inv_b), scaled(lg.d_residuals, inv_b),
                                     result.grads);
      }
    } else {
      QuaternionHead::Record hrec;
      const auto q = quaternion_.forward(pooled[b], &hrec);
      const auto lg = rotation_frobenius_backward(q, rotations[b]);
      result.loss += lg.loss * inv_b;
      const auto pattern = quaternion_.activation_pattern(hrec);
      result.kink_pattern.insert(result.kink_pattern.end(), pattern.begin(), pattern.end());
      if (with_grads) d_feat = quaternion_.backward(hrec, lg.d_raw * inv_b, result.grads);
    }
    d_pooled[b] = GroupFeatures{pooled[b].group_size, pooled[b].channels, std::move(d_feat)};
  }
  if (with_grads) backbone_.backward(batch, brec, d_pooled, result.grads);
  return result;
}

void PoseModel::recalibrate(std::span<const std::vector<PointCloud>> batches) {
  std::vector<BatchGeometry> geometry;
  for (const auto& b : batches) geometry.push_back(prepare_batch(b, config_));
  backbone_.recalibrate(geometry);
}

DetectionOutput PoseModel::detect(const PointCloud& cloud) {
  if (config_.pose_head != PoseHeadKind::kDetection) throw Error("detect() needs the detection head");
  const auto batch = prepare_batch(std::span<const PointCloud>(&cloud, 1), config_);
  const auto pooled = backbone_.forward(batch, BnMode::kInfer, nullptr);
  return detection_.forward(pooled[0], nullptr).as_detection();
}

Mat3 PoseModel::predict(const PointCloud& cloud) {
  if (config_.pose_head == PoseHeadKind::kDetection) return predict_rotation(detect(cloud), *group_);
  const auto batch = prepare_batch(std::span<const PointCloud>(&cloud, 1), config_);
  const auto pooled = backbone_.forward(batch, BnMode::kInfer, nullptr);
  const Eigen::Vector4d q = quaternion_.forward(pooled[0], nullptr);
  return rotation_from_quaternion(UnitQuaternion::normalized(q[0], q[1], q[2], q[3]));
}

std::vector<Binding> PoseModel::parameters() {
  auto out = backbone_.parameters();
  auto head = config_.pose_head == PoseHeadKind::kDetection ? detection_.parameters() : quaternion_.parameters();
  out.insert(out.end(), head.begin(), head.end());
  return out;
}

std::vector<Binding> PoseModel::state() {
  auto out = parameters();
  auto buffers = backbone_.buffers();
  out.insert(out.end(), buffers.begin(), buffers.end());
  return out;
}

ClsModel::ClsModel(const TrainConfig& config, const FiniteRotationGroup& group, std::size_t classes)
    : config_(config), group_(&group) {
  config_.validate();
  if (group.kind() != config_.group) throw Error("classifier: group does not match the configuration");
  if (classes < 2) throw Error("classifier needs at least two classes");
  Rng rng(config_.seed);
  backbone_ = Backbone(config_, group, rng);
  head_ = ClassifierHead(backbone_.out_channels(), config_.hidden, classes, config_.pooling, config_.temperature, rng);
}

BatchLoss ClsModel::loss(std::span<const PointCloud> clouds, std::span<const std::size_t> labels,
                         std::span<const Mat3> rotations, bool with_grads) {
  if (clouds.size() != labels.size()) throw Error("classifier loss: one label per cloud expected");
  const bool supervise = config_.pooling == PoolingKind::kAttentive && config_.supervise_attention;
  if (supervise && rotations.size() != clouds.size()) {
    throw Error("classifier loss: attention supervision needs one rotation per cloud");
  }
  const auto batch = prepare_batch(clouds, config_);
  Backbone::Record brec;
  const auto pooled = backbone_.forward(batch, BnMode::kTrain, &brec);
  const double inv_b = 1.0 / static_cast<double>(clouds.size());

  BatchLoss result;
  result.kink_pattern = Backbone::activation_pattern(brec);
  std::vector<GroupFeatures> d_pooled(clouds.size());
  for (std::size_t b = 0; b < clouds.size(); ++b) {
    ClassifierHead::Record hrec;
    const auto out = head_.forward(pooled[b], &hrec);
    auto ce = cross_entropy_backward(out.logits, labels[b]);
    result.loss += ce.loss * inv_b;
    std::vector<double> d_att;
    if (supervise) {
      const std::size_t u = nearest_group_element(*group_, rotations[b]).index;
      auto sa = cross_entropy_backward(out.attention_logits, u);
      result.loss += config_.lambda * sa.loss * inv_b;
      d_att = scaled(std::move(sa.d_logits), config_.lambda * inv_b);
    }
    const auto pattern = head_.activation_pattern(hrec);
    result.kink_pattern.insert(result.kink_pattern.end(), pattern.begin(), pattern.end());
    if (with_grads) {
      auto d_feat = head_.backward(hrec, scaled(std::move(ce.d_logits), inv_b), d_att, result.grads);
      d_pooled[b] = GroupFeatures{pooled[b].group_size, pooled[b].channels, std::move(d_feat)};
    }
  }
  if (with_grads) backbone_.backward(batch, brec, d_pooled, result.grads);
  return result;
}

ClassifierHead::Output ClsModel::predict(const PointCloud& cloud) {
  const auto batch = prepare_batch(std::span<const PointCloud>(&cloud, 1), config_);
  const auto pooled = backbone_.forward(batch, BnMode::kInfer, nullptr);
  return head_.forward(pooled[0], nullptr);
}

void ClsModel::recalibrate(std::span<const std::vector<PointCloud>> batches) {
  std::vector<BatchGeometry> geometry;
  for (const auto& b : batches) geometry.push_back(prepare_batch(b, config_));
  backbone_.recalibrate(geometry);
}

std::vector<double> ClsModel::descriptor(const PointCloud& cloud) {
  const auto batch = prepare_batch(std::span<const PointCloud>(&cloud, 1), config_);
  const auto pooled = backbone_.forward(batch, BnMode::kInfer, nullptr);
  ClassifierHead::Record rec;
  head_.forward(pooled[0], &rec);
  return rec.pooled;
}

std::vector<Binding> ClsModel::parameters() {
  auto out = backbone_.parameters();
  auto head = head_.parameters();
  out.insert(out.end(), head.begin(), head.end());
  return out;
}

std::vector<Binding> ClsModel::state() {
  auto out = parameters();
  auto buffers = backbone_.buffers();
  out.insert(out.end(), buffers.begin(), buffers.end());
  return out;
}

}  // namespace epn
