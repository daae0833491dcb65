#include "epn/toy.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "epn/model.hpp"

namespace epn {
namespace {

constexpr std::uint64_t kShapeStream = 0x5348415045ULL;
constexpr std::uint64_t kTrainStream = 0x545241494EULL;
constexpr std::uint64_t kEvalStream = 0x4556414CULL;

void add_bar(std::vector<Vec3>& out, const Vec3& dir, double length, std::size_t count, double jitter, Rng& rng) {
  for (std::size_t i = 0; i < count; ++i) {
    const double t = length * (static_cast<double>(i) + 0.5) / static_cast<double>(count);
    out.push_back(t * dir + jitter * Vec3(rng.normal(), rng.normal(), rng.normal()));
  }
}

PointCloud normalize(std::vector<Vec3> pts) {
  Vec3 c = Vec3::Zero();
  for (const auto& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  double scale = 0.0;
  for (auto& p : pts) {
    p -= c;
    scale = std::max(scale, p.norm());
  }
  for (auto& p : pts) p /= scale;
  return PointCloud{std::move(pts), {}};
}

std::vector<std::size_t> split_counts(std::size_t total, std::span<const double> lengths) {
  const double sum = std::accumulate(lengths.begin(), lengths.end(), 0.0);
  std::vector<std::size_t> counts;
  std::size_t used = 0;
  for (std::size_t i = 0; i + 1 < lengths.size(); ++i) {
    counts.push_back(static_cast<std::size_t>(std::llround(static_cast<double>(total) * lengths[i] / sum)));
    used += counts.back();
  }
  counts.push_back(total - used);
  return counts;
}

template <typename Model>
void adam_step(Model& model, Adam& adam, const ParameterSet& grads, double lr) {
  auto bindings = model.parameters();
  auto params = export_bindings(bindings);
  adam.step(params, grads, lr);
  import_bindings(bindings, params);
}

[[noreturn]] void diverged(std::size_t iteration, const TrainConfig& config, const std::string& reason = {}) {
  throw Error("training diverged at iteration " + std::to_string(iteration) + " (seed " + std::to_string(config.seed) +
              ")" + (reason.empty() ? "" : ": " + reason));
}

// After the first update, a failing forward pass means the weights blew up.
template <typename F>
auto guarded_step(F&& step, std::size_t iteration, const TrainConfig& config) {
  if (iteration == 0) return step();
  try {
    return step();
  } catch (const Error& e) {
    diverged(iteration, config, e.what());
  }
}

void require_finite_loss(double loss, std::size_t iteration, const TrainConfig& config) {
  if (!std::isfinite(loss)) diverged(iteration, config);
}

template <typename Model>
void require_finite_parameters(Model& model, std::size_t iteration, const TrainConfig& config) {
  for (const auto& b : model.parameters()) {
    for (const double v : *b.data) {
      if (!std::isfinite(v)) diverged(iteration, config);
    }
  }
}

std::size_t count_parameters(const std::vector<Binding>& bindings) {
  std::size_t n = 0;
  for (const auto& b : bindings) n += b.data->size();
  return n;
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::distance(v.begin(), std::max_element(v.begin(), v.end())));
}

}  // namespace

PointCloud bar_triple_shape(std::size_t points, double jitter, Rng& rng) {
  if (points < 3) throw Error("bar triple needs at least 3 points");
  const std::array<double, 3> lengths{1.0, 0.65, 0.35};
  const auto counts = split_counts(points, lengths);
  std::vector<Vec3> pts;
  add_bar(pts, Vec3::UnitX(), lengths[0], counts[0], jitter, rng);
  add_bar(pts, Vec3::UnitY(), lengths[1], counts[1], jitter, rng);
  add_bar(pts, Vec3::UnitZ(), lengths[2], counts[2], jitter, rng);
  return normalize(std::move(pts));
}

PointCloud l_shape(std::size_t points, double jitter, Rng& rng) {
  if (points < 2) throw Error("L-shape needs at least 2 points");
  const std::array<double, 2> lengths{1.0, 0.9};
  const auto counts = split_counts(points, lengths);
  std::vector<Vec3> pts;
  add_bar(pts, Vec3::UnitX(), lengths[0], counts[0], jitter, rng);
  add_bar(pts, Vec3::UnitY(), lengths[1], counts[1], jitter, rng);
  return normalize(std::move(pts));
}

PointCloud rotate_cloud(const PointCloud& cloud, const Mat3& r) {
  PointCloud out = cloud;
  for (auto& p : out.points) p = r * p;
  return out;
}

PointCloud translate_cloud(const PointCloud& cloud, const Vec3& t) {
  PointCloud out = cloud;
  for (auto& p : out.points) p += t;
  return out;
}

ErrorSummary summarize_errors(std::vector<double> errors) {
  if (errors.empty()) throw Error("no errors to summarize");
  ErrorSummary s;
  s.mean = std::accumulate(errors.begin(), errors.end(), 0.0) / static_cast<double>(errors.size());
  s.max = *std::max_element(errors.begin(), errors.end());
  std::sort(errors.begin(), errors.end());
  const std::size_t n = errors.size();
  s.median = n % 2 == 1 ? errors[n / 2] : 0.5 * (errors[n / 2 - 1] + errors[n / 2]);
  return s;
}

std::vector<double> pose_errors(const PosePredictor& predict, const PointCloud& shape,
                                std::span<const Mat3> rotations) {
  std::vector<double> errors;
  errors.reserve(rotations.size());
  for (const Mat3& r : rotations) errors.push_back(angular_distance(predict(rotate_cloud(shape, r)), r));
  return errors;
}

PoseRun toy_pose_task(const TrainConfig& config) {
  config.validate();
  const auto group = build_group(config.group);
  Rng shape_rng(config.seed ^ kShapeStream);
  const PointCloud shape = bar_triple_shape(config.points, 0.02, shape_rng);

  Rng eval_rng(config.seed ^ kEvalStream);
  std::vector<Mat3> eval_rotations(config.eval_rotations);
  for (auto& r : eval_rotations) r = eval_rng.rotation();

  PoseModel model(config, group);
  PoseRun run;
  run.report.config = config;
  run.report.parameters = count_parameters(model.parameters());
  const PosePredictor predictor = [&](const PointCloud& c) { return model.predict(c); };
  run.report.untrained = summarize_errors(pose_errors(predictor, shape, eval_rotations));

  Adam adam({config.lr, config.beta1, config.beta2, 1e-8});
  Rng train_rng(config.seed ^ kTrainStream);
  std::vector<PointCloud> clouds(config.batch_size);
  std::vector<Mat3> rotations(config.batch_size);
  for (std::size_t it = 0; it < config.iterations; ++it) {
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      rotations[b] = train_rng.rotation();
      clouds[b] = rotate_cloud(shape, rotations[b]);
    }
    auto step = guarded_step([&] { return model.loss(clouds, rotations, true); }, it, config);
    require_finite_loss(step.loss, it, config);
    run.report.losses.push_back(step.loss);
    adam_step(model, adam, step.grads,
              decayed_learning_rate(config.lr, it, config.decay_every, config.decay_factor));
    require_finite_parameters(model, it, config);
  }

  std::vector<std::vector<PointCloud>> calibration(config.bn_calibration_batches);
  for (auto& batch : calibration) {
    for (std::size_t b = 0; b < config.batch_size; ++b) batch.push_back(rotate_cloud(shape, train_rng.rotation()));
  }
  model.recalibrate(calibration);

  run.report.trained = summarize_errors(pose_errors(predictor, shape, eval_rotations));
  run.state = export_bindings(model.state());
  return run;
}

ClassShapeFn default_class_shapes(std::size_t points) {
  return [points](std::size_t label, Rng& rng) {
    return label == 0 ? bar_triple_shape(points, 0.02, rng) : l_shape(points, 0.02, rng);
  };
}

ClsRun toy_cls_task(const TrainConfig& config) { return toy_cls_task(config, default_class_shapes(config.points)); }

ClsRun toy_cls_task(const TrainConfig& config, const ClassShapeFn& shapes) {
  config.validate();
  constexpr std::size_t kClasses = 2;
  const auto group = build_group(config.group);

  struct Sample {
    PointCloud cloud;
    std::size_t label;
    Mat3 rotation;
  };
  Rng eval_rng(config.seed ^ kEvalStream);
  std::vector<Sample> eval;
  for (std::size_t label = 0; label < kClasses; ++label) {
    for (std::size_t i = 0; i < config.eval_per_class; ++i) {
      const Mat3 r = eval_rng.rotation();
      eval.push_back({rotate_cloud(shapes(label, eval_rng), r), label, r});
    }
  }

  ClsRun run;
  run.config = config;
  for (PoolingKind pooling : config.pooling_variants) {
    TrainConfig cfg = config;
    cfg.pooling = pooling;
    ClsModel model(cfg, group, kClasses);
    ClsVariantReport report;
    report.pooling = pooling;
    report.parameters = count_parameters(model.parameters());

    auto accuracy = [&] {
      std::size_t correct = 0;
      for (const auto& s : eval) correct += argmax(model.predict(s.cloud).logits) == s.label ? 1 : 0;
      return static_cast<double>(correct) / static_cast<double>(eval.size());
    };
    report.untrained_accuracy = accuracy();

    Adam adam({cfg.lr, cfg.beta1, cfg.beta2, 1e-8});
    Rng train_rng(cfg.seed ^ kTrainStream);
    std::vector<PointCloud> clouds(cfg.batch_size);
    std::vector<std::size_t> labels(cfg.batch_size);
    std::vector<Mat3> rotations(cfg.batch_size);
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
      for (std::size_t b = 0; b < cfg.batch_size; ++b) {
        labels[b] = static_cast<std::size_t>(train_rng.below(kClasses));
        rotations[b] = train_rng.rotation();
        clouds[b] = rotate_cloud(shapes(labels[b], train_rng), rotations[b]);
      }
      auto step = guarded_step([&] { return model.loss(clouds, labels, rotations, true); }, it, cfg);
      require_finite_loss(step.loss, it, cfg);
      report.losses.push_back(step.loss);
      adam_step(model, adam, step.grads, decayed_learning_rate(cfg.lr, it, cfg.decay_every, cfg.decay_factor));
      require_finite_parameters(model, it, cfg);
    }

    std::vector<std::vector<PointCloud>> calibration(cfg.bn_calibration_batches);
    for (auto& batch : calibration) {
      for (std::size_t b = 0; b < cfg.batch_size; ++b) {
        const auto label = static_cast<std::size_t>(train_rng.below(kClasses));
        batch.push_back(rotate_cloud(shapes(label, train_rng), train_rng.rotation()));
      }
    }
    model.recalibrate(calibration);

    report.accuracy = accuracy();
    if (pooling == PoolingKind::kAttentive) {
      report.confidence_histogram.assign(10, 0);
      for (const auto& s : eval) {
        const auto out = model.predict(s.cloud);
        const double c = *std::max_element(out.attention.weights.begin(), out.attention.weights.end());
        report.confidence_histogram[std::min<std::size_t>(9, static_cast<std::size_t>(c * 10.0))] += 1;
      }
    }
    run.variants.push_back(std::move(report));
    run.states.push_back(export_bindings(model.state()));
  }
  return run;
}

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json pooling = nlohmann::json::array();
  for (const PoolingKind kind : c.pooling_variants) pooling.push_back(to_string(kind));
  return {
      {"lr", c.lr},
      {"beta1", c.beta1},
      {"beta2", c.beta2},
      {"batch_size", c.batch_size},
      {"iterations", c.iterations},
      {"decay_every", c.decay_every},
      {"decay_factor", c.decay_factor},
      {"seed", c.seed},
      {"group", to_string(c.group)},
      {"points", c.points},
      {"stride", c.stride},
      {"radii", c.radii},
      {"k_max", c.k_max},
      {"channels", c.channels},
      {"kernel_points", c.kernel_points},
      {"sigma_ratio", c.sigma_ratio},
      {"group_neighbors", c.group_neighbors},
      {"hidden", c.hidden},
      {"lambda", c.lambda},
      {"temperature", c.temperature},
      {"margin", c.margin},
      {"pooling", pooling},
      {"pose_head", to_string(c.pose_head)},
      {"supervise_attention", c.supervise_attention},
      {"eval_rotations", c.eval_rotations},
      {"eval_per_class", c.eval_per_class},
      {"bn_calibration_batches", c.bn_calibration_batches},
  };
}

namespace {
nlohmann::json summary_json(const ErrorSummary& s) {
  return {{"mean_deg", s.mean}, {"median_deg", s.median}, {"max_deg", s.max}};
}
}  // namespace

nlohmann::json to_json(const PoseReport& r) {
  return {
      {"task", "pose"},
      {"config", to_json(r.config)},
      {"parameters", r.parameters},
      {"untrained", summary_json(r.untrained)},
      {"trained", summary_json(r.trained)},
      {"final_loss", r.losses.empty() ? 0.0 : r.losses.back()},
      {"losses", r.losses},
  };
}

nlohmann::json to_json(const ClsRun& run) {
  nlohmann::json variants = nlohmann::json::array();
  for (const auto& v : run.variants) {
    variants.push_back({
        {"pooling", to_string(v.pooling)},
        {"parameters", v.parameters},
        {"untrained_accuracy", v.untrained_accuracy},
        {"accuracy", v.accuracy},
        {"confidence_histogram",
         v.confidence_histogram.empty() ? nlohmann::json(nullptr) : nlohmann::json(v.confidence_histogram)},
        {"final_loss", v.losses.empty() ? 0.0 : v.losses.back()},
        {"losses", v.losses},
    });
  }
  return {{"task", "cls"}, {"config", to_json(run.config)}, {"variants", variants}};
}

}  // namespace epn
