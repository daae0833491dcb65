#include "epn/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "epn/geom.hpp"

namespace epn {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size()) throw Error("config: '" + key + "' expects a number, got '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    throw Error("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error("config: '" + key + "' expects true/false, got '" + v + "'");
}

template <typename T, typename F>
std::vector<T> to_list(const std::string& key, const std::string& v, F convert) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(static_cast<T>(convert(key, trim(item))));
  if (out.empty()) throw Error("config: '" + key + "' expects a comma-separated list");
  return out;
}

}  // namespace

PoolingKind parse_pooling(std::string_view name) {
  if (name == "attentive" || name == "ga") return PoolingKind::kAttentive;
  if (name == "max") return PoolingKind::kMax;
  if (name == "mean") return PoolingKind::kMean;
  throw Error("unknown pooling '" + std::string(name) + "' (expected attentive, max or mean)");
}

std::string to_string(PoolingKind kind) {
  switch (kind) {
    case PoolingKind::kAttentive: return "attentive";
    case PoolingKind::kMax: return "max";
    case PoolingKind::kMean: return "mean";
  }
  return "unknown";
}

PoseHeadKind parse_pose_head(std::string_view name) {
  if (name == "detection") return PoseHeadKind::kDetection;
  if (name == "quaternion") return PoseHeadKind::kQuaternion;
  throw Error("unknown pose head '" + std::string(name) + "' (expected detection or quaternion)");
}

std::string to_string(PoseHeadKind kind) {
  return kind == PoseHeadKind::kDetection ? "detection" : "quaternion";
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw Error("config: lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw Error("config: betas must be in [0, 1)");
  if (batch_size < 1 || iterations < 1) throw Error("config: batch_size and iterations must be positive");
  if (!(decay_factor > 0.0)) throw Error("config: decay_factor must be positive");
  if (radii.empty()) throw Error("config: need at least one level");
  if (k_max.size() != radii.size() || channels.size() != radii.size()) {
    throw Error("config: radii, k_max and channels must have one entry per level");
  }
  for (double r : radii) {
    if (!(r > 0.0)) throw Error("config: radii must be positive");
  }
  for (std::size_t k : k_max) {
    if (k < 1) throw Error("config: k_max entries must be >= 1");
  }
  for (std::size_t c : channels) {
    if (c < 1) throw Error("config: channel counts must be >= 1");
  }
  if (points < 2 || stride < 1 || kernel_points < 1 || hidden < 1) throw Error("config: sizes must be positive");
  if (group_neighbors < 1 || group_neighbors > expected_order(group)) {
    throw Error("config: group_neighbors must be in [1, |G|]");
  }
  if (!(sigma_ratio > 0.0) || !(temperature > 0.0) || lambda < 0.0) {
    throw Error("config: sigma_ratio and temperature must be positive, lambda non-negative");
  }
  if (pooling_variants.empty()) throw Error("config: no pooling variant selected");
  if (eval_rotations < 1 || eval_per_class < 1) throw Error("config: evaluation sizes must be positive");
}

TrainConfig parse_train_config(std::string_view text, TrainConfig cfg) {
  using Setter = std::function<void(const std::string&, const std::string&)>;
  const std::map<std::string, Setter, std::less<>> setters = {
      {"lr", [&](auto& k, auto& v) { cfg.lr = to_double(k, v); }},
      {"beta1", [&](auto& k, auto& v) { cfg.beta1 = to_double(k, v); }},
      {"beta2", [&](auto& k, auto& v) { cfg.beta2 = to_double(k, v); }},
      {"batch_size", [&](auto& k, auto& v) { cfg.batch_size = to_u64(k, v); }},
      {"iterations", [&](auto& k, auto& v) { cfg.iterations = to_u64(k, v); }},
      {"decay_every", [&](auto& k, auto& v) { cfg.decay_every = to_u64(k, v); }},
      {"decay_factor", [&](auto& k, auto& v) { cfg.decay_factor = to_double(k, v); }},
      {"seed", [&](auto& k, auto& v) { cfg.seed = to_u64(k, v); }},
      {"group", [&](auto&, auto& v) { cfg.group = parse_group_kind(v); }},
      {"points", [&](auto& k, auto& v) { cfg.points = to_u64(k, v); }},
      {"stride", [&](auto& k, auto& v) { cfg.stride = to_u64(k, v); }},
      {"radii", [&](auto& k, auto& v) { cfg.radii = to_list<double>(k, v, to_double); }},
      {"k_max", [&](auto& k, auto& v) { cfg.k_max = to_list<std::size_t>(k, v, to_u64); }},
      {"channels", [&](auto& k, auto& v) { cfg.channels = to_list<std::size_t>(k, v, to_u64); }},
      {"kernel_points", [&](auto& k, auto& v) { cfg.kernel_points = to_u64(k, v); }},
      {"sigma_ratio", [&](auto& k, auto& v) { cfg.sigma_ratio = to_double(k, v); }},
      {"group_neighbors", [&](auto& k, auto& v) { cfg.group_neighbors = to_u64(k, v); }},
      {"hidden", [&](auto& k, auto& v) { cfg.hidden = to_u64(k, v); }},
      {"lambda", [&](auto& k, auto& v) { cfg.lambda = to_double(k, v); }},
      {"temperature", [&](auto& k, auto& v) { cfg.temperature = to_double(k, v); }},
      {"margin", [&](auto& k, auto& v) { cfg.margin = to_double(k, v); }},
      {"pooling",
       [&](auto&, auto& v) {
         if (v == "all") {
           cfg.pooling_variants = {PoolingKind::kAttentive, PoolingKind::kMax, PoolingKind::kMean};
           return;
         }
         cfg.pooling = parse_pooling(v);
         cfg.pooling_variants = {cfg.pooling};
       }},
      {"pose_head", [&](auto&, auto& v) { cfg.pose_head = parse_pose_head(v); }},
      {"supervise_attention", [&](auto& k, auto& v) { cfg.supervise_attention = to_bool(k, v); }},
      {"eval_rotations", [&](auto& k, auto& v) { cfg.eval_rotations = to_u64(k, v); }},
      {"eval_per_class", [&](auto& k, auto& v) { cfg.eval_per_class = to_u64(k, v); }},
      {"bn_calibration_batches", [&](auto& k, auto& v) { cfg.bn_calibration_batches = to_u64(k, v); }},
  };

  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw Error("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end()) throw Error("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    it->second(key, value);
  }
  cfg.validate();
  return cfg;
}

TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_train_config(buf.str(), std::move(base));
}

}  // namespace epn
