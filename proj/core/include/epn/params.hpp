#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace epn {

/// Dense row-major array with a fixed shape.
struct Array {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Array() = default;
  Array(std::vector<std::size_t> shape, std::vector<double> data);
  static Array zeros(std::vector<std::size_t> shape);
  std::size_t size() const { return data.size(); }
};

/// Named arrays. Names are unique and iteration order is lexicographic,
/// which fixes the checkpoint layout.
using ParameterSet = std::map<std::string, Array>;

/// Throws unless both sets have identical names and shapes.
void require_same_layout(const ParameterSet& a, const ParameterSet& b);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam. Parameters absent from the gradient set are left alone.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  void step(ParameterSet& params, const ParameterSet& grads, double lr);
  void step(ParameterSet& params, const ParameterSet& grads) { step(params, grads, config_.lr); }
  std::size_t steps() const { return t_; }

 private:
  AdamConfig config_;
  std::size_t t_ = 0;
  ParameterSet m_;
  ParameterSet v_;
};

/// lr * factor^floor(epoch / every); every == 0 disables decay.
double decayed_learning_rate(double base_lr, std::size_t epoch, std::size_t every, double factor = 0.5);

// Checkpoint: "EPN1", u32 version, u32 count, then per array a u32-length-prefixed
// UTF-8 name, u32 rank, u32 dims, and little-endian float64 data.
constexpr std::uint32_t kCheckpointVersion = 1;
void write_checkpoint(const ParameterSet& params, const std::filesystem::path& path);
ParameterSet read_checkpoint(const std::filesystem::path& path);

}  // namespace epn
