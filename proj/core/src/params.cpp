#include "epn/params.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>

#include "binary_io.hpp"
#include "epn/geom.hpp"

namespace epn {
namespace {
std::size_t element_count(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}
}  // namespace

Array::Array(std::vector<std::size_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
  if (element_count(shape) != data.size()) throw Error("array data does not match its shape");
}

Array Array::zeros(std::vector<std::size_t> shape) {
  const std::size_t n = element_count(shape);
  return Array(std::move(shape), std::vector<double>(n, 0.0));
}

void require_same_layout(const ParameterSet& a, const ParameterSet& b) {
  if (a.size() != b.size()) throw Error("parameter sets differ in size");
  for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib) {
    if (ia->first != ib->first) throw Error("parameter name mismatch: " + ia->first + " vs " + ib->first);
    if (ia->second.shape != ib->second.shape) throw Error("parameter shape mismatch for " + ia->first);
  }
}

void Adam::step(ParameterSet& params, const ParameterSet& grads, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (const auto& [name, grad] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw Error("gradient for unknown parameter " + name);
    Array& p = it->second;
    if (p.shape != grad.shape) throw Error("gradient shape mismatch for " + name);
    auto [mi, m_new] = m_.try_emplace(name, Array::zeros(p.shape));
    auto [vi, v_new] = v_.try_emplace(name, Array::zeros(p.shape));
    auto& m = mi->second.data;
    auto& v = vi->second.data;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = grad.data[i];
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p.data[i] -= lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
  }
}

double decayed_learning_rate(double base_lr, std::size_t epoch, std::size_t every, double factor) {
  if (every == 0) return base_lr;
  return base_lr * std::pow(factor, static_cast<double>(epoch / every));
}

void write_checkpoint(const ParameterSet& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write("EPN1", 4);
  detail::write_u32(out, kCheckpointVersion);
  detail::write_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, array] : params) {
    detail::write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_u32(out, static_cast<std::uint32_t>(array.shape.size()));
    for (std::size_t d : array.shape) detail::write_u32(out, static_cast<std::uint32_t>(d));
    for (double v : array.data) detail::write_f64(out, v);
  }
  if (!out) throw Error("failed writing " + path.string());
}

ParameterSet read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  detail::expect_magic(in, "EPN1");
  const std::uint32_t version = detail::read_u32(in);
  if (version != kCheckpointVersion) throw Error("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t count = detail::read_u32(in);
  ParameterSet params;
  for (std::uint32_t a = 0; a < count; ++a) {
    std::string name(detail::read_u32(in), '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(name.size()))) throw Error("truncated checkpoint");
    std::vector<std::size_t> shape(detail::read_u32(in));
    for (auto& d : shape) d = detail::read_u32(in);
    std::vector<double> data(element_count(shape));
    for (auto& v : data) v = detail::read_f64(in);
    if (!params.emplace(name, Array(std::move(shape), std::move(data))).second) {
      throw Error("duplicate array name in checkpoint: " + name);
    }
  }
  return params;
}

}  // namespace epn
