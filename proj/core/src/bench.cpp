#include "epn/bench.hpp"

#include <algorithm>
#include <chrono>
#include <sstream>

#include "epn/conv.hpp"
#include "epn/random.hpp"
#include "epn/sampling.hpp"

namespace epn {
namespace {

template <typename F>
double median_ms(std::size_t runs, F&& fn) {
  std::vector<double> times;
  for (std::size_t r = 0; r < runs; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    times.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(times.begin(), times.end());
  const std::size_t n = times.size();
  return n % 2 == 1 ? times[n / 2] : 0.5 * (times[n / 2 - 1] + times[n / 2]);
}

}  // namespace

BenchReport run_bench(const BenchOptions& o) {
  if (o.kernel_points.empty() || o.group_neighbors.empty()) throw Error("bench: empty sweep");
  if (o.channels < 1 || o.points < 1 || o.k_max < 1 || !(o.radius > 0.0)) throw Error("bench: invalid sizes");
  if (!o.dry && o.runs < 5) throw Error("bench: timing needs at least 5 runs");
  const auto group = build_group(o.group);
  Rng rng(o.seed);
  std::vector<Vec3> coords(o.points);
  for (auto& p : coords) p = rng.in_unit_ball();
  const auto nbr = ball_query(PointCloud{coords, {}}, coords, o.radius, o.k_max);
  FeatureMap in(coords, group.order(), o.channels);
  for (double& v : in.values) v = rng.normal();

  BenchReport report;
  report.options = o;
  for (std::size_t kp : o.kernel_points) {
    for (std::size_t kg : o.group_neighbors) {
      if (kp < 1 || kg < 1 || kg > group.order()) {
        throw Error("bench: need K_p >= 1 and 1 <= K_g <= |G| (" + std::to_string(group.order()) + ")");
      }
      const std::size_t c = o.channels;
      ExplicitKernel point;
      point.points = make_kernel_points(kp, o.radius);
      point.radius = o.radius;
      point.sigma = 0.6 * o.radius;
      point.in_channels = point.out_channels = c;
      point.weights.resize(kp * c * c);
      for (double& w : point.weights) w = rng.normal();
      GroupKernel gk{kg, c, c, std::vector<double>(kg * c * c)};
      for (double& w : gk.weights) w = rng.normal();
      Kernel6d k6;
      k6.points = point.points;
      k6.group_neighbors = kg;
      k6.in_channels = k6.out_channels = c;
      k6.sigma = point.sigma;
      k6.weights.resize(kp * kg * c * c);
      for (double& w : k6.weights) w = rng.normal();

      MacCounter naive, separable;
      naive_se3_conv(in, k6, nbr, group, coords, &naive);
      se3_group_conv(se3_point_conv(in, point, nbr, group, coords, &separable), gk, group, &separable);

      BenchRow row;
      row.kernel_points = kp;
      row.group_neighbors = kg;
      row.c_in = row.c_out = c;
      row.points = o.points;
      row.group_order = group.order();
      row.naive_macs = naive.weight;
      row.separable_macs = separable.weight;
      row.naive_gather = naive.gather;
      row.separable_gather = separable.gather;
      row.mac_ratio = static_cast<double>(naive.weight) / static_cast<double>(separable.weight);
      row.expected_ratio = static_cast<double>(kp * kg) / static_cast<double>(kp + kg);
      row.ratio_exact = naive.weight * (kp + kg) == separable.weight * (kp * kg);
      if (!o.dry) {
        row.naive_ms = median_ms(o.runs, [&] { naive_se3_conv(in, k6, nbr, group, coords); });
        row.separable_ms = median_ms(o.runs, [&] {
          se3_group_conv(se3_point_conv(in, point, nbr, group, coords), gk, group);
        });
        row.speedup = *row.naive_ms / *row.separable_ms;
      }
      report.rows.push_back(row);
    }
  }
  return report;
}

nlohmann::json to_json(const BenchReport& report) {
  const auto& o = report.options;
  nlohmann::json rows = nlohmann::json::array();
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  for (const auto& r : report.rows) {
    rows.push_back({
        {"K_p", r.kernel_points},
        {"K_g", r.group_neighbors},
        {"C_in", r.c_in},
        {"C_out", r.c_out},
        {"N_points", r.points},
        {"group_order", r.group_order},
        {"naive_macs", r.naive_macs},
        {"separable_macs", r.separable_macs},
        {"naive_gather", r.naive_gather},
        {"separable_gather", r.separable_gather},
        {"mac_ratio", r.mac_ratio},
        {"expected_ratio", r.expected_ratio},
        {"ratio_exact", r.ratio_exact},
        {"naive_ms", opt(r.naive_ms)},
        {"separable_ms", opt(r.separable_ms)},
        {"speedup", opt(r.speedup)},
    });
  }
  return {
      {"environment",
       {{"seed", o.seed},
        {"group", to_string(o.group)},
        {"points", o.points},
        {"channels", o.channels},
        {"k_max", o.k_max},
        {"radius", o.radius},
        {"runs", o.dry ? 0 : o.runs},
        {"dry", o.dry}}},
      {"rows", rows},
  };
}

std::string to_csv(const BenchReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << "K_p,K_g,C_in,C_out,N_points,group_order,naive_macs,separable_macs,mac_ratio,expected_ratio,ratio_exact,"
         "naive_ms,separable_ms,speedup\n";
  auto opt = [](const std::optional<double>& v) {
    std::ostringstream s;
    s.precision(17);
    if (v) s << *v;
    return s.str();
  };
  for (const auto& r : report.rows) {
    out << r.kernel_points << ',' << r.group_neighbors << ',' << r.c_in << ',' << r.c_out << ',' << r.points << ','
        << r.group_order << ',' << r.naive_macs << ',' << r.separable_macs << ',' << r.mac_ratio << ','
        << r.expected_ratio << ',' << (r.ratio_exact ? "true" : "false") << ',' << opt(r.naive_ms) << ','
        << opt(r.separable_ms) << ',' << opt(r.speedup) << '\n';
  }
  return out.str();
}

}  // namespace epn
