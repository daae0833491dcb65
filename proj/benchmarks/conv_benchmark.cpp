// Naive 6D convolution versus the separable point + group pair.

#include <benchmark/benchmark.h>

#include "epn/conv.hpp"
#include "epn/random.hpp"

namespace {

using namespace epn;

struct Fixture {
  FiniteRotationGroup group = build_group(GroupKind::kIcosahedral);
  std::vector<Vec3> pts;
  NeighborhoodTable nbr;
  FeatureMap features;
  ExplicitKernel point;
  GroupKernel rot;
  Kernel6d full;

  Fixture(std::size_t kp, std::size_t kg, std::size_t c) {
    Rng rng(0);
    for (int i = 0; i < 128; ++i) pts.push_back(rng.in_unit_ball());
    nbr = ball_query(PointCloud{pts, {}}, pts, 0.4, 16);
    features = FeatureMap(pts, group.order(), c);
    for (double& v : features.values) v = rng.normal();
    point.points = make_kernel_points(kp, 0.4);
    point.in_channels = point.out_channels = c;
    point.radius = 0.4;
    point.sigma = 0.24;
    point.weights.resize(kp * c * c);
    for (double& v : point.weights) v = rng.normal();
    rot = GroupKernel{kg, c, c, std::vector<double>(kg * c * c)};
    for (double& v : rot.weights) v = rng.normal();
    full = Kernel6d{point.points, kg, c, c, std::vector<double>(kp * kg * c * c), point.sigma, point.kind};
    for (double& v : full.weights) v = rng.normal();
  }
};

void BM_Naive(benchmark::State& state) {
  Fixture f(state.range(0), state.range(1), state.range(2));
  MacCounter macs;
  for (auto _ : state) {
    macs = {};
    benchmark::DoNotOptimize(naive_se3_conv(f.features, f.full, f.nbr, f.group, f.pts, &macs));
  }
  state.counters["MACs"] = static_cast<double>(macs.weight);
}

void BM_Separable(benchmark::State& state) {
  Fixture f(state.range(0), state.range(1), state.range(2));
  MacCounter macs;
  for (auto _ : state) {
    macs = {};
    const auto mid = se3_point_conv(f.features, f.point, f.nbr, f.group, f.pts, &macs);
    benchmark::DoNotOptimize(se3_group_conv(mid, f.rot, f.group, &macs));
  }
  state.counters["MACs"] = static_cast<double>(macs.weight);
}

void sweep(benchmark::internal::Benchmark* b) {
  for (int k : {2, 4, 8, 16}) b->Args({k, k, 8});
  b->Unit(benchmark::kMillisecond);
}

BENCHMARK(BM_Naive)->Apply(sweep);
BENCHMARK(BM_Separable)->Apply(sweep);

}  // namespace

BENCHMARK_MAIN();
