// Optimized kernels against their serial references.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "zsd/kernels.hpp"
#include "zsd/signal.hpp"

namespace {

using namespace zsd::kernels;

struct Problem {
  int size = 0;
  std::vector<double> image, grad_out, sigma_r, sigma_x, sigma_y;
  std::vector<int> halfwidth;
  BilateralField field;

  Problem(int n, double sigma_spatial) : size(n) {
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    image.resize(static_cast<std::size_t>(n) * n);
    grad_out.resize(image.size());
    for (auto& v : image) v = u(rng);
    for (auto& v : grad_out) v = u(rng) - 0.5;
    const int grid = n / 8;
    const std::size_t patches = static_cast<std::size_t>(grid) * grid;
    sigma_r.assign(patches, 0.1);
    sigma_x.resize(patches);
    sigma_y.resize(patches);
    halfwidth.resize(patches);
    for (std::size_t i = 0; i < patches; ++i) {
      sigma_x[i] = sigma_spatial * (0.75 + 0.5 * u(rng));
      sigma_y[i] = sigma_spatial * (0.75 + 0.5 * u(rng));
      halfwidth[i] = 2 * static_cast<int>(std::ceil(std::max(sigma_x[i], sigma_y[i]) + 1.0));
    }
    field = {8, grid, grid, sigma_r, sigma_x, sigma_y, halfwidth};
  }
};

void BM_BilateralForward(benchmark::State& state) {
  const Problem p(static_cast<int>(state.range(0)), 1.0);
  std::vector<double> out(p.image.size());
  for (auto _ : state) {
    bilateral_forward(p.image, p.size, p.size, p.field, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(p.image.size()));
}

void BM_BilateralForwardReference(benchmark::State& state) {
  const Problem p(static_cast<int>(state.range(0)), 1.0);
  std::vector<double> out(p.image.size());
  for (auto _ : state) {
    reference::bilateral_forward(p.image, p.size, p.size, p.field, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(p.image.size()));
}

void BM_BilateralBackward(benchmark::State& state) {
  const Problem p(static_cast<int>(state.range(0)), 1.0);
  std::vector<double> out(p.image.size());
  BilateralCache cache;
  bilateral_forward(p.image, p.size, p.size, p.field, out, &cache);
  for (auto _ : state) {
    auto g = bilateral_backward(p.image, p.size, p.size, p.field, p.grad_out, &cache);
    benchmark::DoNotOptimize(g.image.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(p.image.size()));
}

void BM_BilateralBackwardReference(benchmark::State& state) {
  const Problem p(static_cast<int>(state.range(0)), 1.0);
  for (auto _ : state) {
    auto g = reference::bilateral_backward(p.image, p.size, p.size, p.field, p.grad_out);
    benchmark::DoNotOptimize(g.image.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(p.image.size()));
}

void BM_GaussianSeparable(benchmark::State& state) {
  const Problem p(static_cast<int>(state.range(0)), 1.0);
  const auto k = zsd::gaussian_kernel_1d(10.0);
  std::vector<double> out(p.image.size());
  for (auto _ : state) {
    convolve_separable(p.image, p.size, p.size, k, out);
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_GaussianDirectReference(benchmark::State& state) {
  const Problem p(static_cast<int>(state.range(0)), 1.0);
  const auto k = zsd::gaussian_kernel(10.0);
  std::vector<double> out(p.image.size());
  for (auto _ : state) {
    reference::convolve2d(p.image, p.size, p.size, k.values, k.radius, out);
    benchmark::DoNotOptimize(out.data());
  }
}

}  // namespace

BENCHMARK(BM_BilateralForward)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BilateralForwardReference)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BilateralBackward)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BilateralBackwardReference)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GaussianSeparable)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GaussianDirectReference)->Arg(128)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
