#include <doctest.h>

#include <omp.h>

#include <cmath>
#include <random>

#include "support.hpp"
#include "zsd/kernels.hpp"
#include "zsd/signal.hpp"

using namespace zsd;
using namespace zsd::kernels;

namespace {

struct Field {
  int patch, grid_w, grid_h;
  std::vector<double> r, x, y;
  std::vector<int> k;
  BilateralField view() const { return {patch, grid_w, grid_h, r, x, y, k}; }
};

Field random_field(int patch, int gw, int gh, std::uint64_t seed, double spatial_scale = 1.5) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Field f{patch, gw, gh, {}, {}, {}, {}};
  for (int i = 0; i < gw * gh; ++i) {
    f.r.push_back(0.02 + 0.5 * u(rng));
    f.x.push_back(0.1 + spatial_scale * u(rng));
    f.y.push_back(0.1 + spatial_scale * u(rng));
    f.k.push_back(2 * static_cast<int>(std::ceil(std::max(f.x.back(), f.y.back()) + 1.0)));
  }
  return f;
}

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

double rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(a[i] - b[i]));
    den = std::max(den, std::abs(b[i]));
  }
  return num / (den + 1e-300);
}

}  // namespace

TEST_CASE("exp_neg tracks std::exp") {
  double worst = 0.0;
  for (double x = -700.0; x <= 0.0; x += 0.0137) {
    worst = std::max(worst, std::abs(detail::exp_neg(x) - std::exp(x)) / std::exp(x));
  }
  CHECK(worst < 1e-15);
  CHECK(detail::exp_neg(0.0) == 1.0);
  CHECK(detail::exp_neg(-800.0) == 0.0);
}

TEST_CASE("bilateral forward equals the reference bit for bit") {
  for (int patch : {8, 4, 6, 5}) {
    const int gw = 5, gh = 4;
    const int w = gw * patch, h = gh * patch;
    const Field f = random_field(patch, gw, gh, static_cast<std::uint64_t>(patch));
    const Image img = test::random_image(w, h, 100 + patch);
    std::vector<double> fast(img.size()), ref(img.size());
    bilateral_forward(img.pixels(), w, h, f.view(), fast);
    reference::bilateral_forward(img.pixels(), w, h, f.view(), ref);
    CAPTURE(patch);
    CHECK(fast == ref);
  }
}

TEST_CASE("bilateral forward handles half-widths larger than the image") {
  const Field f = random_field(8, 1, 1, 5, 20.0);
  const Image img = test::random_image(8, 8, 6);
  std::vector<double> fast(64), ref(64);
  bilateral_forward(img.pixels(), 8, 8, f.view(), fast);
  reference::bilateral_forward(img.pixels(), 8, 8, f.view(), ref);
  CHECK(fast == ref);
}

TEST_CASE("bilateral backward agrees with the reference") {
  for (int patch : {8, 4, 6}) {
    const int gw = 4, gh = 3;
    const int w = gw * patch, h = gh * patch;
    const Field f = random_field(patch, gw, gh, 7 + patch);
    const Image img = test::random_image(w, h, 200 + patch);
    const auto g = random_vector(img.size(), 300 + patch);
    const BilateralGrads fast = bilateral_backward(img.pixels(), w, h, f.view(), g);
    const BilateralGrads ref = reference::bilateral_backward(img.pixels(), w, h, f.view(), g);
    CAPTURE(patch);
    CHECK(rel_diff(fast.image, ref.image) < 1e-12);
    CHECK(rel_diff(fast.sigma_r, ref.sigma_r) < 1e-12);
    CHECK(rel_diff(fast.sigma_x, ref.sigma_x) < 1e-12);
    CHECK(rel_diff(fast.sigma_y, ref.sigma_y) < 1e-12);
  }
}

TEST_CASE("bilateral backward with and without a cache is identical") {
  const Field f = random_field(8, 4, 4, 9);
  const Image img = test::random_image(32, 32, 10);
  const auto g = random_vector(img.size(), 11);
  std::vector<double> out(img.size());
  BilateralCache cache;
  bilateral_forward(img.pixels(), 32, 32, f.view(), out, &cache);
  const auto a = bilateral_backward(img.pixels(), 32, 32, f.view(), g, &cache);
  const auto b = bilateral_backward(img.pixels(), 32, 32, f.view(), g);
  CHECK(a.image == b.image);
  CHECK(a.sigma_r == b.sigma_r);
  CHECK(a.sigma_x == b.sigma_x);
  CHECK(a.sigma_y == b.sigma_y);
}

TEST_CASE("results do not depend on the OpenMP thread count") {
  const Field f = random_field(8, 6, 6, 12);
  const Image img = test::random_image(48, 48, 13);
  const auto g = random_vector(img.size(), 14);
  const auto kernel = gaussian_kernel_1d(3.0);
  auto run = [&](int threads) {
    omp_set_num_threads(threads);
    std::vector<double> out(img.size()), conv(img.size()), adj(img.size());
    bilateral_forward(img.pixels(), 48, 48, f.view(), out);
    auto grads = bilateral_backward(img.pixels(), 48, 48, f.view(), g);
    convolve_separable(img.pixels(), 48, 48, kernel, conv);
    convolve_separable_adjoint(g, 48, 48, kernel, adj);
    return std::make_tuple(out, grads.image, grads.sigma_r, grads.sigma_x, conv, adj);
  };
  const int saved = omp_get_max_threads();
  const auto one = run(1);
  const auto four = run(4);
  omp_set_num_threads(saved);
  CHECK(one == four);
}

TEST_CASE("invalid fields are rejected") {
  Field f = random_field(8, 2, 2, 15);
  const Image img = test::random_image(16, 16, 16);
  std::vector<double> out(img.size());
  f.r[1] = 0.0;
  CHECK_THROWS_AS(bilateral_forward(img.pixels(), 16, 16, f.view(), out), std::invalid_argument);
  f = random_field(8, 2, 2, 15);
  CHECK_THROWS_AS(bilateral_forward(img.pixels(), 24, 16, f.view(), out), std::invalid_argument);
}

TEST_CASE("separable convolution matches the direct 2D reference") {
  for (double s : {0.7, 2.0, 9.0}) {
    const int w = 40, h = 33;
    const Image img = test::random_image(w, h, 17);
    std::vector<double> fast(img.size()), ref(img.size());
    const auto k1 = gaussian_kernel_1d(s);
    const Kernel2D k2 = gaussian_kernel(s);
    convolve_separable(img.pixels(), w, h, k1, fast);
    reference::convolve2d(img.pixels(), w, h, k2.values, k2.radius, ref);
    CAPTURE(s);
    CHECK(rel_diff(fast, ref) < 1e-13);
  }
}

TEST_CASE("convolution adjoint satisfies <A x, y> = <x, A^T y>") {
  for (double s : {1.0, 4.0, 12.0}) {
    const int w = 27, h = 31;
    const auto x = random_vector(static_cast<std::size_t>(w) * h, 18);
    const auto y = random_vector(x.size(), 19);
    const auto k = gaussian_kernel_1d(s);
    std::vector<double> ax(x.size()), aty(x.size());
    convolve_separable(x, w, h, k, ax);
    convolve_separable_adjoint(y, w, h, k, aty);
    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      lhs += ax[i] * y[i];
      rhs += x[i] * aty[i];
    }
    CAPTURE(s);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}
