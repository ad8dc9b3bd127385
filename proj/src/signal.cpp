#include "zsd/signal.hpp"

#include <array>
#include <cmath>
#include <random>
#include <stdexcept>

#include "zsd/kernels.hpp"

namespace zsd {

namespace {

template <typename BlockFn>
Image downsample_with(const Image& y, BlockFn fn, const char* what) {
  require_even_dims(y, what);
  Image out(y.width() / 2, y.height() / 2);
  for (int j = 0; j < out.height(); ++j) {
    for (int i = 0; i < out.width(); ++i) {
      const double a = y.at(2 * i, 2 * j), b = y.at(2 * i + 1, 2 * j);
      const double c = y.at(2 * i, 2 * j + 1), d = y.at(2 * i + 1, 2 * j + 1);
      out.at(i, j) = fn(a, b, c, d);
    }
  }
  return out;
}

// Pair order ab, ac, ad, bc, bd, cd over block positions a=0 b=1 c=2 d=3.
constexpr std::array<std::array<int, 2>, 6> kBlockPairs{{{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}}};

std::array<std::int32_t, 4> block_indices(int width, int bx, int by) {
  const std::int32_t i0 = static_cast<std::int32_t>(2 * by) * width + 2 * bx;
  return {i0, i0 + 1, i0 + width, i0 + width + 1};
}

Permutation identity_permutation(std::size_t n) {
  Permutation p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<std::int32_t>(i);
  return p;
}

}  // namespace

Image downsample_g1(const Image& y) {
  return downsample_with(y, [](double, double b, double c, double) { return 0.5 * (b + c); }, "downsample");
}

Image downsample_g2(const Image& y) {
  return downsample_with(y, [](double a, double, double, double d) { return 0.5 * (a + d); }, "downsample");
}

std::pair<Image, Image> downsample_pair(const Image& y) { return {downsample_g1(y), downsample_g2(y)}; }

Image apply_permutation(const Image& image, const Permutation& perm) {
  if (perm.size() != image.size()) throw std::invalid_argument("permutation length does not match image");
  Image out(image.width(), image.height());
  const auto src = image.pixels();
  auto dst = out.pixels();
  for (std::size_t i = 0; i < perm.size(); ++i) dst[i] = src[perm[i]];
  return out;
}

Permutation els_permutation(const Image& y) {
  require_even_dims(y, "els");
  auto perm = identity_permutation(y.size());
  const auto px = y.pixels();
  for (int by = 0; by < y.height() / 2; ++by) {
    for (int bx = 0; bx < y.width() / 2; ++bx) {
      const auto idx = block_indices(y.width(), bx, by);
      int best = 0;
      double best_d = std::abs(px[idx[0]] - px[idx[1]]);
      for (int k = 1; k < 6; ++k) {
        const double d = std::abs(px[idx[kBlockPairs[k][0]]] - px[idx[kBlockPairs[k][1]]]);
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      const auto [u, v] = kBlockPairs[best];
      std::swap(perm[idx[u]], perm[idx[v]]);
    }
  }
  return perm;
}

Image els(const Image& y) { return apply_permutation(y, els_permutation(y)); }

Permutation random_shuffle_permutation(int width, int height, std::uint64_t seed) {
  if (width % 2 != 0 || height % 2 != 0) throw std::invalid_argument("random shuffle: width and height must be even");
  auto perm = identity_permutation(static_cast<std::size_t>(width) * height);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, 5);
  for (int by = 0; by < height / 2; ++by) {
    for (int bx = 0; bx < width / 2; ++bx) {
      const auto idx = block_indices(width, bx, by);
      const auto [u, v] = kBlockPairs[pick(rng)];
      std::swap(perm[idx[u]], perm[idx[v]]);
    }
  }
  return perm;
}

Image random_shuffle_2x2(const Image& y, std::uint64_t seed) {
  return apply_permutation(y, random_shuffle_permutation(y.width(), y.height(), seed));
}

int gaussian_radius(double s) {
  if (!(s > 0.0) || !std::isfinite(s)) throw std::invalid_argument("gaussian standard deviation must be positive");
  return static_cast<int>(std::ceil(3.0 * s));
}

std::vector<double> gaussian_kernel_1d(double s) {
  const int r = gaussian_radius(s);
  std::vector<double> k(2 * r + 1);
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) {
    k[i + r] = std::exp(-(i * i) / (2.0 * s * s));
    sum += k[i + r];
  }
  for (auto& v : k) v /= sum;
  return k;
}

Kernel2D gaussian_kernel(double s) {
  const int r = gaussian_radius(s);
  Kernel2D k;
  k.radius = r;
  k.values.resize(static_cast<std::size_t>(k.side()) * k.side());
  const double norm = 1.0 / (2.0 * M_PI * s * s);
  double sum = 0.0;
  for (int v = -r; v <= r; ++v) {
    for (int u = -r; u <= r; ++u) {
      const double g = norm * std::exp(-(u * u + v * v) / (2.0 * s * s));
      k.values[static_cast<std::size_t>(v + r) * k.side() + (u + r)] = g;
      sum += g;
    }
  }
  for (auto& v : k.values) v /= sum;
  return k;
}

Image gaussian_blur(const Image& y, double s) {
  const auto k = gaussian_kernel_1d(s);
  Image out(y.width(), y.height());
  kernels::convolve_separable(y.pixels(), y.width(), y.height(), k, out.pixels());
  return out;
}

Image dog(const Image& y, double s1, double s2) {
  const Image lo = gaussian_blur(y, s1);
  Image out = gaussian_blur(y, s2);
  auto o = out.pixels();
  const auto l = lo.pixels();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= l[i];
  return out;
}

}  // namespace zsd
