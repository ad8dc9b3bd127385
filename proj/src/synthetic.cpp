#include "zsd/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <stdexcept>

namespace zsd {

namespace {

struct Ellipse {
  double intensity;
  double a, b;    // semi-axes
  double x0, y0;  // center, unit-disk coordinates with y up
  double phi_deg;
};

// Shepp & Logan (1974). The modified table only changes intensities.
constexpr std::array<Ellipse, 10> kSheppLogan{{
    {2.00, 0.6900, 0.9200, 0.00, 0.0000, 0.0},
    {-0.98, 0.6624, 0.8740, 0.00, -0.0184, 0.0},
    {-0.02, 0.1100, 0.3100, 0.22, 0.0000, -18.0},
    {-0.02, 0.1600, 0.4100, -0.22, 0.0000, 18.0},
    {0.01, 0.2100, 0.2500, 0.00, 0.3500, 0.0},
    {0.01, 0.0460, 0.0460, 0.00, 0.1000, 0.0},
    {0.01, 0.0460, 0.0460, 0.00, -0.1000, 0.0},
    {0.01, 0.0460, 0.0230, -0.08, -0.6050, 0.0},
    {0.01, 0.0230, 0.0230, 0.00, -0.6060, 0.0},
    {0.01, 0.0230, 0.0460, 0.06, -0.6050, 0.0},
}};

constexpr std::array<double, 10> kModifiedIntensity{1.0, -0.8, -0.2, -0.2, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1};

}  // namespace

Image shepp_logan(int size, Phantom kind) {
  if (size < 32) throw std::invalid_argument("phantom size must be at least 32");
  const double scale = kind == Phantom::shepp_logan ? 0.5 : 1.0;
  Image out(size, size);
  for (int j = 0; j < size; ++j) {
    const double yc = 1.0 - (2.0 * j + 1.0) / size;
    for (int i = 0; i < size; ++i) {
      const double xc = (2.0 * i + 1.0) / size - 1.0;
      double v = 0.0;
      for (std::size_t e = 0; e < kSheppLogan.size(); ++e) {
        const auto& el = kSheppLogan[e];
        const double phi = el.phi_deg * M_PI / 180.0;
        const double dx = xc - el.x0, dy = yc - el.y0;
        const double u = dx * std::cos(phi) + dy * std::sin(phi);
        const double w = -dx * std::sin(phi) + dy * std::cos(phi);
        if ((u * u) / (el.a * el.a) + (w * w) / (el.b * el.b) <= 1.0) {
          v += kind == Phantom::shepp_logan ? el.intensity : kModifiedIntensity[e];
        }
      }
      out.at(i, j) = std::clamp(v * scale, 0.0, 1.0);
    }
  }
  return out;
}

Image add_poisson_noise(const Image& clean, double photons_per_pixel, std::uint64_t seed) {
  if (!(photons_per_pixel > 0.0) || !std::isfinite(photons_per_pixel)) {
    throw std::invalid_argument("photon count must be positive");
  }
  std::mt19937_64 rng(seed);
  Image out(clean.width(), clean.height());
  const auto src = clean.pixels();
  auto dst = out.pixels();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double lambda = std::max(src[i], 0.0) * photons_per_pixel;
    if (lambda <= 0.0) {
      dst[i] = 0.0;
      continue;
    }
    std::poisson_distribution<long long> draw(lambda);
    const double v = static_cast<double>(draw(rng)) / photons_per_pixel;
    dst[i] = std::isfinite(v) ? v : 0.0;
  }
  return out;
}

Image correlated_gaussian_field(int width, int height, double sigma, int corr_radius, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("noise sigma must be non-negative");
  if (corr_radius < 0) throw std::invalid_argument("correlation radius must be non-negative");
  const int r = corr_radius;
  const int ew = width + 2 * r, eh = height + 2 * r;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> white(static_cast<std::size_t>(ew) * eh);
  for (auto& v : white) v = gauss(rng);

  // Box sum over the extended field keeps the noise stationary up to the border.
  const double side = 2.0 * r + 1.0;
  const double gain = sigma / side;  // sum of side^2 unit normals has std = side
  Image field(width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double s = 0.0;
      for (int v = 0; v <= 2 * r; ++v) {
        const double* row = white.data() + static_cast<std::size_t>(y + v) * ew + x;
        for (int u = 0; u <= 2 * r; ++u) s += row[u];
      }
      field.at(x, y) = gain * s;
    }
  }
  return field;
}

Image add_correlated_gaussian_noise(const Image& clean, double sigma, int corr_radius, std::uint64_t seed) {
  Image out = correlated_gaussian_field(clean.width(), clean.height(), sigma, corr_radius, seed);
  const auto src = clean.pixels();
  auto dst = out.pixels();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  return out;
}

}  // namespace zsd
