#pragma once

#include <cstdint>

#include "zsd/image.hpp"

namespace zsd {

enum class Phantom {
  /// Original Shepp-Logan intensities halved into [0,1].
  shepp_logan,
  /// Toft's higher-contrast variant, already in [0,1].
  modified_shepp_logan,
};

Image shepp_logan(int size, Phantom kind = Phantom::shepp_logan);

/// Each pixel v becomes Poisson(v * photons) / photons.
Image add_poisson_noise(const Image& clean, double photons_per_pixel, std::uint64_t seed);

/// White Gaussian noise box-filtered over (2r+1)^2 and rescaled back to
/// standard deviation sigma before being added. r = 0 gives i.i.d. noise.
Image add_correlated_gaussian_noise(const Image& clean, double sigma, int corr_radius, std::uint64_t seed);

/// The noise field alone (what add_correlated_gaussian_noise adds).
Image correlated_gaussian_field(int width, int height, double sigma, int corr_radius, std::uint64_t seed);

}  // namespace zsd
