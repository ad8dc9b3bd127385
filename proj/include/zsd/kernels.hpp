#pragma once

// Data-parallel kernels behind the imaging and filter modules.
//
// Every kernel in zsd::kernels has a serial counterpart in
// zsd::kernels::reference written as the direct loop over the defining
// formula. Forward passes agree bit-for-bit with their reference; backward
// passes accumulate in a different (still fixed) order and agree to rounding. Results never depend on the OpenMP thread count.

#include <bit>
#include <cstdint>
#include <span>
#include <vector>

namespace zsd::kernels {

/// Per-patch filter parameters for a spatially varying bilateral filter.
/// Patches are PxP, enumerated row-major over a grid_w x grid_h grid; the
/// center pixel's patch decides sigmas and half-width for its whole window.
struct BilateralField {
  int patch = 8;
  int grid_w = 0;
  int grid_h = 0;
  std::span<const double> sigma_r;
  std::span<const double> sigma_x;
  std::span<const double> sigma_y;
  std::span<const int> halfwidth;

  int patch_of(int x, int y) const { return (y / patch) * grid_w + (x / patch); }
};

struct BilateralGrads {
  std::vector<double> image;
  std::vector<double> sigma_r;
  std::vector<double> sigma_x;
  std::vector<double> sigma_y;
};

/// Per-pixel normalizers and outputs kept from a forward pass for the backward.
struct BilateralCache {
  std::vector<double> den;
  std::vector<double> out;
};

/// Offsets beyond the image never contribute, so half-widths are clipped to
/// max(width, height) - 1 before any table is built.
int effective_halfwidth(int k, int width, int height);

/// Throws std::invalid_argument on inconsistent geometry or non-positive sigma.
void validate(const BilateralField& field, int width, int height);

void bilateral_forward(std::span<const double> image, int width, int height, const BilateralField& field,
                       std::span<double> out, BilateralCache* cache = nullptr);

/// `cache` must come from bilateral_forward on the same image and field.
BilateralGrads bilateral_backward(std::span<const double> image, int width, int height,
                                  const BilateralField& field, std::span<const double> grad_out,
                                  const BilateralCache* cache = nullptr);

/// out = k (x) k convolved with the image; odd-length 1D kernel, reflect borders.
void convolve_separable(std::span<const double> in, int width, int height, std::span<const double> kernel,
                        std::span<double> out);

/// Adjoint of convolve_separable: maps an output-space gradient back to the input.
void convolve_separable_adjoint(std::span<const double> grad_out, int width, int height,
                                std::span<const double> kernel, std::span<double> grad_in);

namespace detail {

/// exp(x) for x <= 0, flushed to 0 below -708. Plain arithmetic only, so
/// loops over it vectorize and scalar and vector callers agree bit-for-bit.
/// Relative error is within a few ulp of std::exp.
inline double exp_neg(double x) {
  constexpr double kLog2e = 1.4426950408889634;
  constexpr double kLn2Hi = 6.93147180369123816490e-01;
  constexpr double kLn2Lo = 1.90821492927058770002e-10;
  constexpr double kShift = 6755399441055744.0;  // 1.5 * 2^52: adding it rounds to an integer
  const double xc = x < -708.0 ? -708.0 : x;
  const double t = xc * kLog2e + kShift;
  const double n = t - kShift;
  const double r = (xc - n * kLn2Hi) - n * kLn2Lo;
  double p = 1.0 / 6227020800.0;
  p = p * r + 1.0 / 479001600.0;
  p = p * r + 1.0 / 39916800.0;
  p = p * r + 1.0 / 3628800.0;
  p = p * r + 1.0 / 362880.0;
  p = p * r + 1.0 / 40320.0;
  p = p * r + 1.0 / 5040.0;
  p = p * r + 1.0 / 720.0;
  p = p * r + 1.0 / 120.0;
  p = p * r + 1.0 / 24.0;
  p = p * r + 1.0 / 6.0;
  p = p * r + 0.5;
  p = p * r + 1.0;
  p = p * r + 1.0;
  const std::int64_t scale = (std::bit_cast<std::int64_t>(t) - std::bit_cast<std::int64_t>(kShift) + 1023) << 52;
  const double v = p * std::bit_cast<double>(scale);
  return x < -708.0 ? 0.0 : v;
}

/// Long dot products are split over kLanes partial sums (element j goes to
/// lane j % kLanes) that are combined pairwise.
inline constexpr int kLanes = 8;

inline double combine_lanes(const double* l) {
  return ((l[0] + l[1]) + (l[2] + l[3])) + ((l[4] + l[5]) + (l[6] + l[7]));
}

inline double spatial_weight(int dx, int dy, double inv_two_sx2, double inv_two_sy2) {
  return exp_neg(-(dx * dx) * inv_two_sx2 - (dy * dy) * inv_two_sy2);
}

inline double range_weight(double diff, double inv_two_sr2) { return exp_neg(-(diff * diff) * inv_two_sr2); }

}  // namespace detail

namespace reference {

void bilateral_forward(std::span<const double> image, int width, int height, const BilateralField& field,
                       std::span<double> out);

BilateralGrads bilateral_backward(std::span<const double> image, int width, int height,
                                  const BilateralField& field, std::span<const double> grad_out);

/// Direct 2D convolution with a (2r+1)^2 kernel and reflect borders.
void convolve2d(std::span<const double> in, int width, int height, std::span<const double> kernel, int radius,
                std::span<double> out);

}  // namespace reference

}  // namespace zsd::kernels
