#pragma once

// Image-quality metrics and the statistics used to check that the local
// shuffle decorrelates noise while leaving content alone.

#include <limits>
#include <vector>
#include <span>
#include <stdexcept>

#include <json.hpp>

#include "zsd/image.hpp"

namespace zsd {

/// A statistic is undefined for the given input (zero variance, too small).
class MetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

/// 10 log10(range^2 / MSE); identical images give kPsnrIdentical.
double psnr(const Image& a, const Image& b, double data_range = 1.0);

/// Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, averaged over window positions fully inside the image.
double ssim(const Image& a, const Image& b, double data_range = 1.0);

/// |mean(signal) - mean(background)| / std(background), population std.
double cnr(const Image& image, const RoiRect& signal, const RoiRect& background);

/// Pearson correlation clamped to [-1, 1]; throws MetricError if either input
/// has zero variance.
double pearson(std::span<const double> a, std::span<const double> b);

enum class Shuffler { identity, els };

struct ElsValidationReport {
  double content_correlation = 0.0;
  double noise_correlation = 0.0;
  double noise_frequency_correlation = 0.0;
  double noise_local_correlation_mean = 0.0;
};

inline constexpr double kDefaultContentScale = 3.0;
inline constexpr int kLocalWindow = 8;

/// Shuffles both views, splits each into content (Gaussian blur at
/// content_scale) and noise (the remainder) and correlates the two views
/// globally, by radially averaged magnitude spectrum, and per 8x8 window.
ElsValidationReport els_validation(const Image& g1, const Image& g2, Shuffler shuffler,
                                   double content_scale = kDefaultContentScale);

/// Radially averaged |FFT| of a field, bins 1 .. min(w, h)/2 of normalized
/// radial frequency (the DC bin is dropped).
std::vector<double> radial_spectrum(const Image& field);

/// JSON cannot carry infinity, so an identical-image PSNR is written as the
/// string "inf".
nlohmann::json psnr_to_json(double value);
nlohmann::json to_json(const ElsValidationReport& report);

}  // namespace zsd
