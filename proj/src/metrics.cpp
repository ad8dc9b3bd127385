#include "zsd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <mutex>
#include <numeric>
#include <vector>

#include <fftw3.h>

#include "zsd/kernels.hpp"
#include "zsd/signal.hpp"

namespace zsd {

double psnr(const Image& a, const Image& b, double data_range) {
  require_same_dims(a, b, "psnr");
  if (!(data_range > 0.0)) throw std::invalid_argument("psnr: data range must be positive");
  const auto pa = a.pixels(), pb = b.pixels();
  double se = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) se += (pa[i] - pb[i]) * (pa[i] - pb[i]);
  if (se == 0.0) return kPsnrIdentical;
  const double mse = se / static_cast<double>(pa.size());
  return 10.0 * std::log10(data_range * data_range / mse);
}

namespace {

constexpr int kSsimRadius = 5;
constexpr double kSsimSigma = 1.5;

std::vector<double> ssim_window() {
  std::vector<double> w(2 * kSsimRadius + 1);
  double s = 0.0;
  for (int i = -kSsimRadius; i <= kSsimRadius; ++i) {
    w[i + kSsimRadius] = std::exp(-(i * i) / (2.0 * kSsimSigma * kSsimSigma));
    s += w[i + kSsimRadius];
  }
  for (auto& v : w) v /= s;
  return w;
}

// Separable weighted sum over every window fully inside the image.
std::vector<double> filter_valid(std::span<const double> x, int width, int height, const std::vector<double>& w) {
  const int n = static_cast<int>(w.size());
  const int ow = width - n + 1, oh = height - n + 1;
  std::vector<double> tmp(static_cast<std::size_t>(ow) * height);
  for (int y = 0; y < height; ++y) {
    for (int x0 = 0; x0 < ow; ++x0) {
      double s = 0.0;
      for (int t = 0; t < n; ++t) s += w[t] * x[static_cast<std::size_t>(y) * width + x0 + t];
      tmp[static_cast<std::size_t>(y) * ow + x0] = s;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(ow) * oh);
  for (int y0 = 0; y0 < oh; ++y0) {
    for (int x0 = 0; x0 < ow; ++x0) {
      double s = 0.0;
      for (int t = 0; t < n; ++t) s += w[t] * tmp[static_cast<std::size_t>(y0 + t) * ow + x0];
      out[static_cast<std::size_t>(y0) * ow + x0] = s;
    }
  }
  return out;
}

}  // namespace

double ssim(const Image& a, const Image& b, double data_range) {
  require_same_dims(a, b, "ssim");
  const int side = 2 * kSsimRadius + 1;
  if (a.width() < side || a.height() < side) throw MetricError("ssim: image smaller than the 11x11 window");
  if (!(data_range > 0.0)) throw std::invalid_argument("ssim: data range must be positive");
  const auto w = ssim_window();
  const int W = a.width(), H = a.height();
  const auto pa = a.pixels(), pb = b.pixels();
  std::vector<double> aa(pa.size()), bb(pa.size()), ab(pa.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    aa[i] = pa[i] * pa[i];
    bb[i] = pb[i] * pb[i];
    ab[i] = pa[i] * pb[i];
  }
  const auto mu_a = filter_valid(pa, W, H, w), mu_b = filter_valid(pb, W, H, w);
  const auto e_aa = filter_valid(aa, W, H, w), e_bb = filter_valid(bb, W, H, w), e_ab = filter_valid(ab, W, H, w);
  const double c1 = (0.01 * data_range) * (0.01 * data_range);
  const double c2 = (0.03 * data_range) * (0.03 * data_range);
  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double va = e_aa[i] - ma * ma, vb = e_bb[i] - mb * mb, cov = e_ab[i] - ma * mb;
    total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return total / static_cast<double>(mu_a.size());
}

namespace {

struct Moments {
  double mean = 0.0;
  double variance = 0.0;  // population
};

Moments roi_moments(const Image& image, const RoiRect& roi) {
  if (!roi.valid_for(image.width(), image.height())) throw std::invalid_argument("cnr: ROI outside the image");
  // Shift by the first pixel so a constant ROI has exactly zero variance
  // instead of accumulated rounding noise.
  const double ref = image.at(roi.x0, roi.y0);
  double s = 0.0;
  for (int y = roi.y0; y < roi.y1; ++y) {
    for (int x = roi.x0; x < roi.x1; ++x) s += image.at(x, y) - ref;
  }
  const double n = static_cast<double>(roi.width()) * roi.height();
  const double d = s / n;
  double ss = 0.0;
  for (int y = roi.y0; y < roi.y1; ++y) {
    for (int x = roi.x0; x < roi.x1; ++x) {
      const double e = image.at(x, y) - ref - d;
      ss += e * e;
    }
  }
  return {ref + d, ss / n};
}

}  // namespace

double cnr(const Image& image, const RoiRect& signal, const RoiRect& background) {
  const Moments s = roi_moments(image, signal), b = roi_moments(image, background);
  if (!(b.variance > 0.0)) throw MetricError("cnr: background ROI has zero variance");
  return std::abs(s.mean - b.mean) / std::sqrt(b.variance);
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument("pearson: inputs must be non-empty and equal length");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    cov += da * db;
    va += da * da;
    vb += db * db;
  }
  if (!(va > 0.0) || !(vb > 0.0)) throw MetricError("pearson: zero variance");
  return std::clamp(cov / std::sqrt(va * vb), -1.0, 1.0);
}

std::vector<double> radial_spectrum(const Image& field) {
  const int w = field.width(), h = field.height();
  const int wc = w / 2 + 1;
  std::vector<double> in(field.pixels().begin(), field.pixels().end());
  std::vector<std::complex<double>> out(static_cast<std::size_t>(h) * wc);
  {
    // Plan creation is not thread-safe in FFTW.
    static std::mutex plan_mutex;
    std::unique_ptr<fftw_plan_s, decltype(&fftw_destroy_plan)> plan(nullptr, &fftw_destroy_plan);
    {
      std::lock_guard lock(plan_mutex);
      plan.reset(fftw_plan_dft_r2c_2d(h, w, in.data(), reinterpret_cast<fftw_complex*>(out.data()), FFTW_ESTIMATE));
    }
    fftw_execute(plan.get());
    std::lock_guard lock(plan_mutex);
    plan.reset();
  }
  const int nbins = std::min(w, h) / 2;
  std::vector<double> sum(nbins + 1, 0.0);
  std::vector<int> count(nbins + 1, 0);
  for (int ky = 0; ky < h; ++ky) {
    const double fy = static_cast<double>(ky <= h / 2 ? ky : ky - h) / h;
    for (int kx = 0; kx < wc; ++kx) {
      const double fx = static_cast<double>(kx) / w;
      const int bin = static_cast<int>(std::floor(std::hypot(fx, fy) * std::min(w, h) + 0.5));
      if (bin < 1 || bin > nbins) continue;
      sum[bin] += std::abs(out[static_cast<std::size_t>(ky) * wc + kx]);
      ++count[bin];
    }
  }
  std::vector<double> profile;
  profile.reserve(nbins);
  for (int b = 1; b <= nbins; ++b) profile.push_back(count[b] ? sum[b] / count[b] : 0.0);
  return profile;
}

ElsValidationReport els_validation(const Image& g1, const Image& g2, Shuffler shuffler, double content_scale) {
  require_same_dims(g1, g2, "els_validation");
  if (!(content_scale > 0.0)) throw std::invalid_argument("els_validation: content scale must be positive");
  const Image a = shuffler == Shuffler::els ? els(g1) : g1;
  const Image b = shuffler == Shuffler::els ? els(g2) : g2;
  const Image ca = gaussian_blur(a, content_scale), cb = gaussian_blur(b, content_scale);
  Image na = a, nb = b;
  for (std::size_t i = 0; i < na.size(); ++i) {
    na.pixels()[i] -= ca.pixels()[i];
    nb.pixels()[i] -= cb.pixels()[i];
  }

  ElsValidationReport r;
  try {
    r.content_correlation = pearson(ca.pixels(), cb.pixels());
  } catch (const MetricError&) {
    throw MetricError("els_validation: content has zero variance");
  }
  r.noise_correlation = pearson(na.pixels(), nb.pixels());
  r.noise_frequency_correlation = pearson(radial_spectrum(na), radial_spectrum(nb));

  constexpr double kMinWindowVariance = 1e-12;
  double local_sum = 0.0;
  int windows = 0;
  std::vector<double> wa(kLocalWindow * kLocalWindow), wb(wa.size());
  for (int y0 = 0; y0 + kLocalWindow <= na.height(); y0 += kLocalWindow) {
    for (int x0 = 0; x0 + kLocalWindow <= na.width(); x0 += kLocalWindow) {
      std::size_t i = 0;
      for (int y = y0; y < y0 + kLocalWindow; ++y) {
        for (int x = x0; x < x0 + kLocalWindow; ++x, ++i) {
          wa[i] = na.at(x, y);
          wb[i] = nb.at(x, y);
        }
      }
      const auto var = [](const std::vector<double>& v) {
        const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        double s = 0.0;
        for (double x : v) s += (x - m) * (x - m);
        return s / static_cast<double>(v.size());
      };
      if (var(wa) < kMinWindowVariance || var(wb) < kMinWindowVariance) continue;
      local_sum += pearson(wa, wb);
      ++windows;
    }
  }
  if (windows == 0) throw MetricError("els_validation: no 8x8 window with non-zero noise variance");
  r.noise_local_correlation_mean = local_sum / windows;
  return r;
}

nlohmann::json psnr_to_json(double value) {
  if (std::isinf(value)) return "inf";
  return value;
}

nlohmann::json to_json(const ElsValidationReport& report) {
  return {{"content_correlation", report.content_correlation},
          {"noise_correlation", report.noise_correlation},
          {"noise_frequency_correlation", report.noise_frequency_correlation},
          {"noise_local_correlation_mean", report.noise_local_correlation_mean}};
}

}  // namespace zsd
