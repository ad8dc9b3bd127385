// Serial reference kernels: one loop per defining formula, no tables, no
// threading. Used only to check the parallel kernels.

#include <algorithm>
#include <stdexcept>

#include "zsd/image.hpp"
#include "zsd/kernels.hpp"

namespace zsd::kernels::reference {

void bilateral_forward(std::span<const double> image, int width, int height, const BilateralField& field,
                       std::span<double> out) {
  validate(field, width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const int p = field.patch_of(x, y);
      const int k = effective_halfwidth(field.halfwidth[p], width, height);
      const double ix = 1.0 / (2.0 * field.sigma_x[p] * field.sigma_x[p]);
      const double iy = 1.0 / (2.0 * field.sigma_y[p] * field.sigma_y[p]);
      const double ir = 1.0 / (2.0 * field.sigma_r[p] * field.sigma_r[p]);
      const double center = image[static_cast<std::size_t>(y) * width + x];
      double num = 0.0, den = 0.0;
      for (int dy = -k; dy <= k; ++dy) {
        if (y + dy < 0 || y + dy >= height) continue;
        for (int dx = -k; dx <= k; ++dx) {
          if (x + dx < 0 || x + dx >= width) continue;
          const double v = image[static_cast<std::size_t>(y + dy) * width + (x + dx)];
          const double w = detail::spatial_weight(dx, dy, ix, iy) * detail::range_weight(v - center, ir);
          num += v * w;
          den += w;
        }
      }
      out[static_cast<std::size_t>(y) * width + x] = num / den;
    }
  }
}

BilateralGrads bilateral_backward(std::span<const double> image, int width, int height,
                                  const BilateralField& field, std::span<const double> grad_out) {
  validate(field, width, height);
  const std::size_t npix = static_cast<std::size_t>(width) * height;
  const std::size_t npatch = field.halfwidth.size();
  std::vector<double> out(npix);
  reference::bilateral_forward(image, width, height, field, out);

  BilateralGrads g;
  g.image.assign(npix, 0.0);
  g.sigma_r.assign(npatch, 0.0);
  g.sigma_x.assign(npatch, 0.0);
  g.sigma_y.assign(npatch, 0.0);

  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const std::size_t pi = static_cast<std::size_t>(y) * width + x;
      const int p = field.patch_of(x, y);
      const int k = effective_halfwidth(field.halfwidth[p], width, height);
      const double sx = field.sigma_x[p], sy = field.sigma_y[p], sr = field.sigma_r[p];
      const double ix = 1.0 / (2.0 * sx * sx), iy = 1.0 / (2.0 * sy * sy), ir = 1.0 / (2.0 * sr * sr);
      const double center = image[pi];

      double den = 0.0;
      for (int dy = -k; dy <= k; ++dy) {
        if (y + dy < 0 || y + dy >= height) continue;
        for (int dx = -k; dx <= k; ++dx) {
          if (x + dx < 0 || x + dx >= width) continue;
          const double v = image[static_cast<std::size_t>(y + dy) * width + (x + dx)];
          den += detail::spatial_weight(dx, dy, ix, iy) * detail::range_weight(v - center, ir);
        }
      }

      // d out / d w_q = (y_q - out) / W
      const double g_out = grad_out[pi];
      for (int dy = -k; dy <= k; ++dy) {
        if (y + dy < 0 || y + dy >= height) continue;
        for (int dx = -k; dx <= k; ++dx) {
          if (x + dx < 0 || x + dx >= width) continue;
          const std::size_t qi = static_cast<std::size_t>(y + dy) * width + (x + dx);
          const double v = image[qi];
          const double w = detail::spatial_weight(dx, dy, ix, iy) * detail::range_weight(v - center, ir);
          const double diff = v - center;
          const double dl_dw = g_out * (v - out[pi]) / den;
          g.sigma_r[p] += dl_dw * w * diff * diff / (sr * sr * sr);
          g.sigma_x[p] += dl_dw * w * dx * dx / (sx * sx * sx);
          g.sigma_y[p] += dl_dw * w * dy * dy / (sy * sy * sy);
          // w depends on y_q through the range term and on the center pixel likewise.
          g.image[qi] += g_out * w / den - dl_dw * w * diff / (sr * sr);
          g.image[pi] += dl_dw * w * diff / (sr * sr);
        }
      }
    }
  }
  return g;
}

void convolve2d(std::span<const double> in, int width, int height, std::span<const double> kernel, int radius,
                std::span<double> out) {
  const int side = 2 * radius + 1;
  if (kernel.size() != static_cast<std::size_t>(side) * side) {
    throw std::invalid_argument("convolve2d: kernel size does not match radius");
  }
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double s = 0.0;
      for (int v = -radius; v <= radius; ++v) {
        const int sy = reflect_index(y + v, height);
        for (int u = -radius; u <= radius; ++u) {
          const int sx = reflect_index(x + u, width);
          s += kernel[static_cast<std::size_t>(v + radius) * side + (u + radius)] *
               in[static_cast<std::size_t>(sy) * width + sx];
        }
      }
      out[static_cast<std::size_t>(y) * width + x] = s;
    }
  }
}

}  // namespace zsd::kernels::reference
