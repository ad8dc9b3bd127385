#include "zsd/image.hpp"

#include <algorithm>
#include <cmath>

namespace zsd {

Image::Image(int width, int height, double fill) : width_(width), height_(height) {
  if (width <= 0 || height <= 0) {
    throw std::invalid_argument("image dimensions must be positive");
  }
  pixels_.assign(static_cast<std::size_t>(width) * height, fill);
}

Image::Image(int width, int height, std::vector<double> pixels)
    : width_(width), height_(height), pixels_(std::move(pixels)) {
  if (width <= 0 || height <= 0) {
    throw std::invalid_argument("image dimensions must be positive");
  }
  if (pixels_.size() != static_cast<std::size_t>(width) * height) {
    throw std::invalid_argument("pixel count does not match " + std::to_string(width) + "x" +
                                std::to_string(height));
  }
}

double Image::min() const { return *std::min_element(pixels_.begin(), pixels_.end()); }
double Image::max() const { return *std::max_element(pixels_.begin(), pixels_.end()); }

bool Image::all_finite() const {
  return std::all_of(pixels_.begin(), pixels_.end(), [](double v) { return std::isfinite(v); });
}

std::pair<Image, PadInfo> pad_to_multiple(const Image& image, int modulus) {
  if (modulus < 1) throw std::invalid_argument("pad modulus must be >= 1");
  const int w = image.width();
  const int h = image.height();
  const int pw = (w + modulus - 1) / modulus * modulus;
  const int ph = (h + modulus - 1) / modulus * modulus;

  PadInfo pad;
  pad.left = (pw - w) / 2;
  pad.right = pw - w - pad.left;
  pad.top = (ph - h) / 2;
  pad.bottom = ph - h - pad.top;
  if (pad.is_zero()) return {image, pad};

  if ((pw != w && w < 2) || (ph != h && h < 2)) {
    throw std::invalid_argument("reflect padding needs an image of at least 2x2");
  }

  Image out(pw, ph);
  for (int y = 0; y < ph; ++y) {
    const int sy = reflect_index(y - pad.top, h);
    for (int x = 0; x < pw; ++x) {
      out.at(x, y) = image.at(reflect_index(x - pad.left, w), sy);
    }
  }
  return {std::move(out), pad};
}

Image crop_with(const Image& padded, const PadInfo& pad) {
  return crop(padded, RoiRect{pad.left, pad.top, padded.width() - pad.right,
                              padded.height() - pad.bottom});
}

Image crop(const Image& image, const RoiRect& roi) {
  if (!roi.valid_for(image.width(), image.height())) {
    throw std::invalid_argument("crop rectangle outside image");
  }
  Image out(roi.width(), roi.height());
  for (int y = 0; y < roi.height(); ++y) {
    for (int x = 0; x < roi.width(); ++x) out.at(x, y) = image.at(roi.x0 + x, roi.y0 + y);
  }
  return out;
}

void require_same_dims(const Image& a, const Image& b, const char* what) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw std::invalid_argument(std::string(what) + ": image dimensions differ");
  }
}

void require_even_dims(const Image& image, const char* what) {
  if (image.width() % 2 != 0 || image.height() % 2 != 0) {
    throw std::invalid_argument(std::string(what) + ": width and height must be even");
  }
}

}  // namespace zsd
