#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace zsd {

/// Single-channel image with row-major double pixels, nominally in [0,1].
class Image {
 public:
  Image() = default;
  Image(int width, int height, double fill = 0.0);
  Image(int width, int height, std::vector<double> pixels);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return pixels_.size(); }
  bool empty() const { return pixels_.empty(); }

  double& at(int x, int y) { return pixels_[static_cast<std::size_t>(y) * width_ + x]; }
  double at(int x, int y) const { return pixels_[static_cast<std::size_t>(y) * width_ + x]; }

  std::span<double> pixels() { return pixels_; }
  std::span<const double> pixels() const { return pixels_; }
  std::vector<double>& storage() { return pixels_; }

  double min() const;
  double max() const;
  bool all_finite() const;

  bool operator==(const Image& other) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> pixels_;
};

/// Padding applied on each side; mode is always reflect (mirror, border not repeated).
struct PadInfo {
  int left = 0;
  int right = 0;
  int top = 0;
  int bottom = 0;

  bool is_zero() const { return left == 0 && right == 0 && top == 0 && bottom == 0; }
  bool operator==(const PadInfo&) const = default;
};

/// Half-open pixel rectangle [x0,x1) x [y0,y1).
struct RoiRect {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  bool valid_for(int width, int height) const {
    return 0 <= x0 && x0 < x1 && x1 <= width && 0 <= y0 && y0 < y1 && y1 <= height;
  }
  bool operator==(const RoiRect&) const = default;
};

/// Mirror an index into [0, n) without repeating the edge sample
/// (… c b | a b c | b a …). Works for any offset, not just one reflection.
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

std::pair<Image, PadInfo> pad_to_multiple(const Image& image, int modulus);
Image crop_with(const Image& padded, const PadInfo& pad);
Image crop(const Image& image, const RoiRect& roi);

void require_same_dims(const Image& a, const Image& b, const char* what);
void require_even_dims(const Image& image, const char* what);

}  // namespace zsd
