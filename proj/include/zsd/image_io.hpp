#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "zsd/image.hpp"

namespace zsd {

enum class ImageFormat { png8, png16, rawf32 };

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

ImageFormat parse_image_format(const std::string& name);
std::string to_string(ImageFormat format);
/// Guess from the extension: .png -> png16, .f32/.raw -> rawf32.
ImageFormat format_from_path(const std::filesystem::path& path);

/// PNG input accepts 8- or 16-bit files regardless of whether png8 or png16
/// is requested; color input is converted to luminance.
Image load_image(const std::filesystem::path& path, ImageFormat format);
Image load_image(const std::filesystem::path& path);
void save_image(const Image& image, const std::filesystem::path& path, ImageFormat format);
void save_image(const Image& image, const std::filesystem::path& path);

std::vector<std::uint8_t> encode_png(const Image& image, int bit_depth);
Image decode_png(std::span<const std::uint8_t> bytes);

/// Quantize to an integer code in [0, max_code] with round-half-up.
inline int quantize(double v, int max_code) {
  if (!(v > 0.0)) return 0;
  if (v >= 1.0) return max_code;
  return static_cast<int>(v * max_code + 0.5);
}

std::filesystem::path raw_sidecar_path(const std::filesystem::path& path);

}  // namespace zsd
