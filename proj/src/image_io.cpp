#include "zsd/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"

namespace zsd {

namespace fs = std::filesystem;
using json = nlohmann::json;

ImageFormat parse_image_format(const std::string& name) {
  if (name == "png8") return ImageFormat::png8;
  if (name == "png16") return ImageFormat::png16;
  if (name == "rawf32") return ImageFormat::rawf32;
  throw std::invalid_argument("unknown image format '" + name + "'");
}

std::string to_string(ImageFormat format) {
  switch (format) {
    case ImageFormat::png8: return "png8";
    case ImageFormat::png16: return "png16";
    case ImageFormat::rawf32: return "rawf32";
  }
  return "?";
}

ImageFormat format_from_path(const fs::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".png") return ImageFormat::png16;
  if (ext == ".f32" || ext == ".raw" || ext == ".rawf32") return ImageFormat::rawf32;
  throw std::invalid_argument("cannot infer image format from '" + path.string() + "'");
}

fs::path raw_sidecar_path(const fs::path& path) { return fs::path(path.string() + ".json"); }

namespace {

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

struct MemoryReader {
  std::span<const std::uint8_t> bytes;
  std::size_t offset = 0;
};

void png_read_memory(png_structp png, png_bytep out, png_size_t count) {
  auto* reader = static_cast<MemoryReader*>(png_get_io_ptr(png));
  if (reader->offset + count > reader->bytes.size()) png_error(png, "unexpected end of PNG data");
  std::memcpy(out, reader->bytes.data() + reader->offset, count);
  reader->offset += count;
}

void png_write_memory(png_structp png, png_bytep data, png_size_t count) {
  auto* buffer = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  buffer->insert(buffer->end(), data, data + count);
}

void png_flush_noop(png_structp) {}

struct PngErrorSlot {
  char message[256] = {0};
};

[[noreturn]] void png_on_error(png_structp png, png_const_charp message) {
  auto* slot = static_cast<PngErrorSlot*>(png_get_error_ptr(png));
  std::snprintf(slot->message, sizeof(slot->message), "%s", message);
  png_longjmp(png, 1);
}

void png_warn_ignore(png_structp, png_const_charp) {}

Image load_rawf32(const fs::path& path) {
  const auto sidecar = raw_sidecar_path(path);
  std::ifstream meta_in(sidecar);
  if (!meta_in) throw IoError("missing rawf32 sidecar '" + sidecar.string() + "'");
  json meta;
  try {
    meta = json::parse(meta_in);
  } catch (const json::exception& e) {
    throw IoError("malformed rawf32 sidecar: " + std::string(e.what()));
  }
  if (!meta.contains("width") || !meta.contains("height")) {
    throw IoError("rawf32 sidecar needs width and height");
  }
  if (meta.contains("dtype") && meta["dtype"] != "f32") {
    throw IoError("rawf32 sidecar dtype must be f32");
  }
  const int w = meta["width"].get<int>();
  const int h = meta["height"].get<int>();
  if (w <= 0 || h <= 0) throw IoError("rawf32 sidecar has non-positive dimensions");

  const auto bytes = read_file(path);
  const std::size_t expected = static_cast<std::size_t>(w) * h * sizeof(float);
  if (bytes.size() != expected) {
    throw IoError("rawf32 size mismatch: sidecar says " + std::to_string(w) + "x" + std::to_string(h) +
                  " (" + std::to_string(expected) + " bytes), file has " + std::to_string(bytes.size()));
  }
  std::vector<double> pixels(static_cast<std::size_t>(w) * h);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[i * 4 + b]) << (8 * b);
    const double v = std::bit_cast<float>(bits);
    if (!std::isfinite(v)) throw IoError("rawf32 contains non-finite value at index " + std::to_string(i));
    pixels[i] = std::clamp(v, 0.0, 1.0);
  }
  return Image(w, h, std::move(pixels));
}

void save_rawf32(const Image& image, const fs::path& path) {
  std::vector<std::uint8_t> bytes(image.size() * 4);
  const auto px = image.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(px[i]));
    for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<std::uint8_t>(bits >> (8 * b));
  }
  write_file(path, bytes);
  const json meta = {{"width", image.width()}, {"height", image.height()}, {"dtype", "f32"}};
  std::ofstream meta_out(raw_sidecar_path(path), std::ios::trunc);
  if (!meta_out) throw IoError("cannot write sidecar for '" + path.string() + "'");
  meta_out << meta.dump() << "\n";
}

}  // namespace

Image decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw IoError("not a PNG file");

  PngErrorSlot error;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error, png_on_error, png_warn_ignore);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png_create_info_struct failed");
  }

  MemoryReader reader{bytes, 0};
  // Non-trivial locals must exist before setjmp; libpng longjmps back here on error.
  std::vector<std::uint8_t> raw;
  std::vector<png_bytep> rows;
  png_uint_32 w = 0, h = 0;
  int out_depth = 8;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(std::string("PNG: ") + error.message);
  }
  {
    png_set_read_fn(png, &reader, png_read_memory);
    png_read_info(png, info);

    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE) {
      png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    }
    if (depth == 16) png_set_swap(png);  // little-endian host order
    png_read_update_info(png, info);

    w = png_get_image_width(png, info);
    h = png_get_image_height(png, info);
    out_depth = png_get_bit_depth(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    if (png_get_channels(png, info) != 1) png_error(png, "could not reduce to one channel");

    raw.resize(rowbytes * h);
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = raw.data() + y * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  {

    std::vector<double> pixels(static_cast<std::size_t>(w) * h);
    for (png_uint_32 y = 0; y < h; ++y) {
      for (png_uint_32 x = 0; x < w; ++x) {
        double v;
        if (out_depth == 16) {
          std::uint16_t code;
          std::memcpy(&code, rows[y] + 2 * x, 2);
          v = code / 65535.0;
        } else {
          v = rows[y][x] / 255.0;
        }
        pixels[static_cast<std::size_t>(y) * w + x] = v;
      }
    }
    return Image(static_cast<int>(w), static_cast<int>(h), std::move(pixels));
  }
}

std::vector<std::uint8_t> encode_png(const Image& image, int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16) throw std::invalid_argument("PNG bit depth must be 8 or 16");
  PngErrorSlot error;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error, png_on_error, png_warn_ignore);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }

  const int w = image.width();
  const int h = image.height();
  const int bpp = bit_depth / 8;
  const int max_code = bit_depth == 8 ? 255 : 65535;
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(w) * h * bpp);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int code = quantize(image.at(x, y), max_code);
      const std::size_t i = (static_cast<std::size_t>(y) * w + x) * bpp;
      if (bpp == 1) {
        raw[i] = static_cast<std::uint8_t>(code);
      } else {
        raw[i] = static_cast<std::uint8_t>(code >> 8);  // PNG is big-endian
        raw[i + 1] = static_cast<std::uint8_t>(code & 0xff);
      }
    }
  }

  std::vector<std::uint8_t> out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError(std::string("PNG: ") + error.message);
  }
  {
    png_set_write_fn(png, &out, png_write_memory, png_flush_noop);
    png_set_IHDR(png, info, w, h, bit_depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < h; ++y) png_write_row(png, raw.data() + static_cast<std::size_t>(y) * w * bpp);
    png_write_end(png, nullptr);
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

Image load_image(const fs::path& path, ImageFormat format) {
  if (!fs::exists(path)) throw IoError("no such file '" + path.string() + "'");
  if (format == ImageFormat::rawf32) return load_rawf32(path);
  const auto bytes = read_file(path);
  return decode_png(bytes);
}

Image load_image(const fs::path& path) { return load_image(path, format_from_path(path)); }

void save_image(const Image& image, const fs::path& path, ImageFormat format) {
  switch (format) {
    case ImageFormat::png8: write_file(path, encode_png(image, 8)); break;
    case ImageFormat::png16: write_file(path, encode_png(image, 16)); break;
    case ImageFormat::rawf32: save_rawf32(image, path); break;
  }
}

void save_image(const Image& image, const fs::path& path) { save_image(image, path, format_from_path(path)); }

}  // namespace zsd
