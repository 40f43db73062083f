#ifndef ADVPROBE_IMAGE_IO_HPP
#define ADVPROBE_IMAGE_IO_HPP

// 8-bit RGB image files <-> [0,1] float tensors. PNG through libpng, binary PPM by hand.

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "advprobe/error.hpp"
#include "advprobe/tensor.hpp"

namespace advprobe {

namespace detail {

inline float byte_to_unit(std::uint8_t b) { return static_cast<float>(b) / 255.0f; }

inline std::uint8_t unit_to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace detail

inline ImageTensor read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw IoError(path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw IoError(path.string() + ": " + image.message);
  }
  ImageTensor img({image.height, image.width, 3});
  std::transform(pixels.begin(), pixels.end(), img.data(), detail::byte_to_unit);
  return img;
}

/// Writes an (H, W, 3) or (H, W, 1) tensor as 8-bit PNG; values are clamped and rounded.
inline void write_png(const std::filesystem::path& path, const ImageTensor& img) {
  if (img.rank() != 3 || (img.dim(2) != 3 && img.dim(2) != 1)) {
    throw DimensionError("write_png: need (H,W,3) or (H,W,1), got " + shape_string(img.shape()));
  }
  std::vector<std::uint8_t> pixels(img.size());
  std::transform(img.values().begin(), img.values().end(), pixels.begin(), detail::unit_to_byte);
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.dim(1));
  image.height = static_cast<png_uint_32>(img.dim(0));
  image.format = img.dim(2) == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, pixels.data(), 0, nullptr)) {
    throw IoError("cannot write " + path.string() + ": " + image.message);
  }
}

/// Binary (P6) PPM with maxval <= 255, the format GTSRB ships in.
inline ImageTensor read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> raw{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < raw.size()) {
      if (raw[pos] == '#') {
        while (pos < raw.size() && raw[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(raw[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    std::string t;
    while (pos < raw.size() && !std::isspace(static_cast<unsigned char>(raw[pos]))) t += raw[pos++];
    return t;
  };
  if (token() != "P6") throw IoError(path.string() + ": not a binary PPM");
  std::size_t width = 0, height = 0, maxval = 0;
  try {
    width = std::stoul(token());
    height = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw IoError(path.string() + ": malformed PPM header");
  }
  ++pos;  // single whitespace before the raster
  if (width == 0 || height == 0 || maxval == 0 || maxval > 255) throw IoError(path.string() + ": unsupported PPM");
  if (raw.size() - std::min(pos, raw.size()) < width * height * 3) throw IoError(path.string() + ": truncated PPM");
  ImageTensor img({height, width, 3});
  for (std::size_t i = 0; i < img.size(); ++i) {
    img[i] = static_cast<float>(static_cast<unsigned char>(raw[pos + i])) / static_cast<float>(maxval);
  }
  return img;
}

/// Dispatches on the file extension (.png, .ppm).
inline ImageTensor read_image(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".png") return read_png(path);
  if (ext == ".ppm") return read_ppm(path);
  throw IoError(path.string() + ": unsupported image extension");
}

}  // namespace advprobe

#endif  // ADVPROBE_IMAGE_IO_HPP
