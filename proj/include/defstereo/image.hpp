#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace defstereo {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Planar float image, channel-major (C x H x W). Values are linear; color
/// images hold RGB in [0, 1].
struct Image {
  int channels = 0, height = 0, width = 0;
  std::vector<float> data;

  Image() = default;
  Image(int c, int h, int w, float fill = 0.f)
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  float& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  float* plane(int c) { return data.data() + static_cast<std::size_t>(c) * height * width; }
  const float* plane(int c) const {
    return data.data() + static_cast<std::size_t>(c) * height * width;
  }
  std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
  bool same_shape(const Image& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
  bool operator==(const Image&) const = default;
};

/// 8-bit PNG, gray or RGB. Values are clamped to [0, 1] and rounded to the
/// nearest of 256 levels; no gamma transform.
void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);
std::uint8_t quantize8(float v);

/// Portable float map, little-endian (negative scale), rows stored bottom-up.
void write_pfm(const std::filesystem::path& path, const Image& img);
Image read_pfm(const std::filesystem::path& path);

}  // namespace defstereo
