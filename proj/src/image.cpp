#include "defstereo/image.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace defstereo {

std::uint8_t quantize8(float v) {
  const float c = std::clamp(v, 0.f, 1.f);
  return static_cast<std::uint8_t>(std::lround(c * 255.f));
}

void write_png(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw IoError("write_png: " + std::to_string(img.channels) + " channels unsupported");
  }
  png_image pi;
  std::memset(&pi, 0, sizeof(pi));
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.width);
  pi.height = static_cast<png_uint_32>(img.height);
  pi.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> buf(img.pixels() * img.channels);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c)
        buf[(static_cast<std::size_t>(y) * img.width + x) * img.channels + c] =
            quantize8(img.at(c, y, x));
  if (!png_image_write_to_file(&pi, path.c_str(), 0, buf.data(), 0, nullptr)) {
    throw IoError("cannot write " + path.string() + ": " + pi.message);
  }
}

Image read_png(const std::filesystem::path& path) {
  png_image pi;
  std::memset(&pi, 0, sizeof(pi));
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&pi, path.c_str())) {
    throw IoError("cannot read " + path.string() + ": " + pi.message);
  }
  const bool color = (pi.format & PNG_FORMAT_FLAG_COLOR) != 0;
  pi.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const int channels = color ? 3 : 1;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(pi));
  if (!png_image_finish_read(&pi, nullptr, buf.data(), 0, nullptr)) {
    throw IoError("cannot decode " + path.string() + ": " + pi.message);
  }
  Image img(channels, static_cast<int>(pi.height), static_cast<int>(pi.width));
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < channels; ++c)
        img.at(c, y, x) =
            buf[(static_cast<std::size_t>(y) * img.width + x) * channels + c] / 255.f;
  return img;
}

void write_pfm(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw IoError("write_pfm: " + std::to_string(img.channels) + " channels unsupported");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << (img.channels == 3 ? "PF" : "Pf") << "\n" << img.width << " " << img.height << "\n-1.0\n";
  std::vector<float> row(static_cast<std::size_t>(img.width) * img.channels);
  for (int y = img.height - 1; y >= 0; --y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) row[x * img.channels + c] = img.at(c, y, x);
    if constexpr (std::endian::native == std::endian::big) {
      for (auto& v : row) v = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(v)));
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

Image read_pfm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic;
  int width = 0, height = 0;
  double scale = 0;
  in >> magic >> width >> height >> scale;
  if (!in || (magic != "PF" && magic != "Pf") || width <= 0 || height <= 0 || scale == 0) {
    throw IoError(path.string() + ": malformed PFM header");
  }
  in.get();  // single whitespace before the raster
  const int channels = magic == "PF" ? 3 : 1;
  const bool little = scale < 0;
  Image img(channels, height, width);
  std::vector<float> row(static_cast<std::size_t>(width) * channels);
  for (int y = height - 1; y >= 0; --y) {
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(float)));
    if (!in) throw IoError(path.string() + ": truncated PFM raster");
    const bool swap = little != (std::endian::native == std::endian::little);
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < channels; ++c) {
        float v = row[x * channels + c];
        if (swap) v = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(v)));
        img.at(c, y, x) = v;
      }
  }
  return img;
}

}  // namespace defstereo
