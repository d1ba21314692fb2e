#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "sepipe/errors.hpp"

namespace sepipe {

// 8-bit grayscale raster. Models consume the real-valued view in [0,1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  Image() = default;
  Image(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {
    if (w <= 0 || h <= 0) throw DimensionError("image dimensions must be positive");
  }

  std::size_t size() const { return pixels.size(); }
  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }

  std::vector<double> to_real() const {
    std::vector<double> r(pixels.size());
    for (std::size_t i = 0; i < pixels.size(); ++i) r[i] = pixels[i] / 255.0;
    return r;
  }

  std::vector<float> to_real32() const {
    std::vector<float> r(pixels.size());
    for (std::size_t i = 0; i < pixels.size(); ++i) r[i] = static_cast<float>(pixels[i]) / 255.0f;
    return r;
  }

  static std::uint8_t quantize(double v) {
    const long q = std::lround(v * 255.0);
    return static_cast<std::uint8_t>(q < 0 ? 0 : (q > 255 ? 255 : q));
  }

  template <typename Real>
  static Image from_real(const std::vector<Real>& r, int w, int h) {
    if (static_cast<std::size_t>(w) * static_cast<std::size_t>(h) != r.size())
      throw DimensionError("real buffer size does not match " + std::to_string(w) + "x" +
                           std::to_string(h));
    Image img(w, h);
    for (std::size_t i = 0; i < r.size(); ++i) img.pixels[i] = quantize(static_cast<double>(r[i]));
    return img;
  }

  bool operator==(const Image& o) const {
    return width == o.width && height == o.height && pixels == o.pixels;
  }
};

}  // namespace sepipe
