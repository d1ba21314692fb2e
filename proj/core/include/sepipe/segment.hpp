#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sepipe/image.hpp"

namespace sepipe {

struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;  // row-major, 1 = region of interest

  Mask() = default;
  Mask(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), bits(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}

  static Mask ones(int w, int h) { return Mask(w, h, 1); }

  std::uint8_t at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(int x, int y) { return bits[static_cast<std::size_t>(y) * width + x]; }
  std::size_t popcount() const {
    std::size_t n = 0;
    for (auto b : bits) n += b;
    return n;
  }
  bool operator==(const Mask& o) const {
    return width == o.width && height == o.height && bits == o.bits;
  }
};

struct SegmentResult {
  Mask mask;
  bool degenerate = false;  // set when the fallback all-ones mask was used
};

// out[p] = img[p] where mask[p] = 1, else 0
Image apply_mask(const Image& img, const Mask& mask);

// Otsu threshold, 3x3 morphological open + close, keep the two largest
// 4-connected components. With auto_polarity the minority side of the
// threshold is foreground; without it the bright side is.
SegmentResult heuristic_segment(const Image& img, bool auto_polarity = true);

// masks as PGM: 0 background, 255 foreground; loading maps >127 to 1
Mask read_mask_pgm(const std::string& path);
void write_mask_pgm(const Mask& mask, const std::string& path);

}  // namespace sepipe
