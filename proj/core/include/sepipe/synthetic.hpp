#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sepipe/image.hpp"
#include "sepipe/segment.hpp"

namespace sepipe {

// Stand-in corpus: class 0 images carry two smooth bright ellipses on a dark
// noisy background, class 1 additionally has 2..5 small high-frequency ringed
// blobs inside the ellipses. The ellipse support doubles as the ground-truth
// mask.

struct EllipseSpec {
  double cx = 0, cy = 0, rx = 1, ry = 1;

  bool contains(int x, int y) const {
    const double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
    return dx * dx + dy * dy <= 1.0;
  }
};

struct BlobSpec {
  double cx = 0, cy = 0;
  double sigma = 1;   // envelope width in pixels
  double period = 2;  // ring wavelength in pixels
};

struct ExampleGeometry {
  EllipseSpec left, right;
  std::vector<BlobSpec> blobs;
};

struct SyntheticExample {
  Image image{1, 1, 0};
  Mask mask{1, 1};
  int label = 0;
};

// Fully determined by (size, seed, label); geometry is returned so tests can
// rebuild the mask independently.
SyntheticExample synthesize_example(int size, std::uint64_t seed, int label,
                                    ExampleGeometry* geometry = nullptr);

struct GenConfig {
  int n = 100;
  int size = 64;
  std::uint64_t seed = 0;

  void validate() const;  // n >= 10, size >= 16
};

// Writes img_%05d.pgm, mask_%05d.pgm and manifest.csv into out_dir and
// returns the manifest path. Labels alternate, so the classes are balanced.
std::string gen_synthetic_dataset(const GenConfig& cfg, const std::string& out_dir);

}  // namespace sepipe
