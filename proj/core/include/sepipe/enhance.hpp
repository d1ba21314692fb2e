#pragma once

#include <complex>
#include <string>
#include <vector>

#include "sepipe/image.hpp"

namespace sepipe {

enum class BlurKind { Gaussian, Median, Maximum, Minimum };
enum class EnhanceOption { Clahe, Um, Hfe, CropResize, None };

struct ClaheConfig {
  int grid_x = 4;
  int grid_y = 4;
  int clip = 8;  // multiplier of the uniform bin level
};

struct UmConfig {
  BlurKind blur = BlurKind::Gaussian;
  int radius = 2;
  double amount = 2.0;
};

struct HfeConfig {
  double cutoff = 10.0;  // D0, distance from the centered-spectrum origin
};

struct CropConfig {
  int margin = 2;
};

struct EnhanceConfig {
  EnhanceOption option = EnhanceOption::None;
  ClaheConfig clahe;
  UmConfig um;
  HfeConfig hfe;
  CropConfig crop;

  void validate() const;  // throws ConfigError naming the offending field
};

std::string to_string(EnhanceOption opt);
std::string to_string(BlurKind kind);
EnhanceOption enhance_option_from_string(const std::string& s);
BlurKind blur_kind_from_string(const std::string& s);

// m(v) = round(255 * (cdf(v) - cdf_min) / (N - cdf_min)); constant images are
// a fixed point (identity mapping).
Image histogram_equalize(const Image& img);

// Tiled equalization with clipped histograms. Per tile: clip the 256-bin
// histogram at max(1, ceil(clip * tile_pixels / 256)), redistribute the excess
// uniformly in one pass (rounding residual into bin 0), then build the
// histogram_equalize mapping. Constant tiles keep the identity mapping. Each
// pixel blends the four nearest tile-center mappings:
//   acc = wy0*wx0*m00 + wy0*wx1*m01 + wy1*wx0*m10 + wy1*wx1*m11
// evaluated left to right in double, then lround; outside the center hull the
// nearest mapping is used. Tile centers sit at (first + last pixel)/2.
Image clahe(const Image& img, const ClaheConfig& cfg = {});

// gaussian: separable, sigma = radius/2, half-width ceil(3*sigma), clamped
// edges; median/maximum/minimum: rank filters over (2r+1)^2 windows.
Image blur(const Image& img, BlurKind kind, int radius);

// out = clamp01(x + amount * (x - blur(x))) in the real domain.
Image unsharp_mask(const Image& img, BlurKind kind, int radius, double amount);

// Spectral gain 1 + (1 - exp(-D^2 / (2 cutoff^2))) applied to the centered
// spectrum, then histogram equalization.
Image hfe(const Image& img, double cutoff);

// Drop `margin` pixels from each side, bilinear-resample back. Sample points
// map through src = (dst + 0.5) * (src_size / dst_size) - 0.5.
Image crop_resize(const Image& img, int margin = 2);

Image enhance(const Image& img, const EnhanceConfig& cfg);

// pre-quantization stages, exposed for numeric comparison
std::vector<double> hfe_filter_real(const std::vector<double>& x, int w, int h, double cutoff);
double hfe_gain(double dist2, double cutoff);
void fft2d(std::vector<std::complex<double>>& a, int w, int h, bool inverse);

}  // namespace sepipe
