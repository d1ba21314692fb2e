#include "sepipe/enhance.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

namespace sepipe {

void EnhanceConfig::validate() const {
  switch (option) {
    case EnhanceOption::Clahe:
      if (clahe.grid_x < 1 || clahe.grid_y < 1)
        throw ConfigError("clahe grid dimensions must be >= 1");
      if (clahe.clip < 1) throw ConfigError("clahe clip must be >= 1");
      break;
    case EnhanceOption::Um:
      if (um.radius < 1) throw ConfigError("um radius must be >= 1");
      if (!(um.amount > 0)) throw ConfigError("um amount must be > 0");
      break;
    case EnhanceOption::Hfe:
      if (!(hfe.cutoff > 0)) throw ConfigError("hfe cutoff must be > 0");
      break;
    case EnhanceOption::CropResize:
      if (crop.margin < 0) throw ConfigError("crop margin must be >= 0");
      break;
    case EnhanceOption::None:
      break;
  }
}

std::string to_string(EnhanceOption opt) {
  switch (opt) {
    case EnhanceOption::Clahe: return "clahe";
    case EnhanceOption::Um: return "um";
    case EnhanceOption::Hfe: return "hfe";
    case EnhanceOption::CropResize: return "crop";
    case EnhanceOption::None: return "none";
  }
  return "none";
}

std::string to_string(BlurKind kind) {
  switch (kind) {
    case BlurKind::Gaussian: return "gaussian";
    case BlurKind::Median: return "median";
    case BlurKind::Maximum: return "maximum";
    case BlurKind::Minimum: return "minimum";
  }
  return "gaussian";
}

EnhanceOption enhance_option_from_string(const std::string& s) {
  if (s == "clahe") return EnhanceOption::Clahe;
  if (s == "um") return EnhanceOption::Um;
  if (s == "hfe") return EnhanceOption::Hfe;
  if (s == "crop") return EnhanceOption::CropResize;
  if (s == "none") return EnhanceOption::None;
  throw ConfigError("unknown enhancement option '" + s + "'");
}

BlurKind blur_kind_from_string(const std::string& s) {
  if (s == "gaussian") return BlurKind::Gaussian;
  if (s == "median") return BlurKind::Median;
  if (s == "maximum") return BlurKind::Maximum;
  if (s == "minimum") return BlurKind::Minimum;
  throw ConfigError("unknown blur kind '" + s + "'");
}

namespace {

bool is_constant(const Image& img) {
  for (std::uint8_t p : img.pixels)
    if (p != img.pixels[0]) return false;
  return true;
}

std::array<int, 256> raw_histogram(const Image& img, int x0, int y0, int x1, int y1) {
  std::array<int, 256> h{};
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) ++h[img.at(x, y)];
  return h;
}

// equalization mapping from a histogram with total mass n
std::array<int, 256> mapping_from_histogram(const std::array<int, 256>& hist, long n) {
  std::array<int, 256> m{};
  long cdf = 0, cdf_min = 0;
  for (int v = 0; v < 256; ++v)
    if (hist[static_cast<std::size_t>(v)] > 0) {
      cdf_min = 0;
      for (int u = 0; u <= v; ++u) cdf_min += hist[static_cast<std::size_t>(u)];
      break;
    }
  for (int v = 0; v < 256; ++v) {
    cdf += hist[static_cast<std::size_t>(v)];
    const double num = static_cast<double>(cdf - cdf_min);
    long out = std::lround(255.0 * num / static_cast<double>(n - cdf_min));
    m[static_cast<std::size_t>(v)] = static_cast<int>(std::clamp(out, 0L, 255L));
  }
  return m;
}

std::array<int, 256> identity_mapping() {
  std::array<int, 256> m{};
  for (int v = 0; v < 256; ++v) m[static_cast<std::size_t>(v)] = v;
  return m;
}

bool single_level(const std::array<int, 256>& hist) {
  int nonzero = 0;
  for (int v : hist)
    if (v > 0) ++nonzero;
  return nonzero <= 1;
}

}  // namespace

Image histogram_equalize(const Image& img) {
  if (img.size() == 0) throw DataError("histogram_equalize: zero-area image");
  if (is_constant(img)) return img;
  const auto hist = raw_histogram(img, 0, 0, img.width, img.height);
  const auto m = mapping_from_histogram(hist, static_cast<long>(img.size()));
  Image out = img;
  for (auto& p : out.pixels) p = static_cast<std::uint8_t>(m[p]);
  return out;
}

Image clahe(const Image& img, const ClaheConfig& cfg) {
  if (cfg.grid_x < 1 || cfg.grid_y < 1) throw ConfigError("clahe grid dimensions must be >= 1");
  if (img.width < cfg.grid_x || img.height < cfg.grid_y)
    throw ConfigError("clahe: image " + std::to_string(img.width) + "x" +
                      std::to_string(img.height) + " smaller than grid " +
                      std::to_string(cfg.grid_x) + "x" + std::to_string(cfg.grid_y));

  const int gx = cfg.grid_x, gy = cfg.grid_y;
  std::vector<int> xb(static_cast<std::size_t>(gx) + 1), yb(static_cast<std::size_t>(gy) + 1);
  for (int i = 0; i < gx; ++i) xb[static_cast<std::size_t>(i)] = i * (img.width / gx);
  xb[static_cast<std::size_t>(gx)] = img.width;  // last tile absorbs the remainder
  for (int i = 0; i < gy; ++i) yb[static_cast<std::size_t>(i)] = i * (img.height / gy);
  yb[static_cast<std::size_t>(gy)] = img.height;

  std::vector<std::array<int, 256>> maps(static_cast<std::size_t>(gx) * gy);
  std::vector<double> cx(static_cast<std::size_t>(gx)), cy(static_cast<std::size_t>(gy));
  for (int ty = 0; ty < gy; ++ty)
    for (int tx = 0; tx < gx; ++tx) {
      const int x0 = xb[static_cast<std::size_t>(tx)], x1 = xb[static_cast<std::size_t>(tx) + 1];
      const int y0 = yb[static_cast<std::size_t>(ty)], y1 = yb[static_cast<std::size_t>(ty) + 1];
      auto hist = raw_histogram(img, x0, y0, x1, y1);
      const long tp = static_cast<long>(x1 - x0) * (y1 - y0);
      auto& m = maps[static_cast<std::size_t>(ty) * gx + tx];
      if (single_level(hist)) {
        m = identity_mapping();
        continue;
      }
      const long limit =
          std::max(1L, static_cast<long>(std::ceil(static_cast<double>(cfg.clip) * static_cast<double>(tp) / 256.0)));
      long excess = 0;
      for (int v = 0; v < 256; ++v)
        if (hist[static_cast<std::size_t>(v)] > limit) {
          excess += hist[static_cast<std::size_t>(v)] - limit;
          hist[static_cast<std::size_t>(v)] = static_cast<int>(limit);
        }
      const long per_bin = excess / 256;
      for (int v = 0; v < 256; ++v) hist[static_cast<std::size_t>(v)] += static_cast<int>(per_bin);
      hist[0] += static_cast<int>(excess - per_bin * 256);
      m = mapping_from_histogram(hist, tp);
    }
  for (int tx = 0; tx < gx; ++tx)
    cx[static_cast<std::size_t>(tx)] =
        (xb[static_cast<std::size_t>(tx)] + xb[static_cast<std::size_t>(tx) + 1] - 1) / 2.0;
  for (int ty = 0; ty < gy; ++ty)
    cy[static_cast<std::size_t>(ty)] =
        (yb[static_cast<std::size_t>(ty)] + yb[static_cast<std::size_t>(ty) + 1] - 1) / 2.0;

  auto locate = [](const std::vector<double>& centers, int pos, int& i0, int& i1, double& f) {
    const int last = static_cast<int>(centers.size()) - 1;
    if (pos <= centers[0]) {
      i0 = i1 = 0;
      f = 0.0;
      return;
    }
    if (pos >= centers[static_cast<std::size_t>(last)]) {
      i0 = i1 = last;
      f = 0.0;
      return;
    }
    i0 = 0;
    while (centers[static_cast<std::size_t>(i0) + 1] <= pos) ++i0;
    i1 = i0 + 1;
    f = (pos - centers[static_cast<std::size_t>(i0)]) /
        (centers[static_cast<std::size_t>(i1)] - centers[static_cast<std::size_t>(i0)]);
  };

  Image out(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    int ty0, ty1;
    double fy;
    locate(cy, y, ty0, ty1, fy);
    const double wy0 = 1.0 - fy, wy1 = fy;
    for (int x = 0; x < img.width; ++x) {
      int tx0, tx1;
      double fx;
      locate(cx, x, tx0, tx1, fx);
      const double wx0 = 1.0 - fx, wx1 = fx;
      const int v = img.at(x, y);
      const double m00 = maps[static_cast<std::size_t>(ty0) * gx + tx0][static_cast<std::size_t>(v)];
      const double m01 = maps[static_cast<std::size_t>(ty0) * gx + tx1][static_cast<std::size_t>(v)];
      const double m10 = maps[static_cast<std::size_t>(ty1) * gx + tx0][static_cast<std::size_t>(v)];
      const double m11 = maps[static_cast<std::size_t>(ty1) * gx + tx1][static_cast<std::size_t>(v)];
      const double acc = wy0 * wx0 * m00 + wy0 * wx1 * m01 + wy1 * wx0 * m10 + wy1 * wx1 * m11;
      out.at(x, y) = static_cast<std::uint8_t>(std::clamp(std::lround(acc), 0L, 255L));
    }
  }
  return out;
}

namespace {

Image gaussian_blur(const Image& img, int radius) {
  const double sigma = radius / 2.0;
  const int hw = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> w(static_cast<std::size_t>(2 * hw) + 1);
  double wsum = 0;
  for (int i = -hw; i <= hw; ++i) {
    w[static_cast<std::size_t>(i + hw)] = std::exp(-(static_cast<double>(i) * i) / (2.0 * sigma * sigma));
    wsum += w[static_cast<std::size_t>(i + hw)];
  }
  for (double& v : w) v /= wsum;

  const int W = img.width, H = img.height;
  std::vector<double> tmp(img.size()), out(img.size());
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double acc = 0;
      for (int i = -hw; i <= hw; ++i) {
        const int xx = std::clamp(x + i, 0, W - 1);
        acc += w[static_cast<std::size_t>(i + hw)] * (img.at(xx, y) / 255.0);
      }
      tmp[static_cast<std::size_t>(y) * W + x] = acc;
    }
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double acc = 0;
      for (int i = -hw; i <= hw; ++i) {
        const int yy = std::clamp(y + i, 0, H - 1);
        acc += w[static_cast<std::size_t>(i + hw)] * tmp[static_cast<std::size_t>(yy) * W + x];
      }
      out[static_cast<std::size_t>(y) * W + x] = acc;
    }
  return Image::from_real(out, W, H);
}

Image rank_blur(const Image& img, BlurKind kind, int radius) {
  const int W = img.width, H = img.height;
  Image out(W, H);
  std::vector<std::uint8_t> window;
  window.reserve(static_cast<std::size_t>(2 * radius + 1) * (2 * radius + 1));
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      window.clear();
      for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
          window.push_back(img.at(std::clamp(x + dx, 0, W - 1), std::clamp(y + dy, 0, H - 1)));
      std::uint8_t v = 0;
      switch (kind) {
        case BlurKind::Median: {
          auto mid = window.begin() + static_cast<std::ptrdiff_t>(window.size() / 2);
          std::nth_element(window.begin(), mid, window.end());
          v = *mid;
          break;
        }
        case BlurKind::Maximum:
          v = *std::max_element(window.begin(), window.end());
          break;
        case BlurKind::Minimum:
          v = *std::min_element(window.begin(), window.end());
          break;
        case BlurKind::Gaussian:
          break;  // unreachable
      }
      out.at(x, y) = v;
    }
  return out;
}

}  // namespace

Image blur(const Image& img, BlurKind kind, int radius) {
  if (radius < 1) throw ConfigError("blur radius must be >= 1");
  if (kind == BlurKind::Gaussian) return gaussian_blur(img, radius);
  return rank_blur(img, kind, radius);
}

Image unsharp_mask(const Image& img, BlurKind kind, int radius, double amount) {
  if (amount < 0) throw ConfigError("um amount must be >= 0");
  const Image blurred = blur(img, kind, radius);
  std::vector<double> out(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double x = img.pixels[i] / 255.0;
    const double b = blurred.pixels[i] / 255.0;
    out[i] = std::clamp(x + amount * (x - b), 0.0, 1.0);
  }
  return Image::from_real(out, img.width, img.height);
}

namespace {

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

void fft1d(std::complex<double>* a, int n, int stride, bool inverse,
           std::vector<std::complex<double>>& scratch) {
  const double sign = inverse ? 1.0 : -1.0;
  if (!is_pow2(n)) {
    // direct transform for awkward sizes
    scratch.assign(static_cast<std::size_t>(n), {0.0, 0.0});
    for (int k = 0; k < n; ++k) {
      std::complex<double> acc{0.0, 0.0};
      for (int j = 0; j < n; ++j) {
        const double ang = sign * 2.0 * std::numbers::pi * j * k / n;
        acc += a[static_cast<std::ptrdiff_t>(j) * stride] * std::complex<double>(std::cos(ang), std::sin(ang));
      }
      scratch[static_cast<std::size_t>(k)] = acc;
    }
    for (int k = 0; k < n; ++k) a[static_cast<std::ptrdiff_t>(k) * stride] = scratch[static_cast<std::size_t>(k)];
  } else {
    // iterative radix-2
    for (int i = 1, j = 0; i < n; ++i) {
      int bit = n >> 1;
      for (; j & bit; bit >>= 1) j ^= bit;
      j ^= bit;
      if (i < j)
        std::swap(a[static_cast<std::ptrdiff_t>(i) * stride], a[static_cast<std::ptrdiff_t>(j) * stride]);
    }
    for (int len = 2; len <= n; len <<= 1) {
      const double ang = sign * 2.0 * std::numbers::pi / len;
      const std::complex<double> wlen(std::cos(ang), std::sin(ang));
      for (int i = 0; i < n; i += len) {
        std::complex<double> w(1.0, 0.0);
        for (int j = 0; j < len / 2; ++j) {
          auto& lo = a[static_cast<std::ptrdiff_t>(i + j) * stride];
          auto& hi = a[static_cast<std::ptrdiff_t>(i + j + len / 2) * stride];
          const std::complex<double> u = lo, v = hi * w;
          lo = u + v;
          hi = u - v;
          w *= wlen;
        }
      }
    }
  }
  if (inverse)
    for (int i = 0; i < n; ++i) a[static_cast<std::ptrdiff_t>(i) * stride] /= n;
}

}  // namespace

void fft2d(std::vector<std::complex<double>>& a, int w, int h, bool inverse) {
  if (static_cast<std::size_t>(w) * h != a.size())
    throw DimensionError("fft2d: buffer does not match " + std::to_string(w) + "x" + std::to_string(h));
  std::vector<std::complex<double>> scratch;
  for (int y = 0; y < h; ++y) fft1d(a.data() + static_cast<std::ptrdiff_t>(y) * w, w, 1, inverse, scratch);
  for (int x = 0; x < w; ++x) fft1d(a.data() + x, h, w, inverse, scratch);
}

double hfe_gain(double dist2, double cutoff) {
  return 2.0 - std::exp(-dist2 / (2.0 * cutoff * cutoff));
}

std::vector<double> hfe_filter_real(const std::vector<double>& x, int w, int h, double cutoff) {
  if (!(cutoff > 0)) throw ConfigError("hfe cutoff must be > 0");
  if (static_cast<std::size_t>(w) * h != x.size())
    throw DimensionError("hfe_filter_real: buffer does not match dimensions");
  std::vector<std::complex<double>> f(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) f[i] = {x[i], 0.0};
  fft2d(f, w, h, false);
  for (int u = 0; u < h; ++u) {
    const int du = (2 * u < h) ? u : u - h;  // signed frequency = distance from shifted center
    for (int v = 0; v < w; ++v) {
      const int dv = (2 * v < w) ? v : v - w;
      const double d2 = static_cast<double>(du) * du + static_cast<double>(dv) * dv;
      f[static_cast<std::size_t>(u) * w + v] *= hfe_gain(d2, cutoff);
    }
  }
  fft2d(f, w, h, true);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f[i].real();
  return out;
}

Image hfe(const Image& img, double cutoff) {
  auto y = hfe_filter_real(img.to_real(), img.width, img.height, cutoff);
  for (double& v : y) v = std::clamp(v, 0.0, 1.0);
  return histogram_equalize(Image::from_real(y, img.width, img.height));
}

Image crop_resize(const Image& img, int margin) {
  if (margin < 0) throw ConfigError("crop margin must be >= 0");
  if (margin == 0) return img;
  const int cw = img.width - 2 * margin, ch = img.height - 2 * margin;
  if (cw < 1 || ch < 1)
    throw ConfigError("crop margin " + std::to_string(margin) + " leaves no pixels of " +
                      std::to_string(img.width) + "x" + std::to_string(img.height));
  const int W = img.width, H = img.height;
  std::vector<double> out(img.size());
  for (int y = 0; y < H; ++y) {
    double sy = (y + 0.5) * (static_cast<double>(ch) / H) - 0.5;
    sy = std::clamp(sy, 0.0, static_cast<double>(ch - 1));
    const int y0 = static_cast<int>(sy);
    const int y1 = std::min(y0 + 1, ch - 1);
    const double fy = sy - y0;
    for (int x = 0; x < W; ++x) {
      double sx = (x + 0.5) * (static_cast<double>(cw) / W) - 0.5;
      sx = std::clamp(sx, 0.0, static_cast<double>(cw - 1));
      const int x0 = static_cast<int>(sx);
      const int x1 = std::min(x0 + 1, cw - 1);
      const double fx = sx - x0;
      const double p00 = img.at(margin + x0, margin + y0) / 255.0;
      const double p01 = img.at(margin + x1, margin + y0) / 255.0;
      const double p10 = img.at(margin + x0, margin + y1) / 255.0;
      const double p11 = img.at(margin + x1, margin + y1) / 255.0;
      out[static_cast<std::size_t>(y) * W + x] =
          (1.0 - fy) * ((1.0 - fx) * p00 + fx * p01) + fy * ((1.0 - fx) * p10 + fx * p11);
    }
  }
  return Image::from_real(out, W, H);
}

Image enhance(const Image& img, const EnhanceConfig& cfg) {
  cfg.validate();
  switch (cfg.option) {
    case EnhanceOption::Clahe:
      return clahe(img, cfg.clahe);
    case EnhanceOption::Um:
      return unsharp_mask(img, cfg.um.blur, cfg.um.radius, cfg.um.amount);
    case EnhanceOption::Hfe:
      return hfe(img, cfg.hfe.cutoff);
    case EnhanceOption::CropResize:
      return crop_resize(img, cfg.crop.margin);
    case EnhanceOption::None:
      return img;
  }
  return img;
}

}  // namespace sepipe
