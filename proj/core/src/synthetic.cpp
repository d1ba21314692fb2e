#include "sepipe/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "sepipe/errors.hpp"
#include "sepipe/image_io.hpp"
#include "sepipe/rng.hpp"

namespace sepipe {

namespace {
constexpr double kTau = 6.283185307179586;
}

SyntheticExample synthesize_example(int size, std::uint64_t seed, int label,
                                    ExampleGeometry* geometry) {
  if (size < 1) throw ConfigError("size: must be positive, got " + std::to_string(size));
  if (label != 0 && label != 1)
    throw ConfigError("label: must be 0 or 1, got " + std::to_string(label));
  Rng rng(seed);

  ExampleGeometry geom;
  auto lung = [&](double cx_frac) {
    EllipseSpec e;
    e.cx = (cx_frac + rng.uniform(-0.02, 0.02)) * size;
    e.cy = (0.52 + rng.uniform(-0.03, 0.03)) * size;
    e.rx = rng.uniform(0.13, 0.17) * size;
    e.ry = rng.uniform(0.26, 0.34) * size;
    return e;
  };
  geom.left = lung(0.30);
  geom.right = lung(0.70);

  if (label == 1) {
    const int blobs = 2 + static_cast<int>(rng.below(4));
    for (int b = 0; b < blobs; ++b) {
      const EllipseSpec& host = (b % 2 == 0) ? geom.left : geom.right;
      // polar draw pulled toward the center keeps the ring envelope inside
      const double ang = rng.uniform(0.0, kTau);
      const double rad = 0.7 * std::sqrt(rng.uniform());
      BlobSpec bs;
      bs.cx = host.cx + rad * host.rx * std::cos(ang);
      bs.cy = host.cy + rad * host.ry * std::sin(ang);
      bs.sigma = rng.uniform(0.03, 0.055) * size;
      bs.period = rng.uniform(2.0, 3.5);
      geom.blobs.push_back(bs);
    }
  }

  SyntheticExample ex;
  ex.label = label;
  ex.image = Image(size, size, 0);
  ex.mask = Mask(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const bool in_left = geom.left.contains(x, y);
      const bool in_right = geom.right.contains(x, y);
      double v = 25.0;
      if (in_left || in_right) {
        const EllipseSpec& e = in_left ? geom.left : geom.right;
        const double dx = (x + 0.5 - e.cx) / e.rx, dy = (y + 0.5 - e.cy) / e.ry;
        v = 185.0 - 55.0 * (dx * dx + dy * dy);  // bright core, dimmer rim
        ex.mask.at(x, y) = 1;
        for (const BlobSpec& bs : geom.blobs) {
          const double d = std::hypot(x + 0.5 - bs.cx, y + 0.5 - bs.cy);
          if (d < 3.5 * bs.sigma)
            v += 95.0 * std::exp(-d * d / (2.0 * bs.sigma * bs.sigma)) *
                 (0.55 + 0.45 * std::cos(kTau * d / bs.period));
        }
      }
      v += rng.normal(0.0, 4.0);
      ex.image.at(x, y) =
          static_cast<std::uint8_t>(std::clamp<long>(std::lround(v), 0, 255));
    }

  if (geometry) *geometry = geom;
  return ex;
}

void GenConfig::validate() const {
  if (n < 10) throw ConfigError("n: need at least 10 examples, got " + std::to_string(n));
  if (size < 16) throw ConfigError("size: need at least 16 pixels, got " + std::to_string(size));
}

std::string gen_synthetic_dataset(const GenConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError(out_dir + ": cannot create directory: " + ec.message());

  const std::filesystem::path dir(out_dir);
  std::string manifest_body = "path,label,mask_path\n";
  char img_name[32], mask_name[32];
  for (int i = 0; i < cfg.n; ++i) {
    const int label = i % 2;
    const SyntheticExample ex =
        synthesize_example(cfg.size, derive_seed(cfg.seed, "example-" + std::to_string(i)), label);
    std::snprintf(img_name, sizeof img_name, "img_%05d.pgm", i);
    std::snprintf(mask_name, sizeof mask_name, "mask_%05d.pgm", i);
    write_pgm(ex.image, (dir / img_name).string());
    write_mask_pgm(ex.mask, (dir / mask_name).string());
    manifest_body += std::string(img_name) + "," + std::to_string(label) + "," + mask_name + "\n";
  }

  const std::string manifest_path = (dir / "manifest.csv").string();
  std::ofstream out(manifest_path, std::ios::binary);
  if (!out) throw IoError(manifest_path + ": cannot open for writing");
  out << manifest_body;
  if (!out) throw IoError(manifest_path + ": write failed");
  return manifest_path;
}

}  // namespace sepipe
