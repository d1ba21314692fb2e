#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "sepipe/rng.hpp"
#include "sepipe/segment.hpp"
#include "support/test_util.hpp"

using namespace sepipe;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "sepipe_segment_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

// two filled ellipses on a flat background, no noise
Image ellipse_phantom(int size, std::uint8_t bg, std::uint8_t fg, Mask* truth = nullptr) {
  Image img(size, size, bg);
  if (truth) *truth = Mask(size, size, 0);
  const double cy = size / 2.0;
  const struct {
    double cx, rx, ry;
  } lobes[2] = {{size * 0.32, size * 0.16, size * 0.30}, {size * 0.68, size * 0.16, size * 0.30}};
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (const auto& e : lobes) {
        const double dx = (x - e.cx) / e.rx, dy = (y - cy) / e.ry;
        if (dx * dx + dy * dy <= 1.0) {
          img.at(x, y) = fg;
          if (truth) truth->at(x, y) = 1;
        }
      }
  return img;
}

}  // namespace

TEST_CASE("apply_mask basics") {
  Rng rng(5);
  Image img(8, 6);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));

  CHECK(apply_mask(img, Mask::ones(8, 6)) == img);

  const Image black = apply_mask(img, Mask(8, 6, 0));
  for (auto p : black.pixels) CHECK(p == 0);

  Mask checker(8, 6);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 8; ++x) checker.at(x, y) = static_cast<std::uint8_t>((x + y) % 2);
  const Image picked = apply_mask(img, checker);
  std::size_t nonzero = 0;
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 8; ++x) {
      CHECK(picked.at(x, y) == (checker.at(x, y) ? img.at(x, y) : 0));
      if (picked.at(x, y)) ++nonzero;
    }
  CHECK(nonzero <= checker.popcount());

  CHECK(apply_mask(picked, checker) == picked);  // idempotent
  CHECK_THROWS_AS(apply_mask(img, Mask(4, 4, 1)), DimensionError);
}

TEST_CASE("heuristic segmentation finds the phantom lobes") {
  Mask truth;
  const Image img = ellipse_phantom(64, 30, 200, &truth);
  const SegmentResult res = heuristic_segment(img);
  CHECK(!res.degenerate);

  std::size_t ellipse_px = 0, covered = 0, bg_px = 0, leaked = 0;
  for (std::size_t i = 0; i < truth.bits.size(); ++i) {
    if (truth.bits[i]) {
      ++ellipse_px;
      if (res.mask.bits[i]) ++covered;
    } else {
      ++bg_px;
      if (res.mask.bits[i]) ++leaked;
    }
  }
  CHECK(covered >= ellipse_px * 95 / 100);
  CHECK(leaked <= bg_px * 5 / 100);

  // deterministic
  CHECK(heuristic_segment(img).mask == res.mask);
}

TEST_CASE("constant image degenerates to an all-ones mask with a warning") {
  const SegmentResult res = heuristic_segment(Image(16, 16, 50));
  CHECK(res.degenerate);
  CHECK(res.mask == Mask::ones(16, 16));
}

TEST_CASE("fixed polarity on an inverted phantom selects the complement") {
  Mask truth;
  Image img = ellipse_phantom(64, 30, 200, &truth);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(255 - p);  // dark lobes, bright bg
  const SegmentResult res = heuristic_segment(img, /*auto_polarity=*/false);
  CHECK(!res.degenerate);
  // morphology trims the outermost image ring, so judge the interior
  std::size_t on_ellipse = 0, on_bg = 0, bg_px = 0, ellipse_px = 0;
  for (int y = 1; y < 63; ++y)
    for (int x = 1; x < 63; ++x) {
      if (truth.at(x, y)) {
        ++ellipse_px;
        on_ellipse += res.mask.at(x, y);
      } else {
        ++bg_px;
        on_bg += res.mask.at(x, y);
      }
    }
  CHECK(on_ellipse <= ellipse_px * 5 / 100);
  CHECK(on_bg >= bg_px * 95 / 100);
}

TEST_CASE("segmentation is stable under a background border") {
  const int size = 48, border = 4;
  Mask truth;
  const Image img = ellipse_phantom(size, 30, 200, &truth);
  const Mask inner = heuristic_segment(img).mask;

  Image padded(size + 2 * border, size + 2 * border, 30);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) padded.at(x + border, y + border) = img.at(x, y);
  const Mask outer = heuristic_segment(padded).mask;

  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) REQUIRE(outer.at(x + border, y + border) == inner.at(x, y));
}

TEST_CASE("mask pgm round-trip") {
  Rng rng(13);
  Mask m(19, 7);
  for (auto& b : m.bits) b = static_cast<std::uint8_t>(rng.below(2));
  const auto path = temp_file("roundtrip.pgm");
  write_mask_pgm(m, path.string());
  CHECK(read_mask_pgm(path.string()) == m);
}

TEST_CASE("mask loading thresholds at 127") {
  const auto path = temp_file("threshold.pgm");
  std::ofstream out(path, std::ios::binary);
  out << "P5\n3 1\n255\n";
  const unsigned char raw[3] = {127, 128, 255};
  out.write(reinterpret_cast<const char*>(raw), 3);
  out.close();
  const Mask m = read_mask_pgm(path.string());
  CHECK(m.bits == std::vector<std::uint8_t>{0, 1, 1});
}

TEST_CASE("truncated mask file fails cleanly") {
  const auto path = temp_file("truncated.pgm");
  std::ofstream out(path, std::ios::binary);
  out << "P5\n4 4\n255\nab";  // 2 of 16 raster bytes
  out.close();
  CHECK_THROWS_AS(read_mask_pgm(path.string()), ParseError);
  try {
    read_mask_pgm(path.string());
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("byte") != std::string::npos);
  }
}
