#include "sepipe/segment.hpp"

#include <algorithm>
#include <array>
#include <queue>

#include "sepipe/image_io.hpp"

namespace sepipe {

Image apply_mask(const Image& img, const Mask& mask) {
  if (img.width != mask.width || img.height != mask.height)
    throw DimensionError("apply_mask: image " + std::to_string(img.width) + "x" +
                         std::to_string(img.height) + " vs mask " + std::to_string(mask.width) +
                         "x" + std::to_string(mask.height));
  Image out = img;
  for (std::size_t i = 0; i < out.pixels.size(); ++i)
    if (!mask.bits[i]) out.pixels[i] = 0;
  return out;
}

namespace {

int otsu_threshold(const std::array<long, 256>& hist, long total) {
  double sum_all = 0;
  for (int v = 0; v < 256; ++v) sum_all += static_cast<double>(v) * hist[static_cast<std::size_t>(v)];
  double sum_b = 0;
  long w_b = 0;
  double best = -1.0;
  int best_t = 0;
  for (int t = 0; t < 256; ++t) {
    w_b += hist[static_cast<std::size_t>(t)];
    if (w_b == 0) continue;
    const long w_f = total - w_b;
    if (w_f == 0) break;
    sum_b += static_cast<double>(t) * hist[static_cast<std::size_t>(t)];
    const double mu_b = sum_b / w_b;
    const double mu_f = (sum_all - sum_b) / w_f;
    const double between = static_cast<double>(w_b) * w_f * (mu_b - mu_f) * (mu_b - mu_f);
    if (between > best) {
      best = between;
      best_t = t;
    }
  }
  return best_t;
}

// 3x3 structuring element; outside the image counts as background
Mask erode(const Mask& m) {
  Mask out(m.width, m.height, 0);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      bool keep = true;
      for (int dy = -1; dy <= 1 && keep; ++dy)
        for (int dx = -1; dx <= 1 && keep; ++dx) {
          const int xx = x + dx, yy = y + dy;
          if (xx < 0 || yy < 0 || xx >= m.width || yy >= m.height || !m.at(xx, yy)) keep = false;
        }
      out.at(x, y) = keep ? 1 : 0;
    }
  return out;
}

Mask dilate(const Mask& m) {
  Mask out(m.width, m.height, 0);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      bool hit = false;
      for (int dy = -1; dy <= 1 && !hit; ++dy)
        for (int dx = -1; dx <= 1 && !hit; ++dx) {
          const int xx = x + dx, yy = y + dy;
          if (xx >= 0 && yy >= 0 && xx < m.width && yy < m.height && m.at(xx, yy)) hit = true;
        }
      out.at(x, y) = hit ? 1 : 0;
    }
  return out;
}

Mask keep_largest_components(const Mask& m, int keep) {
  std::vector<int> label(m.bits.size(), -1);
  std::vector<std::size_t> sizes;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      const std::size_t idx = static_cast<std::size_t>(y) * m.width + x;
      if (!m.bits[idx] || label[idx] != -1) continue;
      const int id = static_cast<int>(sizes.size());
      std::size_t count = 0;
      std::queue<std::pair<int, int>> q;
      q.push({x, y});
      label[idx] = id;
      while (!q.empty()) {
        auto [cx, cy] = q.front();
        q.pop();
        ++count;
        const int nx[4] = {cx - 1, cx + 1, cx, cx};
        const int ny[4] = {cy, cy, cy - 1, cy + 1};
        for (int k = 0; k < 4; ++k) {
          if (nx[k] < 0 || ny[k] < 0 || nx[k] >= m.width || ny[k] >= m.height) continue;
          const std::size_t nidx = static_cast<std::size_t>(ny[k]) * m.width + nx[k];
          if (m.bits[nidx] && label[nidx] == -1) {
            label[nidx] = id;
            q.push({nx[k], ny[k]});
          }
        }
      }
      sizes.push_back(count);
    }
  if (sizes.empty()) return Mask(m.width, m.height, 0);

  std::vector<int> order(sizes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return sizes[static_cast<std::size_t>(a)] > sizes[static_cast<std::size_t>(b)]; });
  std::vector<char> selected(sizes.size(), 0);
  for (int i = 0; i < keep && i < static_cast<int>(order.size()); ++i)
    selected[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;

  Mask out(m.width, m.height, 0);
  for (std::size_t i = 0; i < m.bits.size(); ++i)
    if (label[i] >= 0 && selected[static_cast<std::size_t>(label[i])]) out.bits[i] = 1;
  return out;
}

}  // namespace

SegmentResult heuristic_segment(const Image& img, bool auto_polarity) {
  if (img.size() == 0) throw DataError("heuristic_segment: empty image");

  std::array<long, 256> hist{};
  for (std::uint8_t p : img.pixels) ++hist[p];
  int levels = 0;
  for (long c : hist)
    if (c > 0) ++levels;
  if (levels <= 1) return {Mask::ones(img.width, img.height), true};

  const int t = otsu_threshold(hist, static_cast<long>(img.size()));
  long above = 0;
  for (int v = t + 1; v < 256; ++v) above += hist[static_cast<std::size_t>(v)];
  const bool bright_fg =
      auto_polarity ? (above * 2 <= static_cast<long>(img.size())) : true;  // minority wins

  Mask bin(img.width, img.height, 0);
  for (std::size_t i = 0; i < img.size(); ++i) {
    const bool is_bright = img.pixels[i] > t;
    bin.bits[i] = (is_bright == bright_fg) ? 1 : 0;
  }

  Mask opened = dilate(erode(bin));
  Mask closed = erode(dilate(opened));
  Mask kept = keep_largest_components(closed, 2);
  if (kept.popcount() == 0) return {Mask::ones(img.width, img.height), true};
  return {kept, false};
}

Mask read_mask_pgm(const std::string& path) {
  const Image img = read_pgm(path);
  Mask m(img.width, img.height);
  for (std::size_t i = 0; i < img.size(); ++i) m.bits[i] = img.pixels[i] > 127 ? 1 : 0;
  return m;
}

void write_mask_pgm(const Mask& mask, const std::string& path) {
  Image img(mask.width, mask.height);
  for (std::size_t i = 0; i < mask.bits.size(); ++i) img.pixels[i] = mask.bits[i] ? 255 : 0;
  write_pgm(img, path);
}

}  // namespace sepipe
