#include "sepipe/image_io.hpp"

#include <fstream>
#include <limits>
#include <sstream>

namespace sepipe {

namespace {

[[noreturn]] void parse_fail(const std::string& path, std::size_t offset, const std::string& why) {
  throw ParseError(path + ": " + why + " at byte " + std::to_string(offset));
}

// skips PNM whitespace and '#' comments
void skip_separators(const std::string& buf, std::size_t& pos) {
  while (pos < buf.size()) {
    const char c = buf[pos];
    if (c == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
    } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\v' || c == '\f') {
      ++pos;
    } else {
      break;
    }
  }
}

int read_number(const std::string& buf, std::size_t& pos, const std::string& path) {
  skip_separators(buf, pos);
  if (pos >= buf.size() || buf[pos] < '0' || buf[pos] > '9')
    parse_fail(path, pos, "expected a decimal number");
  long long v = 0;
  while (pos < buf.size() && buf[pos] >= '0' && buf[pos] <= '9') {
    v = v * 10 + (buf[pos] - '0');
    if (v > std::numeric_limits<int>::max()) parse_fail(path, pos, "number out of range");
    ++pos;
  }
  return static_cast<int>(v);
}

}  // namespace

Image read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string buf = ss.str();

  std::size_t pos = 0;
  if (buf.size() < 2 || buf[0] != 'P' || buf[1] != '5')
    parse_fail(path, 0, "not a binary PGM (missing P5 magic)");
  pos = 2;
  const int w = read_number(buf, pos, path);
  const int h = read_number(buf, pos, path);
  const int maxval = read_number(buf, pos, path);
  if (w <= 0 || h <= 0) parse_fail(path, pos, "non-positive dimensions");
  if (maxval != 255) parse_fail(path, pos, "unsupported maxval " + std::to_string(maxval));
  if (pos >= buf.size()) parse_fail(path, pos, "missing raster");
  ++pos;  // single whitespace byte after maxval

  const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (buf.size() - pos < need)
    parse_fail(path, buf.size(), "raster truncated, need " + std::to_string(need) + " bytes, have " +
                                     std::to_string(buf.size() - pos));
  Image img(w, h);
  for (std::size_t i = 0; i < need; ++i)
    img.pixels[i] = static_cast<std::uint8_t>(buf[pos + i]);
  return img;
}

void write_pgm(const Image& img, const std::string& path) {
  if (img.width <= 0 || img.height <= 0 || img.size() != static_cast<std::size_t>(img.width) * img.height)
    throw DimensionError("refusing to write malformed image");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw IoError("short write to " + path);
}

}  // namespace sepipe
