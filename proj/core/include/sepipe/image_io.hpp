#pragma once

#include <string>

#include "sepipe/image.hpp"

namespace sepipe {

// Binary PGM (P5, maxval 255). Parse failures carry the byte offset.
Image read_pgm(const std::string& path);
void write_pgm(const Image& img, const std::string& path);

}  // namespace sepipe
