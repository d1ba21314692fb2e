#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sepipe/image.hpp"
#include "sepipe/models.hpp"
#include "sepipe/segment.hpp"

namespace sepipe {

struct ManifestRecord {
  std::string image_path;
  int label = 0;  // 0 = class A (normal), 1 = class B
  std::string mask_path;  // empty when the manifest has no mask column
};

// Header is `path,label` or `path,label,mask_path`. Labels must be 0 or 1;
// anything else is a parse error carrying the line number. Paths are kept
// verbatim; resolution happens at load time.
std::vector<ManifestRecord> parse_manifest(const std::string& path);

struct Example {
  Image image;
  int label = 0;
  std::optional<Mask> mask;
};

struct Dataset {
  std::vector<Example> train;
  std::vector<Example> test;
};

// Seeded shuffle, then an 80/20 split (n_train = 4n/5). Relative paths
// resolve against the manifest's directory. Duplicate paths load as distinct
// records. Missing files raise a data error naming the path.
Dataset load_dataset(const std::string& manifest_path, std::uint64_t seed);

std::vector<Sample> to_samples(const std::vector<Example>& examples);

}  // namespace sepipe
