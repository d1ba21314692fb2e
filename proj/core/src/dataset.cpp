#include "sepipe/dataset.hpp"

#include <filesystem>
#include <fstream>
#include <numeric>

#include "sepipe/errors.hpp"
#include "sepipe/image_io.hpp"
#include "sepipe/rng.hpp"

namespace sepipe {

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

}  // namespace

std::vector<ManifestRecord> parse_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open manifest");

  std::vector<ManifestRecord> records;
  std::string line;
  int line_no = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_fields(line);
    if (!saw_header) {
      if (fields.size() < 2 || fields.size() > 3 || fields[0] != "path" || fields[1] != "label" ||
          (fields.size() == 3 && fields[2] != "mask_path"))
        throw ParseError(path + ":" + std::to_string(line_no) +
                         ": expected header path,label[,mask_path], got '" + line + "'");
      saw_header = true;
      continue;
    }
    if (fields.size() < 2 || fields.size() > 3)
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected 2 or 3 fields, got " +
                       std::to_string(fields.size()));
    ManifestRecord rec;
    rec.image_path = fields[0];
    if (fields[1] == "0")
      rec.label = 0;
    else if (fields[1] == "1")
      rec.label = 1;
    else
      throw ParseError(path + ":" + std::to_string(line_no) + ": label must be 0 or 1, got '" +
                       fields[1] + "'");
    if (fields.size() == 3) rec.mask_path = fields[2];
    records.push_back(std::move(rec));
  }
  if (!saw_header) throw ParseError(path + ": empty manifest, expected header path,label[,mask_path]");
  return records;
}

std::vector<Sample> to_samples(const std::vector<Example>& examples) {
  std::vector<Sample> out;
  out.reserve(examples.size());
  for (const Example& e : examples) out.push_back({e.image, e.label});
  return out;
}

Dataset load_dataset(const std::string& manifest_path, std::uint64_t seed) {
  const std::vector<ManifestRecord> records = parse_manifest(manifest_path);
  const std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path fp(p);
    return fp.is_absolute() ? fp.string() : (base / fp).string();
  };

  std::vector<Example> all;
  all.reserve(records.size());
  for (const ManifestRecord& rec : records) {
    const std::string img_path = resolve(rec.image_path);
    if (!std::filesystem::exists(img_path))
      throw DataError(img_path + ": referenced by manifest but missing");
    Example ex;
    ex.image = read_pgm(img_path);
    ex.label = rec.label;
    if (!rec.mask_path.empty()) {
      const std::string mask_path = resolve(rec.mask_path);
      if (!std::filesystem::exists(mask_path))
        throw DataError(mask_path + ": referenced by manifest but missing");
      Mask mask = read_mask_pgm(mask_path);
      if (mask.width != ex.image.width || mask.height != ex.image.height)
        throw DataError(mask_path + ": mask is " + std::to_string(mask.width) + "x" +
                        std::to_string(mask.height) + " but image is " +
                        std::to_string(ex.image.width) + "x" + std::to_string(ex.image.height));
      ex.mask = std::move(mask);
    }
    all.push_back(std::move(ex));
  }

  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, "train-test-split"));
  rng.shuffle(order);

  const std::size_t n_train = all.size() * 4 / 5;
  Dataset ds;
  ds.train.reserve(n_train);
  ds.test.reserve(all.size() - n_train);
  for (std::size_t i = 0; i < order.size(); ++i)
    (i < n_train ? ds.train : ds.test).push_back(std::move(all[order[i]]));
  return ds;
}

}  // namespace sepipe
