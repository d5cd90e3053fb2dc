#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace lintomo {

struct NamedArray {
  std::string name;
  std::vector<int> shape;
  std::vector<float> values;

  bool operator==(const NamedArray&) const = default;
};

// Single-file container: 8-byte magic, u64 LE header length, UTF-8 JSON header
// ({format_version, meta, tensors:[{name, shape, offset, count}], blob_floats})
// followed by one contiguous little-endian f32 blob.
struct Archive {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const;
};

void write_archive(const std::filesystem::path& path, const Archive& archive);
// Throws IoError if unreadable and FormatError on bad magic, a malformed
// header, or a blob whose length disagrees with the tensor directory.
Archive read_archive(const std::filesystem::path& path);

}  // namespace lintomo
