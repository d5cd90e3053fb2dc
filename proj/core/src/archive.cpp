#include "lintomo/archive.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "lintomo/error.hpp"

namespace lintomo {

namespace {
constexpr char kMagic[8] = {'L', 'T', 'A', 'R', 'C', 'H', '0', '1'};
}

const NamedArray* Archive::find(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  nlohmann::json header;
  header["format_version"] = 1;
  header["meta"] = archive.meta;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& a : archive.arrays) {
    std::size_t expected = 1;
    for (int d : a.shape) expected *= static_cast<std::size_t>(d);
    if (expected != a.values.size()) {
      throw Error(ErrorKind::kShapeMismatch, "array '" + a.name + "' does not match its shape");
    }
    header["tensors"].push_back(
        {{"name", a.name}, {"shape", a.shape}, {"offset", offset}, {"count", a.values.size()}});
    offset += a.values.size();
  }
  header["blob_floats"] = offset;
  const std::string text = header.dump();
  const std::uint64_t header_len = text.size();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIoError, "cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& a : archive.arrays) {
    out.write(reinterpret_cast<const char*>(a.values.data()),
              static_cast<std::streamsize>(a.values.size() * sizeof(float)));
  }
  if (!out) throw Error(ErrorKind::kIoError, "write failed for " + path.string());
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIoError, "cannot open " + path.string());
  std::error_code ec;
  const auto file_size = std::filesystem::file_size(path, ec);
  if (ec) throw Error(ErrorKind::kIoError, "cannot stat " + path.string());

  if (file_size < 16) throw Error(ErrorKind::kFormatError, path.string() + ": not an archive");
  char magic[8] = {};
  std::uint64_t header_len = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorKind::kFormatError, path.string() + ": not an archive");
  }
  if (header_len > file_size - 16) {
    throw Error(ErrorKind::kFormatError, path.string() + ": truncated header");
  }
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));

  Archive archive;
  std::uint64_t blob_floats = 0;
  try {
    const auto header = nlohmann::json::parse(text);
    archive.meta = header.at("meta");
    blob_floats = header.at("blob_floats").get<std::uint64_t>();
    const std::uint64_t blob_bytes = file_size - 16 - header_len;
    if (blob_bytes != blob_floats * sizeof(float)) {
      throw Error(ErrorKind::kFormatError,
                  path.string() + ": blob holds " + std::to_string(blob_bytes) +
                      " bytes, header expects " + std::to_string(blob_floats * sizeof(float)));
    }
    std::uint64_t expected_offset = 0;
    for (const auto& t : header.at("tensors")) {
      NamedArray a;
      a.name = t.at("name").get<std::string>();
      a.shape = t.at("shape").get<std::vector<int>>();
      const auto offset = t.at("offset").get<std::uint64_t>();
      const auto count = t.at("count").get<std::uint64_t>();
      std::uint64_t expected = 1;
      for (int d : a.shape) expected *= static_cast<std::uint64_t>(d);
      if (offset != expected_offset || count != expected || offset + count > blob_floats) {
        throw Error(ErrorKind::kFormatError, path.string() + ": bad directory entry " + a.name);
      }
      a.values.resize(count);
      in.read(reinterpret_cast<char*>(a.values.data()),
              static_cast<std::streamsize>(count * sizeof(float)));
      expected_offset += count;
      archive.arrays.push_back(std::move(a));
    }
    if (expected_offset != blob_floats) {
      throw Error(ErrorKind::kFormatError, path.string() + ": directory does not cover blob");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kFormatError, path.string() + ": " + e.what());
  }
  if (!in) throw Error(ErrorKind::kFormatError, path.string() + ": truncated blob");
  return archive;
}

}  // namespace lintomo
