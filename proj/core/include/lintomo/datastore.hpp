#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lintomo/geometry.hpp"

namespace lintomo {

struct PhantomSample;

inline constexpr int kFormatVersion = 1;

// manifest.json of a dataset directory. Optional records are JSON null when
// absent; `grid` is an extension carried for phantom sets.
struct Manifest {
  int format_version = kFormatVersion;
  std::size_t m = 0;
  int n = 0;
  int numz = 0;
  int numr = 0;
  std::string source;
  std::optional<std::uint64_t> base_seed;
  nlohmann::json noise;
  nlohmann::json rule;
  nlohmann::json grid;
  std::string parent_hash;
  nlohmann::json split;

  bool operator==(const Manifest&) const = default;
};

nlohmann::json manifest_to_json(const Manifest& manifest);
Manifest manifest_from_json(const nlohmann::json& j);

// Paired measurements and fields. inputs is (m, n), labels is (m, numz, numr),
// both row-major f32. Immutable once constructed.
class Dataset {
 public:
  Dataset() = default;
  Dataset(Manifest manifest, std::vector<float> inputs, std::vector<float> labels);

  std::size_t m() const { return manifest_.m; }
  int n() const { return manifest_.n; }
  int numz() const { return manifest_.numz; }
  int numr() const { return manifest_.numr; }
  std::size_t label_size() const {
    return static_cast<std::size_t>(manifest_.numz) * manifest_.numr;
  }

  std::span<const float> inputs() const { return inputs_; }
  std::span<const float> labels() const { return labels_; }
  std::span<const float> input(std::size_t j) const {
    return inputs().subspan(j * n(), n());
  }
  std::span<const float> label(std::size_t j) const {
    return labels().subspan(j * label_size(), label_size());
  }
  const Manifest& manifest() const { return manifest_; }

  // FNV-1a over dims and both blobs.
  std::string content_hash() const;

  // New dataset holding the given rows in the given order.
  Dataset subset(std::span<const std::size_t> indices, Manifest manifest) const;

  bool operator==(const Dataset&) const = default;

 private:
  Manifest manifest_;
  std::vector<float> inputs_;
  std::vector<float> labels_;
};

struct QualityReport {
  std::vector<double> per_sample_eps;
  double eps_bar = 0.0;
  std::size_t worst_index = 0;
};

// (1/n) * sum_i |x_i - C^i.y| / max_i |x_i|. Throws DegenerateSample when
// max|x| == 0.
double epsilon_j(std::span<const double> x, std::span<const double> y,
                 const ContributionMatrix& cmatrix);

// f32 storage is upcast to f64 before any arithmetic.
QualityReport assess_quality(const Dataset& dataset, const ContributionMatrix& cmatrix,
                             int threads = 0);
QualityReport assess_quality(std::span<const PhantomSample> samples,
                             const ContributionMatrix& cmatrix);

struct SplitResult {
  Dataset train;
  Dataset valid;
  Dataset test;
};

// Deterministic shuffled partition. Sizes are round(m*r0), round(m*r1) and the
// remainder. Throws InvalidRatios.
SplitResult split(const Dataset& dataset, std::array<double, 3> ratios,
                  std::uint64_t seed);

// Directory format: manifest.json + inputs.f32 + labels.f32 (little-endian).
// Writers take a .lock file in the directory for the duration of the write.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

// Directory format: cmatrix.json + cmatrix.f32 with shape (n, numz, numr).
void write_cmatrix(const ContributionMatrix& cmatrix, const std::filesystem::path& dir,
                   const nlohmann::json& extra = nlohmann::json::object());
struct CMatrixFile {
  ContributionMatrix cmatrix;
  nlohmann::json meta;
};
CMatrixFile read_cmatrix(const std::filesystem::path& dir);

// Raw little-endian f32 blob helpers.
void write_f32(const std::filesystem::path& path, std::span<const float> values);
std::vector<float> read_f32(const std::filesystem::path& path, std::size_t expected_count);

}  // namespace lintomo
