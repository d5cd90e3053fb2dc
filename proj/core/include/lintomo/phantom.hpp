#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "lintomo/geometry.hpp"

namespace lintomo {

class Dataset;

enum class ProfileKind { kGaussianPeak };

// Assignment rule for a single-peaked field. sigma_* are fractions of the
// shorter grid span; ellipticity is the major/minor axis ratio (>= 1).
struct PhantomRule {
  ProfileKind kind = ProfileKind::kGaussianPeak;
  double amplitude_lo = 0.5;
  double amplitude_hi = 1.5;
  double sigma_lo = 0.08;
  double sigma_hi = 0.25;
  double ellipticity_lo = 1.0;
  double ellipticity_hi = 2.0;
  // Peak centers keep at least this fraction of each span from the boundary.
  double margin = 0.1;

  void validate() const;
  bool operator==(const PhantomRule&) const = default;
};

enum class NoiseKind { kNone, kGaussianRelative };

// Additive measurement error: Delta_i ~ N(0, (level * x_max)^2) per sample.
struct NoiseSpec {
  NoiseKind kind = NoiseKind::kNone;
  double level = 0.0;

  void validate() const;
  double effective_level() const { return kind == NoiseKind::kNone ? 0.0 : level; }
  bool operator==(const NoiseSpec&) const = default;
};

// Parameters drawn for one sample; the field is a pure function of these.
struct GaussianPeak {
  int center_iz = 0;
  int center_ir = 0;
  double amplitude = 1.0;
  double sigma = 1.0;  // device units
  double ellipticity = 1.0;
  double rotation = 0.0;
};

struct PhantomSample {
  std::vector<double> field;         // y, numz*numr
  std::vector<double> measurements;  // x, n
  std::uint64_t seed = 0;
};

GaussianPeak draw_peak(const Grid& grid, const PhantomRule& rule, std::uint64_t seed);
std::vector<double> render_peak(const Grid& grid, const GaussianPeak& peak);

// Deterministic in (grid, rule, seed).
std::vector<double> sample_field(const Grid& grid, const PhantomRule& rule,
                                 std::uint64_t seed);

PhantomSample generate_sample(const Grid& grid, const ContributionMatrix& cmatrix,
                              const PhantomRule& rule, const NoiseSpec& noise,
                              std::uint64_t seed);

// Sample j uses seed base_seed + j; output order is by j regardless of threads.
std::vector<PhantomSample> generate_samples(const Grid& grid,
                                            const ContributionMatrix& cmatrix,
                                            const PhantomRule& rule,
                                            const NoiseSpec& noise, std::size_t count,
                                            std::uint64_t base_seed, int threads = 0);

Dataset generate_dataset(const Grid& grid, const ContributionMatrix& cmatrix,
                         const PhantomRule& rule, const NoiseSpec& noise,
                         std::size_t count, std::uint64_t base_seed, int threads = 0);

// Packs f64 samples into an f32 dataset with a phantom manifest.
Dataset to_dataset(std::span<const PhantomSample> samples, const Grid& grid,
                   const PhantomRule& rule, const NoiseSpec& noise,
                   std::uint64_t base_seed);

void to_json(nlohmann::json& j, const PhantomRule& rule);
void from_json(const nlohmann::json& j, PhantomRule& rule);
void to_json(nlohmann::json& j, const NoiseSpec& noise);
void from_json(const nlohmann::json& j, NoiseSpec& noise);
void to_json(nlohmann::json& j, const Grid& grid);
Grid grid_from_json(const nlohmann::json& j);

}  // namespace lintomo
