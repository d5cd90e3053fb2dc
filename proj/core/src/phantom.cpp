#include "lintomo/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "lintomo/datastore.hpp"
#include "lintomo/error.hpp"
#include "lintomo/numeric.hpp"

namespace lintomo {

void PhantomRule::validate() const {
  auto ordered = [](double lo, double hi) { return std::isfinite(lo) && std::isfinite(hi) && lo <= hi; };
  if (!(amplitude_lo > 0.0) || !ordered(amplitude_lo, amplitude_hi)) {
    throw Error(ErrorKind::kInvalidRule, "amplitude range must be positive and ordered");
  }
  if (!(sigma_lo > 0.0) || !ordered(sigma_lo, sigma_hi)) {
    throw Error(ErrorKind::kInvalidRule, "sigma range must be positive and ordered");
  }
  if (!(ellipticity_lo >= 1.0) || !ordered(ellipticity_lo, ellipticity_hi)) {
    throw Error(ErrorKind::kInvalidRule, "ellipticity range must be >= 1 and ordered");
  }
  if (!(margin >= 0.0 && margin < 0.5)) {
    throw Error(ErrorKind::kInvalidRule, "margin must lie in [0, 0.5)");
  }
}

void NoiseSpec::validate() const {
  if (!(level >= 0.0) || !std::isfinite(level)) {
    throw Error(ErrorKind::kInvalidRule, "noise level must be finite and non-negative");
  }
}

namespace {

// Inclusive index range of cells whose centers keep `margin` of the span away
// from both edges. Falls back to all cells when the band is empty.
std::pair<int, int> interior_range(int count, double margin) {
  int lo = 0;
  int hi = count - 1;
  for (int i = 0; i < count; ++i) {
    const double frac = (i + 0.5) / count;
    if (frac >= margin) { lo = i; break; }
  }
  for (int i = count - 1; i >= 0; --i) {
    const double frac = (i + 0.5) / count;
    if (frac <= 1.0 - margin) { hi = i; break; }
  }
  if (lo > hi) return {0, count - 1};
  return {lo, hi};
}

}  // namespace

GaussianPeak draw_peak(const Grid& grid, const PhantomRule& rule, std::uint64_t seed) {
  rule.validate();
  std::mt19937_64 engine(seed);
  const auto [rz_lo, rz_hi] = interior_range(grid.numz(), rule.margin);
  const auto [rr_lo, rr_hi] = interior_range(grid.numr(), rule.margin);
  const double span = std::min(grid.r_max() - grid.r_min(), grid.z_max() - grid.z_min());

  GaussianPeak peak;
  peak.center_iz = std::uniform_int_distribution<int>(rz_lo, rz_hi)(engine);
  peak.center_ir = std::uniform_int_distribution<int>(rr_lo, rr_hi)(engine);
  peak.amplitude = std::uniform_real_distribution<double>(rule.amplitude_lo, rule.amplitude_hi)(engine);
  peak.sigma = span * std::uniform_real_distribution<double>(rule.sigma_lo, rule.sigma_hi)(engine);
  peak.ellipticity = std::uniform_real_distribution<double>(rule.ellipticity_lo, rule.ellipticity_hi)(engine);
  peak.rotation = std::uniform_real_distribution<double>(0.0, std::numbers::pi)(engine);
  return peak;
}

std::vector<double> render_peak(const Grid& grid, const GaussianPeak& peak) {
  std::vector<double> field(grid.cell_count());
  const double c = std::cos(peak.rotation);
  const double s = std::sin(peak.rotation);
  const double cr = grid.cell_center_r(peak.center_ir);
  const double cz = grid.cell_center_z(peak.center_iz);
  const double inv_two_var = 1.0 / (2.0 * peak.sigma * peak.sigma);
  for (int iz = 0; iz < grid.numz(); ++iz) {
    for (int ir = 0; ir < grid.numr(); ++ir) {
      const double dr = grid.cell_center_r(ir) - cr;
      const double dz = grid.cell_center_z(iz) - cz;
      const double major = c * dr + s * dz;
      const double minor = (-s * dr + c * dz) * peak.ellipticity;
      field[grid.index(iz, ir)] =
          peak.amplitude * std::exp(-(major * major + minor * minor) * inv_two_var);
    }
  }
  return field;
}

std::vector<double> sample_field(const Grid& grid, const PhantomRule& rule,
                                 std::uint64_t seed) {
  return render_peak(grid, draw_peak(grid, rule, seed));
}

PhantomSample generate_sample(const Grid& grid, const ContributionMatrix& cmatrix,
                              const PhantomRule& rule, const NoiseSpec& noise,
                              std::uint64_t seed) {
  if (cmatrix.numz() != grid.numz() || cmatrix.numr() != grid.numr()) {
    throw Error(ErrorKind::kShapeMismatch, "contribution matrix does not match the grid");
  }
  noise.validate();
  PhantomSample sample;
  sample.seed = seed;
  sample.field = sample_field(grid, rule, seed);
  sample.measurements = forward_project(cmatrix, sample.field);

  const double level = noise.effective_level();
  if (level > 0.0) {
    double x_max = 0.0;
    for (double v : sample.measurements) x_max = std::max(x_max, std::abs(v));
    // Separate stream so the field draw is identical with and without noise.
    std::mt19937_64 engine(seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> delta(0.0, level * x_max);
    for (double& v : sample.measurements) v += delta(engine);
  }
  return sample;
}

std::vector<PhantomSample> generate_samples(const Grid& grid,
                                            const ContributionMatrix& cmatrix,
                                            const PhantomRule& rule,
                                            const NoiseSpec& noise, std::size_t count,
                                            std::uint64_t base_seed, int threads) {
  if (count == 0) throw Error(ErrorKind::kInvalidCount, "sample count must be >= 1");
  rule.validate();
  noise.validate();
  if (cmatrix.numz() != grid.numz() || cmatrix.numr() != grid.numr()) {
    throw Error(ErrorKind::kShapeMismatch, "contribution matrix does not match the grid");
  }
  std::vector<PhantomSample> samples(count);
  parallel_for(count, threads, [&](std::size_t j) {
    samples[j] = generate_sample(grid, cmatrix, rule, noise, base_seed + j);
  });
  return samples;
}

Dataset to_dataset(std::span<const PhantomSample> samples, const Grid& grid,
                   const PhantomRule& rule, const NoiseSpec& noise,
                   std::uint64_t base_seed) {
  if (samples.empty()) throw Error(ErrorKind::kInvalidCount, "no samples");
  const std::size_t n = samples.front().measurements.size();
  Manifest manifest;
  manifest.m = samples.size();
  manifest.n = static_cast<int>(n);
  manifest.numz = grid.numz();
  manifest.numr = grid.numr();
  manifest.source = "phantom";
  manifest.base_seed = base_seed;
  manifest.noise = noise;
  manifest.rule = rule;
  manifest.grid = grid;

  std::vector<float> inputs;
  std::vector<float> labels;
  inputs.reserve(samples.size() * n);
  labels.reserve(samples.size() * grid.cell_count());
  for (const auto& s : samples) {
    if (s.measurements.size() != n || s.field.size() != grid.cell_count()) {
      throw Error(ErrorKind::kShapeMismatch, "inconsistent sample shapes");
    }
    for (double v : s.measurements) inputs.push_back(static_cast<float>(v));
    for (double v : s.field) labels.push_back(static_cast<float>(v));
  }
  return Dataset(std::move(manifest), std::move(inputs), std::move(labels));
}

Dataset generate_dataset(const Grid& grid, const ContributionMatrix& cmatrix,
                         const PhantomRule& rule, const NoiseSpec& noise,
                         std::size_t count, std::uint64_t base_seed, int threads) {
  auto samples = generate_samples(grid, cmatrix, rule, noise, count, base_seed, threads);
  return to_dataset(samples, grid, rule, noise, base_seed);
}

void to_json(nlohmann::json& j, const PhantomRule& rule) {
  j = {{"kind", "gaussian_peak"},
       {"amplitude_range", {rule.amplitude_lo, rule.amplitude_hi}},
       {"sigma_range", {rule.sigma_lo, rule.sigma_hi}},
       {"ellipticity_range", {rule.ellipticity_lo, rule.ellipticity_hi}},
       {"margin", rule.margin}};
}

void from_json(const nlohmann::json& j, PhantomRule& rule) {
  rule = PhantomRule{};
  const auto kind = j.value("kind", std::string("gaussian_peak"));
  if (kind != "gaussian_peak") {
    throw Error(ErrorKind::kInvalidRule, "unknown phantom rule kind '" + kind + "'");
  }
  auto range = [&](const char* key, double& lo, double& hi) {
    if (j.contains(key)) {
      lo = j.at(key).at(0).get<double>();
      hi = j.at(key).at(1).get<double>();
    }
  };
  range("amplitude_range", rule.amplitude_lo, rule.amplitude_hi);
  range("sigma_range", rule.sigma_lo, rule.sigma_hi);
  range("ellipticity_range", rule.ellipticity_lo, rule.ellipticity_hi);
  rule.margin = j.value("margin", rule.margin);
  rule.validate();
}

void to_json(nlohmann::json& j, const NoiseSpec& noise) {
  j = {{"kind", noise.kind == NoiseKind::kNone ? "none" : "gaussian_relative"},
       {"level", noise.level}};
}

void from_json(const nlohmann::json& j, NoiseSpec& noise) {
  noise = NoiseSpec{};
  const auto kind = j.value("kind", std::string("none"));
  if (kind == "none") {
    noise.kind = NoiseKind::kNone;
  } else if (kind == "gaussian_relative") {
    noise.kind = NoiseKind::kGaussianRelative;
  } else {
    throw Error(ErrorKind::kInvalidRule, "unknown noise kind '" + kind + "'");
  }
  noise.level = j.value("level", 0.0);
  noise.validate();
}

void to_json(nlohmann::json& j, const Grid& grid) {
  j = {{"r_min", grid.r_min()}, {"r_max", grid.r_max()},
       {"z_min", grid.z_min()}, {"z_max", grid.z_max()},
       {"numr", grid.numr()},   {"numz", grid.numz()}};
}

Grid grid_from_json(const nlohmann::json& j) {
  try {
    return build_grid(j.at("r_min").get<double>(), j.at("r_max").get<double>(),
                      j.at("z_min").get<double>(), j.at("z_max").get<double>(),
                      j.at("numr").get<int>(), j.at("numz").get<int>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kInvalidConfig, std::string("grid: ") + e.what());
  }
}

}  // namespace lintomo
