#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace lintomo {

// Rectangular (z, r) discretization of a poloidal cross-section. Cells are
// stored row-major with z outer and r inner: flat index = iz * numr + ir.
class Grid {
 public:
  Grid() = default;

  double r_min() const { return r_min_; }
  double r_max() const { return r_max_; }
  double z_min() const { return z_min_; }
  double z_max() const { return z_max_; }
  int numr() const { return numr_; }
  int numz() const { return numz_; }

  double cell_width() const { return (r_max_ - r_min_) / numr_; }
  double cell_height() const { return (z_max_ - z_min_) / numz_; }
  double cell_diagonal() const;
  std::size_t cell_count() const {
    return static_cast<std::size_t>(numr_) * static_cast<std::size_t>(numz_);
  }
  std::size_t index(int iz, int ir) const {
    return static_cast<std::size_t>(iz) * numr_ + ir;
  }

  // Center of cell (iz, ir) in device coordinates.
  double cell_center_r(int ir) const { return r_min_ + (ir + 0.5) * cell_width(); }
  double cell_center_z(int iz) const { return z_min_ + (iz + 0.5) * cell_height(); }

  bool operator==(const Grid&) const = default;

 private:
  friend Grid build_grid(double, double, double, double, int, int);

  double r_min_ = 0.0, r_max_ = 1.0, z_min_ = 0.0, z_max_ = 1.0;
  int numr_ = 1, numz_ = 1;
};

// Throws InvalidBounds / InvalidCount.
Grid build_grid(double r_min, double r_max, double z_min, double z_max,
                int numr, int numz);

struct Point {
  double r = 0.0;
  double z = 0.0;
  bool operator==(const Point&) const = default;
};

struct Chord {
  Point start;
  Point end;
  double beam_width = 0.0;
  bool operator==(const Chord&) const = default;
};

inline constexpr int kDefaultSubrays = 5;

// Path-length weights of one chord over the grid cells, (numz, numr) row-major.
// A zero-width chord gets exact per-cell segment lengths of its centerline.
// A finite-width chord gets the mean over `subrays` parallel sub-rays spread
// uniformly across the beam. Cells the chord misses are exactly zero.
std::vector<double> trace_chord(const Grid& grid, const Chord& chord,
                                int subrays = kDefaultSubrays);

// Forward operator: weights has shape (n, numz, numr).
class ContributionMatrix {
 public:
  ContributionMatrix() = default;
  ContributionMatrix(int n, int numz, int numr);
  ContributionMatrix(int n, int numz, int numr, std::vector<double> weights);

  int n() const { return n_; }
  int numz() const { return numz_; }
  int numr() const { return numr_; }
  std::size_t plane_size() const {
    return static_cast<std::size_t>(numz_) * static_cast<std::size_t>(numr_);
  }

  std::span<const double> row(int i) const {
    return std::span<const double>(weights_).subspan(i * plane_size(), plane_size());
  }
  std::span<double> row(int i) {
    return std::span<double>(weights_).subspan(i * plane_size(), plane_size());
  }
  std::span<const double> weights() const { return weights_; }

  double row_sum(int i) const;
  std::vector<int> zero_rows() const;

  bool operator==(const ContributionMatrix&) const = default;

 private:
  int n_ = 0, numz_ = 0, numr_ = 0;
  std::vector<double> weights_;
};

struct ContributionBuild {
  ContributionMatrix cmatrix;
  // Chords that never enter the grid; their rows are all zero.
  std::vector<int> zero_rows;
};

// Stacks trace_chord planes in chord order. Throws EmptyChordSet. Tracing is
// spread over `threads` workers with per-chord deterministic results.
ContributionBuild build_cmatrix(const Grid& grid, std::span<const Chord> chords,
                                int subrays = kDefaultSubrays, int threads = 0);

// x_i = <C^i, y>. Purely linear; measurement noise is added elsewhere.
std::vector<double> forward_project(const ContributionMatrix& cmatrix,
                                    std::span<const double> field);

// Fan of `count` chords leaving `pinhole` at evenly spaced angles in
// [angle_lo, angle_hi] (radians, measured from +r toward +z).
std::vector<Chord> make_fan(Point pinhole, double angle_lo, double angle_hi,
                            int count, double length, double beam_width = 0.0);

// Two-camera layout used by the presets: a lateral camera on the outboard side
// and a vertical camera above the grid, each fanning across the whole domain.
std::vector<Chord> two_camera_layout(const Grid& grid, int n,
                                     double beam_width = 0.0);

// JSON chord files: [{"start":[r,z],"end":[r,z],"beam_width":w}, ...].
std::vector<Chord> load_chords(const std::filesystem::path& path);
void save_chords(const std::filesystem::path& path, std::span<const Chord> chords);

}  // namespace lintomo
