#include "lintomo/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "lintomo/error.hpp"
#include "lintomo/numeric.hpp"

namespace lintomo {

double Grid::cell_diagonal() const {
  return std::hypot(cell_width(), cell_height());
}

Grid build_grid(double r_min, double r_max, double z_min, double z_max,
                int numr, int numz) {
  if (!(r_max > r_min) || !(z_max > z_min) || !std::isfinite(r_min) ||
      !std::isfinite(r_max) || !std::isfinite(z_min) || !std::isfinite(z_max)) {
    throw Error(ErrorKind::kInvalidBounds, "grid bounds must satisfy r_max > r_min and z_max > z_min");
  }
  if (numr <= 0 || numz <= 0) {
    throw Error(ErrorKind::kInvalidCount, "grid cell counts must be positive");
  }
  Grid g;
  g.r_min_ = r_min;
  g.r_max_ = r_max;
  g.z_min_ = z_min;
  g.z_max_ = z_max;
  g.numr_ = numr;
  g.numz_ = numz;
  return g;
}

namespace {

void validate_chord(const Chord& chord) {
  if (chord.start == chord.end) {
    throw Error(ErrorKind::kInvalidChord, "chord start and end coincide");
  }
  if (!(chord.beam_width >= 0.0) || !std::isfinite(chord.beam_width)) {
    throw Error(ErrorKind::kInvalidChord, "beam width must be finite and non-negative");
  }
}

int cell_of(double local, double step, int count) {
  const int i = static_cast<int>(std::floor(local / step));
  return std::clamp(i, 0, count - 1);
}

// Parametric cell-crossing traversal of the segment a->b, both given in
// grid-local coordinates (origin at (r_min, z_min)). Adds scale * length of
// each in-cell piece into `plane`. A piece lying exactly on an internal cell
// boundary is credited to the cell with the larger index.
void trace_segment(const Grid& grid, double ar, double az, double br, double bz,
                   double scale, std::vector<double>& plane) {
  const double width = grid.r_max() - grid.r_min();
  const double height = grid.z_max() - grid.z_min();
  const double cw = grid.cell_width();
  const double ch = grid.cell_height();
  const double dr = br - ar;
  const double dz = bz - az;
  const double length = std::hypot(dr, dz);

  double t0 = 0.0;
  double t1 = 1.0;
  auto clip = [&](double origin, double delta, double extent) {
    if (delta == 0.0) return origin >= 0.0 && origin <= extent;
    double ta = -origin / delta;
    double tb = (extent - origin) / delta;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    return true;
  };
  if (!clip(ar, dr, width) || !clip(az, dz, height) || !(t1 > t0)) return;

  std::vector<double> alphas;
  alphas.reserve(static_cast<std::size_t>(grid.numr() + grid.numz()) + 2);
  alphas.push_back(t0);
  alphas.push_back(t1);
  auto crossings = [&](double origin, double delta, double step, int count) {
    if (delta == 0.0) return;
    for (int i = 1; i < count; ++i) {
      const double t = (i * step - origin) / delta;
      if (t > t0 && t < t1) alphas.push_back(t);
    }
  };
  crossings(ar, dr, cw, grid.numr());
  crossings(az, dz, ch, grid.numz());
  std::sort(alphas.begin(), alphas.end());

  for (std::size_t k = 0; k + 1 < alphas.size(); ++k) {
    const double dt = alphas[k + 1] - alphas[k];
    if (dt <= 0.0) continue;
    const double mid = 0.5 * (alphas[k] + alphas[k + 1]);
    const int ir = cell_of(ar + mid * dr, cw, grid.numr());
    const int iz = cell_of(az + mid * dz, ch, grid.numz());
    plane[grid.index(iz, ir)] += scale * dt * length;
  }
}

}  // namespace

std::vector<double> trace_chord(const Grid& grid, const Chord& chord, int subrays) {
  validate_chord(chord);
  std::vector<double> plane(grid.cell_count(), 0.0);
  const double ar = chord.start.r - grid.r_min();
  const double az = chord.start.z - grid.z_min();
  const double br = chord.end.r - grid.r_min();
  const double bz = chord.end.z - grid.z_min();

  if (chord.beam_width == 0.0 || subrays <= 1) {
    trace_segment(grid, ar, az, br, bz, 1.0, plane);
    return plane;
  }
  const double dr = br - ar;
  const double dz = bz - az;
  const double length = std::hypot(dr, dz);
  const double nr = -dz / length;
  const double nz = dr / length;
  const double scale = 1.0 / subrays;
  for (int k = 0; k < subrays; ++k) {
    const double offset = chord.beam_width * ((k + 0.5) / subrays - 0.5);
    trace_segment(grid, ar + offset * nr, az + offset * nz, br + offset * nr,
                  bz + offset * nz, scale, plane);
  }
  return plane;
}

ContributionMatrix::ContributionMatrix(int n, int numz, int numr)
    : n_(n), numz_(numz), numr_(numr),
      weights_(static_cast<std::size_t>(n) * numz * numr, 0.0) {
  if (n <= 0 || numz <= 0 || numr <= 0) {
    throw Error(ErrorKind::kInvalidCount, "contribution matrix dims must be positive");
  }
}

ContributionMatrix::ContributionMatrix(int n, int numz, int numr,
                                       std::vector<double> weights)
    : ContributionMatrix(n, numz, numr) {
  if (weights.size() != weights_.size()) {
    throw Error(ErrorKind::kShapeMismatch, "weight array does not match (n, numz, numr)");
  }
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw Error(ErrorKind::kFormatError, "contribution weights must be finite and non-negative");
    }
  }
  weights_ = std::move(weights);
}

double ContributionMatrix::row_sum(int i) const {
  auto r = row(i);
  return pairwise_sum(r);
}

std::vector<int> ContributionMatrix::zero_rows() const {
  std::vector<int> out;
  for (int i = 0; i < n_; ++i) {
    auto r = row(i);
    if (std::all_of(r.begin(), r.end(), [](double w) { return w == 0.0; })) {
      out.push_back(i);
    }
  }
  return out;
}

ContributionBuild build_cmatrix(const Grid& grid, std::span<const Chord> chords,
                                int subrays, int threads) {
  if (chords.empty()) {
    throw Error(ErrorKind::kEmptyChordSet, "at least one chord is required");
  }
  if (subrays < 1) {
    throw Error(ErrorKind::kInvalidCount, "subrays must be >= 1");
  }
  for (const auto& c : chords) validate_chord(c);

  ContributionBuild out;
  out.cmatrix = ContributionMatrix(static_cast<int>(chords.size()), grid.numz(), grid.numr());
  parallel_for(chords.size(), threads, [&](std::size_t i) {
    auto plane = trace_chord(grid, chords[i], subrays);
    std::copy(plane.begin(), plane.end(), out.cmatrix.row(static_cast<int>(i)).begin());
  });
  out.zero_rows = out.cmatrix.zero_rows();
  return out;
}

std::vector<double> forward_project(const ContributionMatrix& cmatrix,
                                    std::span<const double> field) {
  if (field.size() != cmatrix.plane_size()) {
    throw Error(ErrorKind::kShapeMismatch, "field length does not match numz*numr");
  }
  std::vector<double> x(cmatrix.n(), 0.0);
  for (int i = 0; i < cmatrix.n(); ++i) {
    auto row = cmatrix.row(i);
    double acc = 0.0;
    for (std::size_t k = 0; k < row.size(); ++k) acc += row[k] * field[k];
    x[i] = acc;
  }
  return x;
}

std::vector<Chord> make_fan(Point pinhole, double angle_lo, double angle_hi,
                            int count, double length, double beam_width) {
  if (count <= 0) throw Error(ErrorKind::kInvalidCount, "fan needs at least one chord");
  std::vector<Chord> chords;
  chords.reserve(count);
  for (int k = 0; k < count; ++k) {
    const double a = count == 1
                         ? 0.5 * (angle_lo + angle_hi)
                         : angle_lo + (angle_hi - angle_lo) * k / (count - 1);
    chords.push_back({pinhole,
                      {pinhole.r + length * std::cos(a), pinhole.z + length * std::sin(a)},
                      beam_width});
  }
  return chords;
}

namespace {

std::vector<Chord> fan_over_grid(const Grid& grid, Point pinhole, int count,
                                 double beam_width) {
  const double cr = 0.5 * (grid.r_min() + grid.r_max());
  const double cz = 0.5 * (grid.z_min() + grid.z_max());
  const double center = std::atan2(cz - pinhole.z, cr - pinhole.r);
  double lo = 0.0;
  double hi = 0.0;
  for (double r : {grid.r_min(), grid.r_max()}) {
    for (double z : {grid.z_min(), grid.z_max()}) {
      double d = std::atan2(z - pinhole.z, r - pinhole.r) - center;
      d = std::remainder(d, 2.0 * std::numbers::pi);
      lo = std::min(lo, d);
      hi = std::max(hi, d);
    }
  }
  // Keep the outermost chords strictly inside the domain.
  constexpr double kShrink = 0.96;
  const double span_r = grid.r_max() - grid.r_min();
  const double span_z = grid.z_max() - grid.z_min();
  const double length = 3.0 * std::hypot(span_r, span_z) +
                        std::hypot(pinhole.r - cr, pinhole.z - cz);
  return make_fan(pinhole, center + kShrink * lo, center + kShrink * hi, count,
                  length, beam_width);
}

}  // namespace

std::vector<Chord> two_camera_layout(const Grid& grid, int n, double beam_width) {
  if (n <= 0) throw Error(ErrorKind::kInvalidCount, "chord count must be positive");
  const double span_r = grid.r_max() - grid.r_min();
  const double span_z = grid.z_max() - grid.z_min();
  const int lateral = (n + 1) / 2;
  const int vertical = n - lateral;

  auto chords = fan_over_grid(
      grid, {grid.r_max() + 0.35 * span_r, grid.z_min() + 0.45 * span_z}, lateral,
      beam_width);
  if (vertical > 0) {
    auto top = fan_over_grid(
        grid, {grid.r_min() + 0.55 * span_r, grid.z_max() + 0.35 * span_z}, vertical,
        beam_width);
    chords.insert(chords.end(), top.begin(), top.end());
  }
  return chords;
}

std::vector<Chord> load_chords(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIoError, "cannot open chord file " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kFormatError, path.string() + ": " + e.what());
  }
  if (!doc.is_array()) {
    throw Error(ErrorKind::kFormatError, path.string() + ": expected a JSON array of chords");
  }
  std::vector<Chord> chords;
  try {
    for (const auto& item : doc) {
      Chord c;
      c.start = {item.at("start").at(0).get<double>(), item.at("start").at(1).get<double>()};
      c.end = {item.at("end").at(0).get<double>(), item.at("end").at(1).get<double>()};
      c.beam_width = item.value("beam_width", 0.0);
      validate_chord(c);
      chords.push_back(c);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kFormatError, path.string() + ": " + e.what());
  }
  return chords;
}

void save_chords(const std::filesystem::path& path, std::span<const Chord> chords) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& c : chords) {
    doc.push_back({{"start", {c.start.r, c.start.z}},
                   {"end", {c.end.r, c.end.z}},
                   {"beam_width", c.beam_width}});
  }
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIoError, "cannot write chord file " + path.string());
  out << doc.dump(2) << '\n';
}

}  // namespace lintomo
