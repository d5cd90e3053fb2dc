#include "lintomo/datastore.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fcntl.h>
#include <fstream>
#include <numeric>
#include <random>
#include <unistd.h>

#include "lintomo/error.hpp"
#include "lintomo/numeric.hpp"
#include "lintomo/phantom.hpp"

namespace lintomo {

static_assert(std::endian::native == std::endian::little,
              "blob formats are little-endian and no byte swapping is implemented");

namespace fs = std::filesystem;
using nlohmann::json;

json manifest_to_json(const Manifest& manifest) {
  json j;
  j["format_version"] = manifest.format_version;
  j["m"] = manifest.m;
  j["n"] = manifest.n;
  j["numz"] = manifest.numz;
  j["numr"] = manifest.numr;
  j["source"] = manifest.source;
  j["base_seed"] = manifest.base_seed ? json(*manifest.base_seed) : json(nullptr);
  j["noise"] = manifest.noise;
  j["rule"] = manifest.rule;
  j["grid"] = manifest.grid;
  j["parent_hash"] = manifest.parent_hash;
  j["split"] = manifest.split;
  return j;
}

Manifest manifest_from_json(const json& j) {
  Manifest m;
  try {
    m.format_version = j.at("format_version").get<int>();
    m.m = j.at("m").get<std::size_t>();
    m.n = j.at("n").get<int>();
    m.numz = j.at("numz").get<int>();
    m.numr = j.at("numr").get<int>();
    m.source = j.value("source", std::string());
    if (j.contains("base_seed") && !j.at("base_seed").is_null()) {
      m.base_seed = j.at("base_seed").get<std::uint64_t>();
    }
    m.noise = j.value("noise", json());
    m.rule = j.value("rule", json());
    m.grid = j.value("grid", json());
    m.parent_hash = j.value("parent_hash", std::string());
    m.split = j.value("split", json());
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kFormatError, std::string("manifest: ") + e.what());
  }
  if (m.format_version != kFormatVersion) {
    throw Error(ErrorKind::kFormatError,
                "unsupported manifest format_version " + std::to_string(m.format_version));
  }
  return m;
}

Dataset::Dataset(Manifest manifest, std::vector<float> inputs, std::vector<float> labels)
    : manifest_(std::move(manifest)), inputs_(std::move(inputs)), labels_(std::move(labels)) {
  if (manifest_.m < 1 || manifest_.n < 1 || manifest_.numz < 1 || manifest_.numr < 1) {
    throw Error(ErrorKind::kShapeMismatch, "dataset dims must be positive");
  }
  if (inputs_.size() != manifest_.m * static_cast<std::size_t>(manifest_.n)) {
    throw Error(ErrorKind::kShapeMismatch, "inputs size does not match (m, n)");
  }
  if (labels_.size() != manifest_.m * label_size()) {
    throw Error(ErrorKind::kShapeMismatch, "labels size does not match (m, numz, numr)");
  }
}

std::string Dataset::content_hash() const {
  Fnv1a h;
  const std::uint64_t dims[4] = {manifest_.m, static_cast<std::uint64_t>(manifest_.n),
                                 static_cast<std::uint64_t>(manifest_.numz),
                                 static_cast<std::uint64_t>(manifest_.numr)};
  h.update(dims, sizeof(dims));
  h.update(inputs_.data(), inputs_.size() * sizeof(float));
  h.update(labels_.data(), labels_.size() * sizeof(float));
  return h.hex();
}

Dataset Dataset::subset(std::span<const std::size_t> indices, Manifest manifest) const {
  std::vector<float> in;
  std::vector<float> lab;
  in.reserve(indices.size() * n());
  lab.reserve(indices.size() * label_size());
  for (std::size_t idx : indices) {
    if (idx >= m()) throw Error(ErrorKind::kShapeMismatch, "subset index out of range");
    auto x = input(idx);
    auto y = label(idx);
    in.insert(in.end(), x.begin(), x.end());
    lab.insert(lab.end(), y.begin(), y.end());
  }
  manifest.m = indices.size();
  manifest.n = n();
  manifest.numz = numz();
  manifest.numr = numr();
  return Dataset(std::move(manifest), std::move(in), std::move(lab));
}

double epsilon_j(std::span<const double> x, std::span<const double> y,
                 const ContributionMatrix& cmatrix) {
  if (x.size() != static_cast<std::size_t>(cmatrix.n()) || y.size() != cmatrix.plane_size()) {
    throw Error(ErrorKind::kShapeMismatch, "sample does not match the contribution matrix");
  }
  double x_max = 0.0;
  for (double v : x) x_max = std::max(x_max, std::abs(v));
  if (x_max == 0.0) throw Error(ErrorKind::kDegenerateSample, "max|x| is zero");
  const auto bp = forward_project(cmatrix, y);
  std::vector<double> terms(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) terms[i] = std::abs(x[i] - bp[i]) / x_max;
  return pairwise_sum(terms) / static_cast<double>(x.size());
}

namespace {

QualityReport summarize(std::vector<double> eps) {
  QualityReport report;
  report.eps_bar = pairwise_sum(eps) / static_cast<double>(eps.size());
  report.worst_index = static_cast<std::size_t>(
      std::max_element(eps.begin(), eps.end()) - eps.begin());
  report.per_sample_eps = std::move(eps);
  return report;
}

}  // namespace

QualityReport assess_quality(const Dataset& dataset, const ContributionMatrix& cmatrix,
                             int threads) {
  if (dataset.n() != cmatrix.n() || dataset.numz() != cmatrix.numz() ||
      dataset.numr() != cmatrix.numr()) {
    throw Error(ErrorKind::kShapeMismatch, "dataset dims do not match the contribution matrix");
  }
  std::vector<double> eps(dataset.m());
  parallel_for(dataset.m(), threads, [&](std::size_t j) {
    auto xf = dataset.input(j);
    auto yf = dataset.label(j);
    std::vector<double> x(xf.begin(), xf.end());
    std::vector<double> y(yf.begin(), yf.end());
    try {
      eps[j] = epsilon_j(x, y, cmatrix);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kDegenerateSample) throw;
      throw Error(ErrorKind::kDegenerateSample, "sample " + std::to_string(j) + " has max|x| == 0");
    }
  });
  return summarize(std::move(eps));
}

QualityReport assess_quality(std::span<const PhantomSample> samples,
                             const ContributionMatrix& cmatrix) {
  if (samples.empty()) throw Error(ErrorKind::kInvalidCount, "no samples");
  std::vector<double> eps(samples.size());
  for (std::size_t j = 0; j < samples.size(); ++j) {
    try {
      eps[j] = epsilon_j(samples[j].measurements, samples[j].field, cmatrix);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kDegenerateSample) throw;
      throw Error(ErrorKind::kDegenerateSample, "sample " + std::to_string(j) + " has max|x| == 0");
    }
  }
  return summarize(std::move(eps));
}

SplitResult split(const Dataset& dataset, std::array<double, 3> ratios, std::uint64_t seed) {
  for (double r : ratios) {
    if (!(r > 0.0) || !std::isfinite(r)) {
      throw Error(ErrorKind::kInvalidRatios, "split ratios must be positive");
    }
  }
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) {
    throw Error(ErrorKind::kInvalidRatios, "split ratios must sum to 1");
  }
  const std::size_t m = dataset.m();
  const auto n_train = static_cast<std::size_t>(std::llround(m * ratios[0]));
  const auto n_valid = static_cast<std::size_t>(std::llround(m * ratios[1]));
  if (n_train + n_valid >= m || n_train == 0 || n_valid == 0) {
    throw Error(ErrorKind::kInvalidRatios,
                "ratios leave an empty partition for m = " + std::to_string(m));
  }

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 engine(seed);
  std::shuffle(order.begin(), order.end(), engine);

  const std::string parent = dataset.content_hash();
  auto part = [&](const char* name, std::size_t begin, std::size_t end) {
    std::vector<std::size_t> idx(order.begin() + begin, order.begin() + end);
    Manifest man = dataset.manifest();
    man.parent_hash = parent;
    man.split = {{"part", name},
                 {"ratios", {ratios[0], ratios[1], ratios[2]}},
                 {"seed", seed},
                 {"indices", idx}};
    return dataset.subset(idx, std::move(man));
  };
  return {part("train", 0, n_train), part("valid", n_train, n_train + n_valid),
          part("test", n_train + n_valid, m)};
}

namespace {

// Exclusive writer lock: a .lock file created with O_EXCL.
class DirectoryLock {
 public:
  explicit DirectoryLock(const fs::path& dir) : path_(dir / ".lock") {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::kIoError, "cannot create " + dir.string() + ": " + ec.message());
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) {
      throw Error(ErrorKind::kIoError, dir.string() + " is locked by another writer");
    }
  }
  ~DirectoryLock() {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIoError, "cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorKind::kIoError, "write failed for " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIoError, "cannot open " + path.string());
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kFormatError, path.string() + ": " + e.what());
  }
}

}  // namespace

void write_f32(const fs::path& path, std::span<const float> values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size_bytes()));
  if (!out) throw Error(ErrorKind::kIoError, "write failed for " + path.string());
}

std::vector<float> read_f32(const fs::path& path, std::size_t expected_count) {
  std::error_code ec;
  const auto size = fs::file_size(path, ec);
  if (ec) throw Error(ErrorKind::kIoError, "cannot stat " + path.string());
  if (size != expected_count * sizeof(float)) {
    throw Error(ErrorKind::kFormatError,
                path.string() + ": expected " + std::to_string(expected_count * sizeof(float)) +
                    " bytes, found " + std::to_string(size));
  }
  std::vector<float> values(expected_count);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIoError, "cannot open " + path.string());
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(size));
  if (!in) throw Error(ErrorKind::kFormatError, path.string() + ": truncated read");
  return values;
}

void write_dataset(const Dataset& dataset, const fs::path& dir) {
  DirectoryLock lock(dir);
  write_f32(dir / "inputs.f32", dataset.inputs());
  write_f32(dir / "labels.f32", dataset.labels());
  write_json(dir / "manifest.json", manifest_to_json(dataset.manifest()));
}

Dataset read_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorKind::kIoError, "no dataset directory " + dir.string());
  Manifest manifest = manifest_from_json(read_json(dir / "manifest.json"));
  if (manifest.m < 1 || manifest.n < 1 || manifest.numz < 1 || manifest.numr < 1) {
    throw Error(ErrorKind::kFormatError, dir.string() + ": manifest dims must be positive");
  }
  auto inputs = read_f32(dir / "inputs.f32", manifest.m * static_cast<std::size_t>(manifest.n));
  auto labels = read_f32(dir / "labels.f32",
                         manifest.m * static_cast<std::size_t>(manifest.numz) * manifest.numr);
  return Dataset(std::move(manifest), std::move(inputs), std::move(labels));
}

void write_cmatrix(const ContributionMatrix& cmatrix, const fs::path& dir, const json& extra) {
  DirectoryLock lock(dir);
  std::vector<float> blob(cmatrix.weights().begin(), cmatrix.weights().end());
  write_f32(dir / "cmatrix.f32", blob);
  json meta = extra.is_object() ? extra : json::object();
  meta["format_version"] = kFormatVersion;
  meta["kind"] = "cmatrix";
  meta["n"] = cmatrix.n();
  meta["numz"] = cmatrix.numz();
  meta["numr"] = cmatrix.numr();
  write_json(dir / "cmatrix.json", meta);
}

CMatrixFile read_cmatrix(const fs::path& dir) {
  if (!fs::is_directory(dir)) {
    throw Error(ErrorKind::kIoError, "no contribution-matrix directory " + dir.string());
  }
  json meta = read_json(dir / "cmatrix.json");
  int n = 0, numz = 0, numr = 0;
  try {
    if (meta.at("format_version").get<int>() != kFormatVersion) {
      throw Error(ErrorKind::kFormatError, "unsupported cmatrix format_version");
    }
    n = meta.at("n").get<int>();
    numz = meta.at("numz").get<int>();
    numr = meta.at("numr").get<int>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kFormatError, std::string("cmatrix.json: ") + e.what());
  }
  if (n < 1 || numz < 1 || numr < 1) {
    throw Error(ErrorKind::kFormatError, "cmatrix.json: dims must be positive");
  }
  auto blob = read_f32(dir / "cmatrix.f32", static_cast<std::size_t>(n) * numz * numr);
  std::vector<double> weights(blob.begin(), blob.end());
  return {ContributionMatrix(n, numz, numr, std::move(weights)), std::move(meta)};
}

}  // namespace lintomo
