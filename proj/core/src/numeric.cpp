#include "lintomo/numeric.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

#include "lintomo/error.hpp"

namespace lintomo {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidBounds: return "InvalidBounds";
    case ErrorKind::kInvalidCount: return "InvalidCount";
    case ErrorKind::kInvalidChord: return "InvalidChord";
    case ErrorKind::kEmptyChordSet: return "EmptyChordSet";
    case ErrorKind::kShapeMismatch: return "ShapeMismatch";
    case ErrorKind::kDegenerateSample: return "DegenerateSample";
    case ErrorKind::kInvalidRatios: return "InvalidRatios";
    case ErrorKind::kInvalidRule: return "InvalidRule";
    case ErrorKind::kInvalidConfig: return "InvalidConfig";
    case ErrorKind::kIoError: return "IoError";
    case ErrorKind::kFormatError: return "FormatError";
    case ErrorKind::kSpatialUnderflow: return "SpatialUnderflow";
    case ErrorKind::kInvalidSpec: return "InvalidSpec";
    case ErrorKind::kMissingPI: return "MissingPI";
    case ErrorKind::kUnexpectedPI: return "UnexpectedPI";
    case ErrorKind::kSpecMismatch: return "SpecMismatch";
    case ErrorKind::kNonFiniteLoss: return "NonFiniteLoss";
  }
  return "Unknown";
}

double pairwise_sum(std::span<const double> values) {
  constexpr std::size_t kLeaf = 8;
  if (values.size() <= kLeaf) {
    double acc = 0.0;
    for (double v : values) acc += v;
    return acc;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

void Fnv1a::update(const void* data, std::size_t size) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    state_ ^= bytes[i];
    state_ *= 0x100000001b3ULL;
  }
}

std::string Fnv1a::hex() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(state_));
  return buf;
}

namespace {
std::atomic<int> g_default_threads{1};
}

void set_default_threads(int threads) {
  g_default_threads = std::max(1, threads);
}

int default_threads() { return g_default_threads; }

void parallel_for(std::size_t count, int threads,
                  const std::function<void(std::size_t)>& fn) {
  if (threads <= 0) threads = default_threads();
  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(threads), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace lintomo
