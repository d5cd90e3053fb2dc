#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>

namespace lintomo {

// Recursive pairwise summation with a fixed split, so the result depends only
// on the input order and never on threading.
double pairwise_sum(std::span<const double> values);

// 64-bit FNV-1a. Used for manifest lineage and spec hashes, not for security.
class Fnv1a {
 public:
  void update(const void* data, std::size_t size);
  void update(std::string_view text) { update(text.data(), text.size()); }
  std::uint64_t digest() const { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

// Runs fn(i) for i in [0, count) on up to `threads` workers. Each index is
// processed exactly once; results must be written to index-owned slots.
void parallel_for(std::size_t count, int threads,
                  const std::function<void(std::size_t)>& fn);

// Process-wide default used when callers pass threads <= 0.
void set_default_threads(int threads);
int default_threads();

}  // namespace lintomo
