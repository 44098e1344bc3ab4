#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace lth {

// Deterministic random stream. Streams are derived from a (base_seed,
// stream_id) pair so concurrent consumers never share generator state;
// the same pair always yields the same sequence.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t base_seed, std::uint64_t stream_id = 0);

  std::uint64_t next_u64();

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform();
  double uniform(double lo, double hi);

  // Standard normal, polar Box-Muller.
  double normal();

  double gamma(double shape);
  double beta(double a, double b);

  bool bernoulli(double p);

  // Fisher-Yates permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::mt19937_64 engine_;
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

}  // namespace lth
