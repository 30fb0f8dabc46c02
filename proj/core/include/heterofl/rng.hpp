#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace heterofl {

/// Counter-based deterministic generator with cheap keyed streams.
///
/// Every consumer derives its own stream from (seed, purpose label, round,
/// client id), so the sequence a component sees never depends on execution
/// order or thread count. Same key -> identical draws across runs.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(mix(seed ^ kInitSalt)) {}

  /// Independent stream keyed by (seed, purpose, a, b, c) — typically
  /// (round, client id, epoch).
  static Rng stream(std::uint64_t seed, std::string_view purpose,
                    std::uint64_t a = 0, std::uint64_t b = 0, std::uint64_t c = 0);

  std::uint64_t next_u64();

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform();

  /// Uniform integer in [0, n); n must be positive. Unbiased (rejection).
  std::uint64_t uniform_int(std::uint64_t n);

  /// Standard normal via Box-Muller (second draw cached).
  double normal();

  /// Fisher-Yates in-place shuffle.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// k distinct values from [0, n), returned in ascending order.
  std::vector<std::uint32_t> sample_without_replacement(std::uint32_t n, std::uint32_t k);

 private:
  static constexpr std::uint64_t kInitSalt = 0x9e3779b97f4a7c15ull;
  static std::uint64_t mix(std::uint64_t z);

  std::uint64_t state_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace heterofl
