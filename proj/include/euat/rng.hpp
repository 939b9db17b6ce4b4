#pragma once

#include <cstdint>
#include <string_view>

namespace euat {

/// Counter-based SplitMix64 stream.
///
/// The i-th output (i = 1, 2, ...) of a stream with key k is
///   mix64(k + i * 0x9E3779B97F4A7C15)
/// where mix64 is the SplitMix64 finalizer. Every value is therefore a pure
/// function of (key, counter), which lets other implementations reproduce
/// dropout masks, shuffles and noise bit for bit.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key, std::uint64_t counter = 0)
      : key_(key), counter_(counter) {}

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double next_uniform();
  /// Uniform integer in [0, bound), bound > 0. Rejection sampling, no modulo bias.
  std::uint64_t next_below(std::uint64_t bound);
  /// Standard normal via Box-Muller; consumes two uniforms per call.
  double next_normal();

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  /// Random access: output number `index` (1-based) of stream `key`.
  static std::uint64_t at(std::uint64_t key, std::uint64_t index);
  static double uniform_at(std::uint64_t key, std::uint64_t index);

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

std::uint64_t mix64(std::uint64_t z);

/// Named substream: mix64(parent ^ fnv1a64(name)).
std::uint64_t derive_seed(std::uint64_t parent, std::string_view name);
/// Indexed substream: mix64(parent + mix64(index + 1)).
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index);

std::uint64_t fnv1a64(std::string_view bytes);
std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t basis);

}  // namespace euat
