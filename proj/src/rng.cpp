#include "euat/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace euat {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
constexpr std::uint64_t kFnvBasis = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;
}  // namespace

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t CounterRng::at(std::uint64_t key, std::uint64_t index) {
  return mix64(key + index * kGolden);
}

double CounterRng::uniform_at(std::uint64_t key, std::uint64_t index) {
  return static_cast<double>(at(key, index) >> 11) * 0x1.0p-53;
}

std::uint64_t CounterRng::next_u64() { return at(key_, ++counter_); }

double CounterRng::next_uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t CounterRng::next_below(std::uint64_t bound) {
  if (bound == 0) throw std::invalid_argument("next_below: bound must be positive");
  // Reject the top partial block so every residue is equally likely.
  const std::uint64_t limit = -bound % bound;
  for (;;) {
    const std::uint64_t r = next_u64();
    if (r >= limit) return r % bound;
  }
}

double CounterRng::next_normal() {
  // 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - next_uniform();
  const double u2 = next_uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t basis) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t h = basis;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= bytes[i];
    h *= kFnvPrime;
  }
  return h;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  return fnv1a64(bytes.data(), bytes.size(), kFnvBasis);
}

std::uint64_t derive_seed(std::uint64_t parent, std::string_view name) {
  return mix64(parent ^ fnv1a64(name));
}

std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) {
  return mix64(parent + mix64(index + 1));
}

}  // namespace euat
