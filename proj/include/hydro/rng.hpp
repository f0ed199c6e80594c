#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace hydro {

/// All randomness in the pipeline flows from std::mt19937_64, whose output sequence is fixed
/// by the standard. Distribution mappings are implemented here rather than through
/// <random> distributions, which are implementation-defined.
using Rng = std::mt19937_64;

/// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Stable seed derivation: folds each component into the state with mix64.
/// derive_seed(s, {a, b}) == mix64(mix64(mix64(s) ^ a) ^ b).
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> parts) noexcept;

/// Uniform double in [0, 1): top 53 bits of one draw.
double uniform01(Rng& rng);

/// Uniform double in [lo, hi].
double uniform(Rng& rng, double lo, double hi);

/// Uniform index in [0, n) by 128-bit multiply-high of one draw (n > 0).
std::uint64_t bounded_index(Rng& rng, std::uint64_t n);

/// In-place Fisher-Yates using bounded_index; i runs from the back.
template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(bounded_index(rng, i));
    std::swap(v[i - 1], v[j]);
  }
}

/// 64-bit FNV-1a over raw bytes.
std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t h = 0xcbf29ce484222325ULL) noexcept;

/// 16-digit lowercase hex.
std::string hex64(std::uint64_t v);

}  // namespace hydro
