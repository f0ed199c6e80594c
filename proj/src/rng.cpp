#include "hydro/rng.hpp"

#include <cstdio>

namespace hydro {

std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> parts) noexcept {
  std::uint64_t h = mix64(base);
  for (auto p : parts) h = mix64(h ^ p);
  return h;
}

double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double uniform(Rng& rng, double lo, double hi) {
  // Mapping [0,1) to [lo, hi); hi is reachable only through rounding, both ends stay in range.
  const double u = uniform01(rng);
  const double v = lo + (hi - lo) * u;
  return v > hi ? hi : v;
}

std::uint64_t bounded_index(Rng& rng, std::uint64_t n) {
  const unsigned __int128 prod = static_cast<unsigned __int128>(rng()) * n;
  return static_cast<std::uint64_t>(prod >> 64);
}

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t h) noexcept {
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace hydro
