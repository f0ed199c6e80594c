#include "hydro/rng.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <set>

using namespace hydro;

TEST(Rng, Mt19937_64ReferenceValue) {
  // The standard fixes the 10000th output of a default-seeded engine.
  Rng rng;
  rng.discard(9999);
  EXPECT_EQ(rng(), 9981545732273789042ULL);
}

TEST(Rng, DeriveSeedChainsMix64) {
  const std::uint64_t s = 42;
  EXPECT_EQ(derive_seed(s, {}), mix64(s));
  EXPECT_EQ(derive_seed(s, {3, 9}), mix64(mix64(mix64(s) ^ 3) ^ 9));
  EXPECT_NE(derive_seed(s, {1, 2}), derive_seed(s, {2, 1}));
}

TEST(Rng, Uniform01Range) {
  Rng rng(1);
  for (int i = 0; i < 10000; ++i) {
    const double u = uniform01(rng);
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(Rng, BoundedIndexMatchesMultiplyHigh) {
  Rng a(5), b(5);
  for (std::uint64_t n : {1ULL, 2ULL, 7ULL, 1000ULL, 1ULL << 40}) {
    for (int i = 0; i < 100; ++i) {
      const unsigned __int128 prod = static_cast<unsigned __int128>(b()) * n;
      ASSERT_EQ(bounded_index(a, n), static_cast<std::uint64_t>(prod >> 64));
    }
  }
}

TEST(Rng, ShuffleIsPermutationAndDeterministic) {
  std::vector<int> v(50), w;
  std::iota(v.begin(), v.end(), 0);
  w = v;
  Rng r1(9), r2(9);
  shuffle(v, r1);
  shuffle(w, r2);
  EXPECT_EQ(v, w);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
}

TEST(Rng, Fnv1aKnownVectors) {
  const std::string a = "a";
  EXPECT_EQ(fnv1a64({}), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64({reinterpret_cast<const unsigned char*>(a.data()), a.size()}), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}
