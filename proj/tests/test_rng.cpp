#include <gtest/gtest.h>

#include <set>

#include "remir/rng.hpp"

using remir::Rng;

TEST(Rng, DerivedSeedsAreStableAndDistinct) {
  EXPECT_EQ(remir::derive_seed(5, 1), remir::derive_seed(5, 1));
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 200; ++s) seen.insert(remir::derive_seed(42, s));
  EXPECT_EQ(seen.size(), 200u);
  EXPECT_NE(remir::derive_seed(1, 2), remir::derive_seed(2, 1));
}

TEST(Rng, BelowStaysInRange) {
  Rng rng(3);
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 7000; ++i) ++hits[rng.below(7)];
  for (int h : hits) EXPECT_GT(h, 800);
  EXPECT_EQ(rng.below(1), 0u);
}

TEST(Rng, ShuffleIsAPermutation) {
  Rng rng(11);
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[i] = i;
  rng.shuffle(v);
  std::set<int> s(v.begin(), v.end());
  EXPECT_EQ(s.size(), 50u);
  EXPECT_EQ(*s.begin(), 0);
  EXPECT_EQ(*s.rbegin(), 49);
}

TEST(Rng, SampleWithoutReplacementIsDistinct) {
  Rng rng(1);
  auto idx = rng.sample_without_replacement(30, 12);
  std::set<std::size_t> s(idx.begin(), idx.end());
  EXPECT_EQ(s.size(), 12u);
  EXPECT_LT(*s.rbegin(), 30u);
  EXPECT_EQ(rng.sample_without_replacement(4, 9).size(), 4u);
}

TEST(Rng, StateRoundTripReplaysTheStream) {
  Rng a(77);
  a.next();
  const std::string st = a.state();
  const auto x = a.next(), y = a.next();
  Rng b;
  b.set_state(st);
  EXPECT_EQ(b.next(), x);
  EXPECT_EQ(b.next(), y);
}

TEST(Rng, NormalHasUnitMoments) {
  Rng rng(5);
  double s = 0, s2 = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.03);
  EXPECT_NEAR(s2 / n, 1.0, 0.05);
}

TEST(Fnv1a, PublishedVectors) {
  EXPECT_EQ(remir::fnv1a(""), 0xcbf29ce484222325ull);
  EXPECT_EQ(remir::fnv1a("a"), 0xaf63dc4c8601ec8cull);
  EXPECT_EQ(remir::hex64(0xaf63dc4c8601ec8cull), "af63dc4c8601ec8c");
}
