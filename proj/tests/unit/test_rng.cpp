#include <cmath>
#include <cstdint>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "vstab/rng.hpp"

using namespace vstab;

TEST(Rng, EngineMatchesStandardMt19937_64) {
    Rng rng(42);
    std::mt19937_64 ref(42);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(rng.next_u64(), ref());
}

TEST(Rng, UniformUsesTop53Bits) {
    Rng rng(7);
    std::mt19937_64 ref(7);
    for (int i = 0; i < 100; ++i) {
        const double want = static_cast<double>(ref() >> 11) * 0x1.0p-53;
        EXPECT_EQ(rng.uniform(), want);
    }
}

TEST(Rng, UniformIntStaysInRangeAndCoversIt) {
    Rng rng(1);
    std::set<std::int64_t> seen;
    for (int i = 0; i < 2000; ++i) {
        const std::int64_t v = rng.uniform_int(4, 6);
        ASSERT_GE(v, 4);
        ASSERT_LE(v, 6);
        seen.insert(v);
    }
    EXPECT_EQ(seen.size(), 3u);
    EXPECT_EQ(rng.uniform_int(9, 9), 9);
}

TEST(Rng, NormalMoments) {
    Rng rng(123);
    double sum = 0.0, sq = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double v = rng.normal();
        sum += v;
        sq += v * v;
    }
    EXPECT_NEAR(sum / n, 0.0, 0.01);
    EXPECT_NEAR(sq / n, 1.0, 0.02);
}

TEST(Rng, SameSeedSameStream) {
    Rng a(99), b(99);
    for (int i = 0; i < 50; ++i) {
        EXPECT_EQ(a.normal(), b.normal());
        EXPECT_EQ(a.uniform_int(0, 1000), b.uniform_int(0, 1000));
    }
}

TEST(Rng, MixSeedSeparatesStreams) {
    EXPECT_NE(mix_seed(0, 0), mix_seed(0, 1));
    EXPECT_NE(mix_seed(0, 1), mix_seed(1, 0));
    EXPECT_EQ(mix_seed(5, 9), mix_seed(5, 9));
}
