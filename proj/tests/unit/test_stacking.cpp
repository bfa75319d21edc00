#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "textures.hpp"
#include "vstab/frameio.hpp"
#include "vstab/stacking.hpp"

using namespace vstab;

namespace {

// Frame whose constant value encodes its 1-based frame number.
Frame tagged(int number, int w = 64, int h = 48) { return Frame::filled(w, h, 1, static_cast<std::uint8_t>(number)); }

std::vector<int> tags(const FrameStack& s) {
    std::vector<int> out;
    for (const auto& f : s.frames) out.push_back(f.at(0, 0));
    return out;
}

// Stabilizing parameters derived by hand: the inverse of x -> R(x - c + d) + c
// is y -> R^T(y - c - R d) + c, with R = [cos sin; -sin cos].
AffineParams stabilizing_oracle(const AffineParams& p) {
    return {-p.theta, -(std::cos(p.theta) * p.dx + std::sin(p.theta) * p.dy),
            -(-std::sin(p.theta) * p.dx + std::cos(p.theta) * p.dy)};
}

}  // namespace

TEST(SampleIndices, WorkedExamples) {
    const auto a = sample_indices(10, 6);
    for (int k = 0; k < 22; ++k) EXPECT_EQ(a[k], 1) << k;
    EXPECT_EQ(a[22], 4);

    const auto b = sample_indices(100, 1);
    for (int k = 0; k < kHistoryLength; ++k) EXPECT_EQ(b[k], 77 + k);

    const auto c = sample_indices(200, 6);
    EXPECT_EQ(c.front(), 200 - 138);
    EXPECT_EQ(c.back(), 194);

    const auto d = sample_indices(1, 3);
    for (int v : d) EXPECT_EQ(v, 1);
}

TEST(SampleIndices, PropertiesHoldEverywhere) {
    for (int t : {1, 3, 6}) {
        for (int i = 1; i < 300; ++i) {
            const auto s = sample_indices(i, t);
            for (int k = 0; k < kHistoryLength; ++k) {
                EXPECT_GE(s[k], 1);
                EXPECT_LT(s[k], std::max(i, 2));
                if (k > 0) EXPECT_GE(s[k], s[k - 1]);
                EXPECT_EQ(s[k], std::max(1, i - (kHistoryLength - k) * t));
            }
        }
    }
    EXPECT_VSTAB_ERROR(sample_indices(0, 1), ErrorCode::InvalidArgument);
    EXPECT_VSTAB_ERROR(sample_indices(5, 0), ErrorCode::InvalidArgument);
}

TEST(Levels, Table) {
    EXPECT_EQ(level_spec(1).size, 30);
    EXPECT_EQ(level_spec(1).interval, 6);
    EXPECT_EQ(level_spec(2).size, 125);
    EXPECT_EQ(level_spec(2).interval, 3);
    EXPECT_EQ(level_spec(3).size, 256);
    EXPECT_EQ(level_spec(3).interval, 1);
    EXPECT_VSTAB_ERROR(level_spec(0), ErrorCode::InvalidArgument);
    EXPECT_VSTAB_ERROR(level_spec(4), ErrorCode::InvalidArgument);
}

TEST(Levels, LevelFrameIsGrayscaleResize) {
    const Frame f = vstab::testing::smooth_texture(160, 90, 4, 3);
    for (int l = 1; l <= 3; ++l) {
        const Frame g = level_frame(f, l);
        EXPECT_EQ(g.width, level_spec(l).size);
        EXPECT_EQ(g.height, level_spec(l).size);
        EXPECT_EQ(g.channels, 1);
        EXPECT_EQ(g, resize_area(to_grayscale(f), g.width, g.height));
    }
}

TEST(History, EarlyStacksRepeatFrameOne) {
    HistoryBuffer h;
    h.push(tagged(1));
    const FrameStack s = build_stack(h, tagged(2), 1);
    ASSERT_EQ(s.frames.size(), static_cast<std::size_t>(kStackDepth));
    const auto t = tags(s);
    for (int k = 0; k < kHistoryLength; ++k) EXPECT_EQ(t[k], 1);
    EXPECT_EQ(t.back(), 2);
    EXPECT_EQ(s.unstable().width, 30);
}

TEST(History, StacksFollowSampleIndicesAtEveryLevel) {
    HistoryBuffer h;
    for (int n = 1; n <= 200; ++n) {
        for (int l = 1; l <= 3; ++l) {
            if (n == 1) break;
            const FrameStack s = build_stack(h, tagged(n), l);
            EXPECT_EQ(s.level, l);
            EXPECT_EQ(s.interval, level_spec(l).interval);
            const auto idx = sample_indices(n, level_spec(l).interval);
            const auto t = tags(s);
            for (int k = 0; k < kHistoryLength; ++k) ASSERT_EQ(t[k], idx[k]) << n << " " << l;
            EXPECT_EQ(t.back(), n);
        }
        h.push(tagged(n));
    }
    EXPECT_EQ(h.count(), 200);
    EXPECT_EQ(h.last(), tagged(200));
}

TEST(History, EvictsOldFramesButKeepsFrameOne) {
    HistoryBuffer h;
    const int n = static_cast<int>(h.capacity()) + 20;
    for (int i = 1; i <= n; ++i) h.push(tagged(i % 250 + 1));
    EXPECT_TRUE(h.contains(1));
    EXPECT_FALSE(h.contains(2));
    EXPECT_FALSE(h.contains(20));
    EXPECT_TRUE(h.contains(21));
    EXPECT_TRUE(h.contains(n));
    EXPECT_FALSE(h.contains(n + 1));
    EXPECT_EQ(h.level_frame(1, 2).at(0, 0), 2);
    EXPECT_VSTAB_ERROR(h.level_frame(5, 1), ErrorCode::InsufficientHistory);
    EXPECT_EQ(h.capacity(), HistoryBuffer::kMinCapacity);
    EXPECT_EQ(HistoryBuffer(1).capacity(), HistoryBuffer::kMinCapacity);
}

TEST(History, Errors) {
    HistoryBuffer h;
    EXPECT_VSTAB_ERROR(h.last(), ErrorCode::InsufficientHistory);
    EXPECT_VSTAB_ERROR(build_stack(h, tagged(1), 1), ErrorCode::InsufficientHistory);
    h.push(tagged(1));
    EXPECT_VSTAB_ERROR(build_stack_preprocessed(h, Frame::filled(31, 30, 1), 1), ErrorCode::DimensionMismatch);
    EXPECT_VSTAB_ERROR(build_stack(h, tagged(2), 7), ErrorCode::InvalidArgument);
}

TEST(TrainingTarget, MatchesHandDerivedInverse) {
    const auto trace = generate_trace(30, IntensityProfile::large(), 12);
    const Resolution frame{1280, 720};
    for (std::size_t i = 0; i < trace.size(); ++i) {
        const AffineParams o = stabilizing_oracle(trace.params[i]);
        for (int l = 1; l <= 3; ++l) {
            const double s = level_spec(l).size;
            const AffineParams t = training_target(trace, i, frame, l);
            EXPECT_NEAR(t.theta, o.theta * kParamScale, 1e-6);
            EXPECT_NEAR(t.dx, o.dx * s / 1280.0 * kParamScale, 1e-6);
            EXPECT_NEAR(t.dy, o.dy * s / 720.0 * kParamScale, 1e-6);
        }
    }
    EXPECT_VSTAB_ERROR(training_target(trace, 30, frame, 1), ErrorCode::IndexOutOfRange);
}

TEST(TrainingTarget, WorkedExample) {
    JitterTrace trace;
    trace.params = {{0.0, 10.0, -20.0}};
    const AffineParams t = training_target(trace, 0, {1280, 720}, 1);
    EXPECT_NEAR(t.theta, 0.0, 1e-9);
    EXPECT_NEAR(t.dx, -10.0 * 30.0 / 1280.0 * 1000.0, 1e-9);
    EXPECT_NEAR(t.dy, 20.0 * 30.0 / 720.0 * 1000.0, 1e-9);
}

TEST(TrainingStack, UsesGroundTruthHistory) {
    CorpusItem item;
    item.trace = generate_trace(40, IntensityProfile::medium(), 3, {64, 48});
    for (int n = 1; n <= 40; ++n) {
        item.stable.frames.push_back(tagged(n));
        item.unstable.frames.push_back(tagged(100 + n));
    }
    const auto [stack, target] = build_training_stack(item, 30, 2, false);
    const auto idx = sample_indices(30, 3);
    const auto t = tags(stack);
    for (int k = 0; k < kHistoryLength; ++k) EXPECT_EQ(t[k], idx[k]);
    EXPECT_EQ(t.back(), 130);
    const AffineParams want = training_target(item.trace, 29, {64, 48}, 2);
    EXPECT_EQ(target, want);

    const auto [stable_stack, zero] = build_training_stack(item, 30, 2, true);
    EXPECT_EQ(tags(stable_stack).back(), 30);
    EXPECT_EQ(zero, AffineParams{});

    EXPECT_VSTAB_ERROR(build_training_stack(item, 0, 1, false), ErrorCode::IndexOutOfRange);
    EXPECT_VSTAB_ERROR(build_training_stack(item, 41, 1, false), ErrorCode::IndexOutOfRange);
}
