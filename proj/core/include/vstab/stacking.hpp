#pragma once

#include <array>
#include <deque>
#include <utility>
#include <vector>

#include "vstab/affine.hpp"
#include "vstab/frame.hpp"
#include "vstab/synthesis.hpp"

namespace vstab {

inline constexpr int kHistoryLength = 23;
inline constexpr int kStackDepth = kHistoryLength + 1;
inline constexpr int kLevelCount = 3;
/// Network targets and outputs live in this scaled domain.
inline constexpr double kParamScale = 1000.0;

struct LevelSpec {
    int level;     // 1 (coarsest) .. 3
    int size;      // square side in pixels
    int interval;  // history sampling interval in frames
};

inline constexpr std::array<LevelSpec, kLevelCount> kLevels{{{1, 30, 6}, {2, 125, 3}, {3, 256, 1}}};

/// Throws InvalidArgument for levels outside 1..3.
const LevelSpec& level_spec(int level);
inline Resolution level_resolution(int level) {
    const int s = level_spec(level).size;
    return {s, s};
}

/// 1-based frame numbers (i - 23t, ..., i - t), each clamped to at least 1.
std::array<int, kHistoryLength> sample_indices(int frame_number, int interval);

/// Grayscale conversion followed by area resize to the level's square size.
Frame level_frame(const Frame& frame, int level);

/// 23 historical stable frames followed by the unstable frame, all grayscale
/// at the level's resolution.
struct FrameStack {
    int level = 1;
    int interval = 6;
    int size = 30;
    std::vector<Frame> frames;

    const Frame& unstable() const { return frames.back(); }
};

/// Most recent stabilized frames, numbered from 1 in push order. Only the
/// per-level preprocessed copies are retained for old frames; frame 1 is kept
/// for good because clamped sampling always refers back to it.
class HistoryBuffer {
public:
    static constexpr std::size_t kMinCapacity = kHistoryLength * 6;

    explicit HistoryBuffer(std::size_t capacity = kMinCapacity);

    void push(const Frame& stabilized);

    /// Number of frames pushed so far, i.e. the number of the newest one.
    int count() const noexcept { return count_; }
    bool empty() const noexcept { return count_ == 0; }
    bool contains(int frame_number) const noexcept;
    std::size_t capacity() const noexcept { return capacity_; }

    /// Full-resolution copy of the newest frame.
    const Frame& last() const;
    /// Preprocessed copy; throws InsufficientHistory if it was evicted.
    const Frame& level_frame(int frame_number, int level) const;

private:
    using Levels = std::array<Frame, kLevelCount>;

    std::size_t capacity_;
    int count_ = 0;
    Levels first_;
    std::deque<Levels> recent_;
    Frame last_;
};

/// Stack for the frame that would become number history.count() + 1.
FrameStack build_stack(const HistoryBuffer& history, const Frame& unstable, int level);

/// Same, with the unstable slot taken verbatim from an already preprocessed
/// level frame.
FrameStack build_stack_preprocessed(const HistoryBuffer& history, Frame unstable_level, int level);

/// One synthesized pair loaded in memory.
struct CorpusItem {
    FrameSequence stable;    // ground-truth stabilized, borders included
    FrameSequence unstable;
    JitterTrace trace;
};

CorpusItem load_corpus_item(const CorpusManifest& corpus, const CorpusEntry& entry);

/// Stabilizing transform for frame index `i` (0-based) expressed at `level`
/// and multiplied by kParamScale.
AffineParams training_target(const JitterTrace& trace, std::size_t i, Resolution frame_res, int level);

/// Training stack for 1-based frame number `frame_number`. History slots come
/// from the ground-truth stable frames. With `stable_sample` the unstable
/// slot holds the ground-truth stable frame and the target is (0, 0, 0).
std::pair<FrameStack, AffineParams> build_training_stack(const CorpusItem& item, int frame_number, int level,
                                                         bool stable_sample);

}  // namespace vstab
