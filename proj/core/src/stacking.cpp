#include "vstab/stacking.hpp"

#include <algorithm>
#include <string>

#include "vstab/error.hpp"
#include "vstab/frameio.hpp"

namespace vstab {

const LevelSpec& level_spec(int level) {
    if (level < 1 || level > kLevelCount) {
        throw Error(ErrorCode::InvalidArgument, "level must be 1..3, got " + std::to_string(level));
    }
    return kLevels[static_cast<std::size_t>(level - 1)];
}

std::array<int, kHistoryLength> sample_indices(int frame_number, int interval) {
    if (frame_number < 1 || interval < 1) {
        throw Error(ErrorCode::InvalidArgument, "sample_indices: frame number and interval must be >= 1");
    }
    std::array<int, kHistoryLength> out{};
    for (int k = kHistoryLength; k >= 1; --k) {
        out[static_cast<std::size_t>(kHistoryLength - k)] = std::max(1, frame_number - k * interval);
    }
    return out;
}

Frame level_frame(const Frame& frame, int level) {
    const int s = level_spec(level).size;
    return resize_area(to_grayscale(frame), s, s);
}

HistoryBuffer::HistoryBuffer(std::size_t capacity) : capacity_(std::max(capacity, kMinCapacity)) {}

void HistoryBuffer::push(const Frame& stabilized) {
    Levels levels;
    for (int l = 1; l <= kLevelCount; ++l) {
        levels[static_cast<std::size_t>(l - 1)] = vstab::level_frame(stabilized, l);
    }
    if (count_ == 0) {
        first_ = levels;
    }
    recent_.push_back(std::move(levels));
    if (recent_.size() > capacity_) {
        recent_.pop_front();
    }
    last_ = stabilized;
    ++count_;
}

bool HistoryBuffer::contains(int frame_number) const noexcept {
    if (frame_number < 1 || frame_number > count_) return false;
    return frame_number == 1 || frame_number > count_ - static_cast<int>(recent_.size());
}

const Frame& HistoryBuffer::last() const {
    if (count_ == 0) {
        throw Error(ErrorCode::InsufficientHistory, "history is empty");
    }
    return last_;
}

const Frame& HistoryBuffer::level_frame(int frame_number, int level) const {
    level_spec(level);
    if (!contains(frame_number)) {
        throw Error(ErrorCode::InsufficientHistory, "frame " + std::to_string(frame_number) + " not in history");
    }
    const auto li = static_cast<std::size_t>(level - 1);
    if (frame_number == 1) {
        return first_[li];
    }
    const int oldest = count_ - static_cast<int>(recent_.size()) + 1;
    return recent_[static_cast<std::size_t>(frame_number - oldest)][li];
}

FrameStack build_stack_preprocessed(const HistoryBuffer& history, Frame unstable_level, int level) {
    const LevelSpec& spec = level_spec(level);
    if (history.empty()) {
        throw Error(ErrorCode::InsufficientHistory, "build_stack: history is empty");
    }
    if (unstable_level.width != spec.size || unstable_level.height != spec.size || unstable_level.channels != 1) {
        throw Error(ErrorCode::DimensionMismatch, "build_stack: unstable frame not at level resolution");
    }
    FrameStack stack;
    stack.level = level;
    stack.interval = spec.interval;
    stack.size = spec.size;
    stack.frames.reserve(kStackDepth);
    for (int idx : sample_indices(history.count() + 1, spec.interval)) {
        stack.frames.push_back(history.level_frame(idx, level));
    }
    stack.frames.push_back(std::move(unstable_level));
    return stack;
}

FrameStack build_stack(const HistoryBuffer& history, const Frame& unstable, int level) {
    return build_stack_preprocessed(history, level_frame(unstable, level), level);
}

CorpusItem load_corpus_item(const CorpusManifest& corpus, const CorpusEntry& entry) {
    CorpusItem item;
    item.stable = load_sequence(corpus.stable_dir(entry));
    item.unstable = load_sequence(corpus.unstable_dir(entry));
    item.trace = read_trace(corpus.trace_path(entry));
    if (item.stable.size() != item.unstable.size() || item.trace.size() != item.unstable.size() ||
        !item.stable[0].same_shape(item.unstable[0])) {
        throw Error(ErrorCode::DimensionMismatch, "corpus item " + entry.name + " is not aligned");
    }
    return item;
}

AffineParams training_target(const JitterTrace& trace, std::size_t i, Resolution frame_res, int level) {
    if (i >= trace.size()) {
        throw Error(ErrorCode::IndexOutOfRange, "trace index " + std::to_string(i) + " out of range");
    }
    const RotationCenter c = trace.center_at(frame_res);
    const AffineMatrix stabilize = inverse(params_to_matrix(trace.params_at(i, frame_res), c));
    const AffineParams p = rescale_params(matrix_to_params(stabilize, c), frame_res, level_resolution(level));
    return {p.theta * kParamScale, p.dx * kParamScale, p.dy * kParamScale};
}

std::pair<FrameStack, AffineParams> build_training_stack(const CorpusItem& item, int frame_number, int level,
                                                         bool stable_sample) {
    const LevelSpec& spec = level_spec(level);
    const int n = static_cast<int>(item.unstable.size());
    if (frame_number < 1 || frame_number > n) {
        throw Error(ErrorCode::IndexOutOfRange, "frame number " + std::to_string(frame_number) + " outside 1.." +
                                                    std::to_string(n));
    }
    FrameStack stack;
    stack.level = level;
    stack.interval = spec.interval;
    stack.size = spec.size;
    for (int idx : sample_indices(frame_number, spec.interval)) {
        stack.frames.push_back(level_frame(item.stable[static_cast<std::size_t>(idx - 1)], level));
    }
    const auto i = static_cast<std::size_t>(frame_number - 1);
    const Frame& slot = stable_sample ? item.stable[i] : item.unstable[i];
    stack.frames.push_back(level_frame(slot, level));
    const Resolution res{item.unstable[0].width, item.unstable[0].height};
    const AffineParams target = stable_sample ? AffineParams{} : training_target(item.trace, i, res, level);
    return {std::move(stack), target};
}

}  // namespace vstab
