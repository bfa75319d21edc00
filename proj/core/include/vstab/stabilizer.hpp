#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vstab/affine.hpp"
#include "vstab/frame.hpp"
#include "vstab/motion.hpp"
#include "vstab/predictor.hpp"

namespace vstab {

inline constexpr int kChunkLength = 32;

enum class TransformSource { Predicted, IdentityFallback, Merge };

std::string to_string(TransformSource s);
TransformSource parse_transform_source(const std::string& s);

/// Stabilizing transform applied to one raw frame, about the frame center.
/// Degrees are the canonical angle so the CSV form round-trips exactly.
struct TransformRecord {
    int frame = 0;  // 0-based index into the input sequence
    double theta_deg = 0.0;
    double dx = 0.0;
    double dy = 0.0;
    TransformSource source = TransformSource::Predicted;

    AffineParams params() const;
    AffineMatrix matrix(Resolution res) const;

    friend bool operator==(const TransformRecord&, const TransformRecord&) = default;
};

using TransformLog = std::vector<TransformRecord>;

/// CSV `frame,theta_deg,dx,dy,source`, values printed with %.17g.
void write_transform_log(const TransformLog& log, const std::filesystem::path& path);
TransformLog read_transform_log(const std::filesystem::path& path);

/// Produces the transform that stabilizes the next frame given the session's
/// history. Throws DegenerateFlow when it cannot.
class Predictor {
public:
    virtual ~Predictor() = default;
    /// `frame_index` is the 0-based position in the input; it seeds any
    /// randomness so results do not depend on processing order.
    virtual AffineMatrix predict(const HistoryBuffer& history, const Frame& unstable, std::size_t frame_index) = 0;
};

/// estimate_transform(last stabilized, unstable) then its inverse.
class ClassicalPredictor : public Predictor {
public:
    explicit ClassicalPredictor(std::uint64_t seed = 0, MotionOptions options = {});
    AffineMatrix predict(const HistoryBuffer& history, const Frame& unstable, std::size_t frame_index) override;

private:
    std::uint64_t seed_;
    MotionOptions options_;
};

/// forward_multiscale of a trained model.
class LearnedPredictor : public Predictor {
public:
    explicit LearnedPredictor(PredictorModel model);
    AffineMatrix predict(const HistoryBuffer& history, const Frame& unstable, std::size_t frame_index) override;

private:
    PredictorModel model_;
};

struct StabilizationResult {
    FrameSequence frames;
    TransformLog log;
    /// Chunked mode only: the merge transform of each chunk after the first.
    TransformLog merges;
};

/// Frame 0 passes through as the first history frame. Every later frame is
/// warped by the predictor's transform and pushed to the history. A
/// DegenerateFlow from the predictor yields the identity for that frame.
StabilizationResult stabilize_online(const FrameSequence& seq, Predictor& predictor);

/// Chunk lengths for an n-frame input: 32, 32, ..., remainder.
std::vector<int> chunk_sizes(std::size_t n);

/// Each 32-frame chunk is stabilized online from its own first frame. Chunks
/// after the first are then aligned to the output: one rigid transform from
/// the last merged frame to the chunk's first raw frame is estimated and its
/// inverse composed onto every transform of the chunk. Frames are resampled
/// once from the raw input. A degenerate merge estimate falls back to the
/// identity.
StabilizationResult stabilize_chunked(const FrameSequence& seq, Predictor& predictor, std::uint64_t seed = 0,
                                      const MotionOptions& merge_options = {});

/// warp(raw[i], log[i].matrix()) for every record.
FrameSequence apply_transform_log(const FrameSequence& raw, const TransformLog& log);

}  // namespace vstab
