#include "vstab/stabilizer.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "vstab/error.hpp"
#include "vstab/rng.hpp"

namespace vstab {

namespace {

constexpr std::uint64_t kMergeStream = 0x6d65726765ULL;

TransformRecord make_record(int frame, const AffineMatrix& m, Resolution res, TransformSource source) {
    const AffineParams p = matrix_to_params(m, frame_center(res));
    return {frame, degrees(p.theta), p.dx, p.dy, source};
}

struct OnlineRun {
    std::vector<Frame> frames;
    TransformLog log;
};

// Online stabilization of seq[begin, end); records carry absolute indices.
OnlineRun run_online(const FrameSequence& seq, std::size_t begin, std::size_t end, Predictor& predictor) {
    const Resolution res{seq[0].width, seq[0].height};
    OnlineRun run;
    HistoryBuffer history;
    for (std::size_t i = begin; i < end; ++i) {
        TransformRecord rec;
        if (i == begin) {
            rec = make_record(static_cast<int>(i), AffineMatrix::identity(), res, TransformSource::Predicted);
        } else {
            try {
                rec = make_record(static_cast<int>(i), predictor.predict(history, seq[i], i), res,
                                  TransformSource::Predicted);
            } catch (const Error& e) {
                if (e.code() != ErrorCode::DegenerateFlow) throw;
                rec = make_record(static_cast<int>(i), AffineMatrix::identity(), res, TransformSource::IdentityFallback);
            }
        }
        Frame out = i == begin ? seq[i] : warp(seq[i], rec.matrix(res));
        history.push(out);
        run.frames.push_back(std::move(out));
        run.log.push_back(rec);
    }
    return run;
}

}  // namespace

std::string to_string(TransformSource s) {
    switch (s) {
        case TransformSource::Predicted: return "predicted";
        case TransformSource::IdentityFallback: return "identity-fallback";
        case TransformSource::Merge: return "merge";
    }
    return "predicted";
}

TransformSource parse_transform_source(const std::string& s) {
    if (s == "predicted") return TransformSource::Predicted;
    if (s == "identity-fallback") return TransformSource::IdentityFallback;
    if (s == "merge") return TransformSource::Merge;
    throw Error(ErrorCode::InvalidArgument, "unknown transform source '" + s + "'");
}

AffineParams TransformRecord::params() const { return {radians(theta_deg), dx, dy}; }

AffineMatrix TransformRecord::matrix(Resolution res) const { return params_to_matrix(params(), frame_center(res)); }

void write_transform_log(const TransformLog& log, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw Error(ErrorCode::IoFailure, "cannot write transform log " + path.string());
    os << "frame,theta_deg,dx,dy,source\n";
    char buf[160];
    for (const TransformRecord& r : log) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,", r.frame, r.theta_deg, r.dx, r.dy);
        os << buf << to_string(r.source) << "\n";
    }
    if (!os) throw Error(ErrorCode::IoFailure, "failed writing transform log " + path.string());
}

TransformLog read_transform_log(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw Error(ErrorCode::IoFailure, "cannot read transform log " + path.string());
    std::string line;
    if (!std::getline(is, line) || line != "frame,theta_deg,dx,dy,source") {
        throw Error(ErrorCode::InvalidArgument, path.string() + ": missing transform log header");
    }
    TransformLog log;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string f[5];
        for (auto& s : f) std::getline(ls, s, ',');
        try {
            log.push_back({std::stoi(f[0]), std::stod(f[1]), std::stod(f[2]), std::stod(f[3]),
                           parse_transform_source(f[4])});
        } catch (const std::invalid_argument&) {
            throw Error(ErrorCode::InvalidArgument, path.string() + ": bad row '" + line + "'");
        }
    }
    return log;
}

ClassicalPredictor::ClassicalPredictor(std::uint64_t seed, MotionOptions options)
    : seed_(seed), options_(std::move(options)) {}

AffineMatrix ClassicalPredictor::predict(const HistoryBuffer& history, const Frame& unstable, std::size_t frame_index) {
    MotionOptions opt = options_;
    opt.ransac.seed = mix_seed(seed_, frame_index);
    const Frame& last = history.last();
    const RigidEstimate est = estimate_transform(last, unstable, opt);
    return inverse(params_to_matrix(est.params, frame_center(unstable.width, unstable.height)));
}

LearnedPredictor::LearnedPredictor(PredictorModel model) : model_(std::move(model)) {}

AffineMatrix LearnedPredictor::predict(const HistoryBuffer& history, const Frame& unstable, std::size_t) {
    const MultiscaleResult r = forward_multiscale(model_, history, unstable);
    return params_to_matrix(r.params, frame_center(unstable.width, unstable.height));
}

StabilizationResult stabilize_online(const FrameSequence& seq, Predictor& predictor) {
    seq.check();
    OnlineRun run = run_online(seq, 0, seq.size(), predictor);
    StabilizationResult r;
    r.frames.fps = seq.fps;
    r.frames.frames = std::move(run.frames);
    r.log = std::move(run.log);
    return r;
}

std::vector<int> chunk_sizes(std::size_t n) {
    std::vector<int> sizes;
    for (std::size_t start = 0; start < n; start += kChunkLength) {
        sizes.push_back(static_cast<int>(std::min<std::size_t>(kChunkLength, n - start)));
    }
    return sizes;
}

StabilizationResult stabilize_chunked(const FrameSequence& seq, Predictor& predictor, std::uint64_t seed,
                                      const MotionOptions& merge_options) {
    seq.check();
    const Resolution res{seq[0].width, seq[0].height};
    const RotationCenter center = frame_center(res);
    StabilizationResult r;
    r.frames.fps = seq.fps;

    std::size_t begin = 0;
    for (int len : chunk_sizes(seq.size())) {
        const std::size_t end = begin + static_cast<std::size_t>(len);
        OnlineRun chunk = run_online(seq, begin, end, predictor);
        if (begin == 0) {
            for (std::size_t k = 0; k < chunk.frames.size(); ++k) {
                r.frames.frames.push_back(std::move(chunk.frames[k]));
                r.log.push_back(chunk.log[k]);
            }
        } else {
            AffineMatrix merge = AffineMatrix::identity();
            TransformSource merge_source = TransformSource::Merge;
            MotionOptions opt = merge_options;
            opt.ransac.seed = mix_seed(mix_seed(seed, kMergeStream), begin);
            try {
                const RigidEstimate est = estimate_transform(r.frames.frames.back(), seq[begin], opt);
                merge = inverse(params_to_matrix(est.params, center));
            } catch (const Error& e) {
                if (e.code() != ErrorCode::DegenerateFlow) throw;
                merge_source = TransformSource::IdentityFallback;
            }
            const TransformRecord merge_rec = make_record(static_cast<int>(begin), merge, res, merge_source);
            r.merges.push_back(merge_rec);
            const AffineMatrix merge_m = merge_rec.matrix(res);
            for (std::size_t k = 0; k < chunk.log.size(); ++k) {
                const TransformRecord& pre = chunk.log[k];
                TransformRecord rec =
                    make_record(pre.frame, compose(merge_m, pre.matrix(res)), res, k == 0 ? merge_source : pre.source);
                r.frames.frames.push_back(warp(seq[static_cast<std::size_t>(pre.frame)], rec.matrix(res)));
                r.log.push_back(rec);
            }
        }
        begin = end;
    }
    return r;
}

FrameSequence apply_transform_log(const FrameSequence& raw, const TransformLog& log) {
    raw.check();
    if (log.size() != raw.size()) {
        throw Error(ErrorCode::DimensionMismatch, "transform log length does not match the sequence");
    }
    const Resolution res{raw[0].width, raw[0].height};
    FrameSequence out;
    out.fps = raw.fps;
    for (const TransformRecord& rec : log) {
        if (rec.frame < 0 || static_cast<std::size_t>(rec.frame) >= raw.size()) {
            throw Error(ErrorCode::IndexOutOfRange, "transform log refers to frame " + std::to_string(rec.frame));
        }
        const Frame& f = raw[static_cast<std::size_t>(rec.frame)];
        out.frames.push_back(warp(f, rec.matrix(res)));
    }
    return out;
}

}  // namespace vstab
