#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vstab/affine.hpp"
#include "vstab/frame.hpp"

namespace vstab {

/// Shake statistics for one intensity level. Keyframe values are drawn from
/// N(0, sigma) truncated to +-3 sigma; keyframes are spaced by a uniform
/// draw from [interval_min, interval_max] frames. Translation sigmas are in
/// pixels of `reference` and scale with the frame size of the trace.
struct IntensityProfile {
    std::string name = "custom";
    double sigma_theta = 0.0;  // radians
    double sigma_dx = 0.0;
    double sigma_dy = 0.0;
    int interval_min = 4;
    int interval_max = 6;
    Resolution reference{1280, 720};

    /// Largest magnitude a generated value can take at `res` (3 sigma).
    AffineParams bound(Resolution res) const;
    void check() const;

    /// Defaults at 1280x720: small (0.3 deg, 3 px), medium (0.8 deg, 8 px),
    /// large (1.5 deg, 15 px), keyframes every 4-6 frames.
    static IntensityProfile small();
    static IntensityProfile medium();
    static IntensityProfile large();
    /// Looks up one of the names above; throws InvalidArgument otherwise.
    static IntensityProfile named(const std::string& name);
};

/// Per-frame ground-truth shake.
struct JitterTrace {
    std::vector<AffineParams> params;
    Resolution resolution{1280, 720};
    RotationCenter center{640.0, 360.0};
    IntensityProfile profile;
    std::uint64_t seed = 0;

    std::size_t size() const noexcept { return params.size(); }
    /// Parameters re-expressed for frames of size `res` (identity if equal).
    AffineParams params_at(std::size_t i, Resolution res) const;
    RotationCenter center_at(Resolution res) const;
};

struct Keyframe {
    int index = 0;
    AffineParams value;
};

/// Linear interpolation between consecutive keyframes; frames past the last
/// keyframe hold its value. Keyframe indices must be strictly increasing and
/// start at 0.
std::vector<AffineParams> interpolate_keyframes(const std::vector<Keyframe>& keys, int n_frames);

/// Deterministic in (n_frames, profile, seed). The first keyframe is frame 0;
/// one interval schedule is shared by all three parameters.
JitterTrace generate_trace(int n_frames, const IntensityProfile& profile, std::uint64_t seed,
                           Resolution resolution = {1280, 720});

/// frame i = warp(stable_i, params_to_matrix(trace_i, center)).
FrameSequence apply_jitter(const FrameSequence& stable, const JitterTrace& trace);

/// frame i = warp(unstable_i, inverse(params_to_matrix(trace_i, center))).
/// Black borders are kept: this is the training target.
FrameSequence ground_truth_stabilize(const FrameSequence& unstable, const JitterTrace& trace);

/// Trace CSV: comment preamble (`# seed=`, `# profile=`, `# sigma=`,
/// `# interval=`, `# center=`, `# resolution=`), then
/// `frame,theta_deg,dx,dy` and one row per frame. Doubles are written with 17
/// significant digits.
void write_trace(const JitterTrace& trace, const std::filesystem::path& path);
JitterTrace read_trace(const std::filesystem::path& path);

enum class Split { Train, Validation };

struct CorpusEntry {
    std::string name;     // item directory, relative to the corpus root
    std::string source;   // stable input manifest as given
    std::string profile;
    Split split = Split::Train;
    std::uint64_t seed = 0;
};

struct CorpusManifest {
    std::filesystem::path root;
    std::vector<CorpusEntry> entries;

    std::filesystem::path unstable_dir(const CorpusEntry& e) const { return root / e.name / "unstable"; }
    std::filesystem::path stable_dir(const CorpusEntry& e) const { return root / e.name / "stable"; }
    std::filesystem::path trace_path(const CorpusEntry& e) const { return root / e.name / "trace.csv"; }
};

inline constexpr const char* kCorpusManifestName = "corpus.csv";

struct CorpusOptions {
    double validation_fraction = 0.0;
};

/// For every (stable sequence, profile) pair writes `item_NNNN/` holding the
/// unstable sequence, the ground-truth stable sequence (with borders) and
/// trace.csv, then `corpus.csv` listing items and their split. Warps are
/// computed from the trace as re-read from disk, so re-synthesis from the
/// file reproduces the pixels exactly.
CorpusManifest synthesize_corpus(const std::vector<std::filesystem::path>& stable_manifests,
                                 const std::vector<IntensityProfile>& profiles, std::uint64_t seed,
                                 const std::filesystem::path& out_dir, const CorpusOptions& options = {});

CorpusManifest read_corpus(const std::filesystem::path& corpus_dir);

std::string to_string(Split split);

}  // namespace vstab
