#pragma once

#include <cstdint>

#include "textures.hpp"
#include "vstab/synthesis.hpp"
#include "vstab/training.hpp"

namespace vstab::testing {

/// In-memory corpus item: a static textured scene shaken by a generated trace,
/// with the ground-truth stabilized sequence as the stable side.
inline CorpusItem make_corpus_item(int frames, int width, int height, const IntensityProfile& profile,
                                   std::uint64_t seed) {
    FrameSequence scene;
    const Frame f = smooth_texture(width, height, seed, 1, 6, 12.0);
    for (int i = 0; i < frames; ++i) scene.frames.push_back(f);
    CorpusItem item;
    item.trace = generate_trace(frames, profile, seed, {width, height});
    item.unstable = apply_jitter(scene, item.trace);
    item.stable = ground_truth_stabilize(item.unstable, item.trace);
    return item;
}

inline TrainingItem make_training_item(int frames, int width, int height, const IntensityProfile& profile,
                                       std::uint64_t seed, SmoothnessTransform mode = SmoothnessTransform::Identity) {
    return prepare_training_item(make_corpus_item(frames, width, height, profile, seed), mode, seed);
}

}  // namespace vstab::testing
