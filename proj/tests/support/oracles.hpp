#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "vstab/affine.hpp"
#include "vstab/frameio.hpp"
#include "vstab/predictor.hpp"
#include "vstab/training.hpp"

namespace vstab::testing {

/// Real-valued image with a validity mask, used by the loss oracles.
struct OracleImage {
    int width = 0;
    int height = 0;
    std::vector<double> value;
    std::vector<std::uint8_t> valid;
};

inline OracleImage oracle_image(const Frame& frame) {
    const Frame g = to_grayscale(frame);
    OracleImage out{g.width, g.height, {}, g.valid};
    for (auto p : g.pixels) out.value.push_back(p / 255.0);
    return out;
}

/// Bilinear resampling on the inverse map with zero outside. A pixel is valid
/// when every tap carrying positive weight is inside and valid.
inline OracleImage oracle_warp(const OracleImage& img, const AffineMatrix& m) {
    const AffineMatrix inv = inverse(m);
    OracleImage out{img.width, img.height, std::vector<double>(img.value.size()),
                    std::vector<std::uint8_t>(img.value.size())};
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const Point2 s = inv.apply({double(x), double(y)});
            const int x0 = static_cast<int>(std::floor(s.x)), y0 = static_cast<int>(std::floor(s.y));
            const double fx = s.x - x0, fy = s.y - y0;
            const double wts[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
            const int tx[4] = {x0, x0 + 1, x0, x0 + 1}, ty[4] = {y0, y0, y0 + 1, y0 + 1};
            double acc = 0.0;
            bool ok = true;
            for (int k = 0; k < 4; ++k) {
                const bool inside = tx[k] >= 0 && ty[k] >= 0 && tx[k] < img.width && ty[k] < img.height;
                if (inside) acc += wts[k] * img.value[ty[k] * img.width + tx[k]];
                if (wts[k] > 0.0 && (!inside || img.valid[ty[k] * img.width + tx[k]] == 0)) ok = false;
            }
            out.value[y * img.width + x] = acc;
            out.valid[y * img.width + x] = ok ? 1 : 0;
        }
    }
    return out;
}

inline AffineParams unscaled(const AffineParams& p) {
    return {p.theta / kParamScale, p.dx / kParamScale, p.dy / kParamScale};
}

/// Mean squared difference of the three scaled parameters.
inline double oracle_param_term(const AffineParams& pred, const AffineParams& truth) {
    return ((pred.theta - truth.theta) * (pred.theta - truth.theta) + (pred.dx - truth.dx) * (pred.dx - truth.dx) +
            (pred.dy - truth.dy) * (pred.dy - truth.dy)) /
           3.0;
}

/// alpha times the unmasked pixel MSE after warping the unstable frame by the
/// prediction.
inline double oracle_image_term(const AffineParams& pred, const Frame& unstable, const Frame& stable, double alpha) {
    const RotationCenter c = frame_center(unstable.width, unstable.height);
    const OracleImage w = oracle_warp(oracle_image(unstable), params_to_matrix(unscaled(pred), c));
    const OracleImage s = oracle_image(stable);
    double acc = 0.0;
    for (std::size_t i = 0; i < w.value.size(); ++i) acc += (w.value[i] - s.value[i]) * (w.value[i] - s.value[i]);
    return alpha * acc / static_cast<double>(w.value.size());
}

/// Masked MSE between warp(warp(u_i, A_i), T) and warp(u_i1, A_i1).
inline double oracle_smoothness(const AffineParams& pred_i, const AffineParams& pred_i1, const Frame& u_i,
                                const Frame& u_i1, const AffineMatrix& t) {
    const RotationCenter c = frame_center(u_i.width, u_i.height);
    const OracleImage a = oracle_warp(oracle_warp(oracle_image(u_i), params_to_matrix(unscaled(pred_i), c)), t);
    const OracleImage b = oracle_warp(oracle_image(u_i1), params_to_matrix(unscaled(pred_i1), c));
    double acc = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < a.value.size(); ++i) {
        if (a.valid[i] == 0 || b.valid[i] == 0) continue;
        acc += (a.value[i] - b.value[i]) * (a.value[i] - b.value[i]);
        ++n;
    }
    return acc / n;
}

/// Pair loss re-assembled from plain forward passes: stacks are rebuilt from
/// scratch, level outputs are chained as matrices, and every term is evaluated
/// by the oracles above.
inline LossBreakdown oracle_pair_loss(const PredictorModel& model, const TrainingItem& item, const PairSample& sample,
                                      const TrainConfig& config) {
    const Frame& first = item.item.unstable[0];
    const Resolution full{first.width, first.height};
    const RotationCenter full_center = frame_center(full);
    LossBreakdown out;
    AffineParams total[2] = {};  // cumulative level-domain prediction, unscaled
    for (int level = 1; level <= kLevelCount; ++level) {
        const LevelSpec& ls = level_spec(level);
        const Resolution res = level_resolution(level);
        const RotationCenter c = frame_center(res);
        AffineParams norm[2];
        Frame u[2];
        for (int k = 0; k < 2; ++k) {
            const std::size_t fi = static_cast<std::size_t>(sample.frame - 1 + k);
            const Frame& src = sample.stable ? item.item.stable[fi] : item.item.unstable[fi];
            const Frame u_level = level_frame(src, level);
            FrameStack stack{level, ls.interval, ls.size, {}};
            for (int idx : sample_indices(static_cast<int>(fi) + 1, ls.interval)) {
                stack.frames.push_back(level_frame(item.item.stable[static_cast<std::size_t>(idx - 1)], level));
            }
            if (level == 1) {
                stack.frames.push_back(u_level);
            } else {
                const AffineParams f = rescale_params(total[k], level_resolution(level - 1), full);
                stack.frames.push_back(level_frame(warp(src, params_to_matrix(f, full_center)), level));
            }
            const AffineParams delta = unscaled(forward_level(model, stack));
            if (level == 1) {
                total[k] = delta;
            } else {
                const AffineParams prev = rescale_params(total[k], level_resolution(level - 1), res);
                total[k] = matrix_to_params(compose(params_to_matrix(delta, c), params_to_matrix(prev, c)), c);
            }
            norm[k] = {total[k].theta * kParamScale, total[k].dx * kParamScale, total[k].dy * kParamScale};
            const AffineParams truth =
                sample.stable ? AffineParams{} : training_target(item.item.trace, fi, full, level);
            const Frame s_level = level_frame(item.item.stable[fi], level);
            out.similarity_param += oracle_param_term(norm[k], truth);
            out.similarity_image += oracle_image_term(norm[k], u_level, s_level, config.alpha);
            u[k] = u_level;
        }
        const AffineParams motion = rescale_params(item.motion[static_cast<std::size_t>(sample.frame - 1)], full, res);
        out.smoothness += oracle_smoothness(norm[0], norm[1], u[0], u[1], params_to_matrix(motion, c));
    }
    out.lambda = config.lambda;
    out.alpha = config.alpha;
    out.total = out.similarity_param + out.similarity_image + config.lambda * out.smoothness;
    return out;
}

}  // namespace vstab::testing
