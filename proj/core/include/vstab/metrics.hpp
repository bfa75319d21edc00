#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <vector>

#include "vstab/affine.hpp"
#include "vstab/frame.hpp"
#include "vstab/motion.hpp"

namespace vstab {

/// Infinite PSNR (identical frames) is reported as +infinity.
inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

/// 10 log10(255^2 / MSE) over every pixel and channel. With `masked`, only
/// pixels valid in both frames count; throws EmptyOverlap if there are none.
double psnr(const Frame& a, const Frame& b, bool masked = false);

struct FidelityReport {
    std::vector<double> psnr_db;  // one per consecutive pair
    /// Mean over the finite values; +infinity when every pair is infinite.
    double mean_db = 0.0;
    std::size_t infinite_count = 0;
};

/// Throws TooShort for fewer than 2 frames.
FidelityReport fidelity(const FrameSequence& seq, bool masked = false);

struct CameraPath {
    /// Accumulated (theta, dx, dy) per frame; entry 0 is the identity.
    std::vector<AffineParams> params;
    /// degenerate[i] marks pair (i, i + 1) as untrackable (identity used).
    std::vector<bool> degenerate;
};

/// P_0 = I and P_t = H_t P_{t-1}, where H_t maps frame t-1 content onto
/// frame t (estimate_transform). Parameters are taken about the frame center.
CameraPath estimate_path(const FrameSequence& seq, std::uint64_t seed = 0, const MotionOptions& options = {});

struct StabilityReport {
    /// Low-frequency energy ratio of the rotation, dx and dy signals.
    std::array<double, 3> ratios{1.0, 1.0, 1.0};
    double score = 1.0;
};

struct StabilityOptions {
    /// Adds the DC bin to the denominator (literal "total power" reading).
    bool include_dc = false;
};

/// Ratio of the power in the six lowest non-zero frequency bins (k = 1..6) to
/// the power in bins 1..floor(n/2). A zero denominator gives 1. Throws
/// TooShort below 16 samples.
double low_frequency_ratio(const std::vector<double>& signal, const StabilityOptions& options = {});

/// Power |X_k|^2 of a single DFT bin, computed directly.
double dft_power(const std::vector<double>& signal, std::size_t k);

StabilityReport stability(const CameraPath& path, const StabilityOptions& options = {});
StabilityReport stability(const FrameSequence& seq, const StabilityOptions& options = {}, std::uint64_t seed = 0);

}  // namespace vstab
