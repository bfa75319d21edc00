#pragma once

#include <cstdint>
#include <vector>

#include "vstab/affine.hpp"
#include "vstab/frame.hpp"

namespace vstab {

struct CornerOptions {
    int max_corners = 400;
    double quality = 0.01;
    double min_distance = 8.0;
};

struct LkOptions {
    int levels = 3;
    int window = 15;
    int max_iterations = 30;
    double epsilon = 0.01;
    /// Mean absolute patch difference (0-255 scale) above which a track is
    /// dropped.
    double max_error = 24.0;
    /// Minimum eigenvalue of the window's gradient matrix, per window pixel.
    double min_eigen = 1e-3;
};

struct RansacOptions {
    int iterations = 300;
    double inlier_threshold = 1.5;
    double min_inlier_ratio = 0.5;
    std::uint64_t seed = 0;
};

struct MotionOptions {
    CornerOptions corners;
    LkOptions lk;
    RansacOptions ransac;
};

struct FlowPoint {
    Point2 point;
    Point2 displacement;
    bool tracked = false;
    double error = 0.0;
};

struct FlowField {
    std::vector<FlowPoint> points;

    std::size_t tracked_count() const;
};

/// Rigid (rotation about a center + translation) fit mapping previous-frame
/// points onto next-frame points.
struct RigidEstimate {
    AffineParams params;
    int inliers = 0;
    int tracked = 0;
    double mean_residual = 0.0;
};

/// Shi-Tomasi corners: local maxima (3x3) of the minimum eigenvalue of the
/// 3x3-summed Sobel structure tensor, at least quality * max score, greedily
/// thinned to min_distance, strongest first. `mask` (optional, one byte per
/// pixel) restricts candidates; every pixel the score depends on must be
/// valid.
std::vector<Point2> detect_corners(const Plane& image, const CornerOptions& options,
                                   const std::vector<std::uint8_t>* mask = nullptr);
std::vector<Point2> detect_corners(const Frame& frame, int max_n, double quality, double min_distance);

/// Coarse-to-fine iterative Lucas-Kanade. Points that leave the frame, land
/// on invalid pixels, have an ill-conditioned window or a residual above
/// max_error come back untracked.
FlowField track_lk(const Plane& prev, const Plane& next, const std::vector<Point2>& points,
                   const LkOptions& options = {});
FlowField track_lk(const Frame& prev, const Frame& next, const std::vector<Point2>& points, int levels = 3,
                   int window = 15);

/// RANSAC over two-point rigid hypotheses followed by a least-squares refit
/// on the inliers. Throws DegenerateFlow with fewer than 3 tracked points or
/// when no hypothesis reaches min_inlier_ratio.
RigidEstimate fit_rigid(const FlowField& flow, const RotationCenter& center, const RansacOptions& options = {});

/// detect_corners on prev (restricted to its valid region, eroded by the
/// tracking window) -> track_lk -> fit_rigid about the frame center. The
/// result maps prev content onto next.
RigidEstimate estimate_transform(const Frame& prev, const Frame& next, const MotionOptions& options = {});

}  // namespace vstab
