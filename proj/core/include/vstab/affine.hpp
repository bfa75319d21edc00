#pragma once

#include "vstab/frame.hpp"

namespace vstab {

/// Rigid camera motion as (rotation, translation). Angles are radians in
/// memory; only trace and log files use degrees.
struct AffineParams {
    double theta = 0.0;
    double dx = 0.0;
    double dy = 0.0;

    friend bool operator==(const AffineParams&, const AffineParams&) = default;
};

struct RotationCenter {
    double rx = 0.0;
    double ry = 0.0;
};

struct Resolution {
    int width = 0;
    int height = 0;

    friend bool operator==(const Resolution&, const Resolution&) = default;
};

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

/// 2x3 matrix [a b c; d e f] acting on column vectors (x, y, 1).
struct AffineMatrix {
    double a = 1.0, b = 0.0, c = 0.0;
    double d = 0.0, e = 1.0, f = 0.0;

    static AffineMatrix identity() { return {}; }
    static AffineMatrix translation(double tx, double ty) { return {1.0, 0.0, tx, 0.0, 1.0, ty}; }

    Point2 apply(Point2 p) const { return {a * p.x + b * p.y + c, d * p.x + e * p.y + f}; }
    double determinant() const { return a * e - b * d; }
};

/// Center of a w x h frame, (w/2, h/2); (640, 360) at 1280x720.
RotationCenter frame_center(int width, int height);
inline RotationCenter frame_center(Resolution r) { return frame_center(r.width, r.height); }

/// Maps an angle into (-pi, pi].
double wrap_angle(double theta);

double degrees(double radians);
double radians(double degrees);

/// Builds the jitter matrix
///   [ cos  sin  xb(1-cos) - yb sin + dx ]
///   [-sin  cos  xb sin + yb(1-cos) + dy ]
/// with xb = rx - dx, yb = ry - dy.
AffineMatrix params_to_matrix(const AffineParams& p, const RotationCenter& center);

/// Inverse of params_to_matrix. Throws NotRigid when the linear part is not a
/// rotation within `tolerance` per entry.
AffineParams matrix_to_params(const AffineMatrix& m, const RotationCenter& center,
                              double tolerance = 1e-6);

/// compose(a, b)(x) == a(b(x)).
AffineMatrix compose(const AffineMatrix& a, const AffineMatrix& b);

/// Throws Singular when |det| <= 1e-12.
AffineMatrix inverse(const AffineMatrix& m);

/// Resamples `frame` so that source content at x lands at m(x). Bilinear on
/// the inverse mapping; any output pixel whose non-zero-weight taps touch an
/// out-of-bounds or invalid source pixel is set to 0 and marked invalid.
Frame warp(const Frame& frame, const AffineMatrix& m);

/// Re-expresses parameters on a resized coordinate grid: theta unchanged,
/// dx and dy scaled per axis.
AffineParams rescale_params(const AffineParams& p, Resolution from, Resolution to);

}  // namespace vstab
