#include "vstab/affine.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "vstab/error.hpp"

namespace vstab {

namespace {

// Sample positions this close to an integer are treated as exact so that
// integer translations and the identity resample without blending.
constexpr double kSnap = 1e-9;

double snap(double v) {
    const double r = std::round(v);
    return std::abs(v - r) < kSnap ? r : v;
}

}  // namespace

RotationCenter frame_center(int width, int height) {
    return {width / 2.0, height / 2.0};
}

double wrap_angle(double theta) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    double t = std::remainder(theta, two_pi);
    if (t <= -std::numbers::pi) {
        t += two_pi;
    }
    return t;
}

double degrees(double radians) { return radians * (180.0 / std::numbers::pi); }
double radians(double degrees) { return degrees * (std::numbers::pi / 180.0); }

AffineMatrix params_to_matrix(const AffineParams& p, const RotationCenter& center) {
    const double cs = std::cos(p.theta);
    const double sn = std::sin(p.theta);
    const double xb = center.rx - p.dx;
    const double yb = center.ry - p.dy;
    AffineMatrix m;
    m.a = cs;
    m.b = sn;
    m.c = xb * (1.0 - cs) - yb * sn + p.dx;
    m.d = -sn;
    m.e = cs;
    m.f = xb * sn + yb * (1.0 - cs) + p.dy;
    return m;
}

AffineParams matrix_to_params(const AffineMatrix& m, const RotationCenter& center, double tolerance) {
    const double det = m.determinant();
    if (std::abs(m.a - m.e) > tolerance || std::abs(m.b + m.d) > tolerance ||
        std::abs(det - 1.0) > tolerance) {
        throw Error(ErrorCode::NotRigid, "linear part is not a pure rotation");
    }
    const double ca = 0.5 * (m.a + m.e);
    const double sa = 0.5 * (m.b - m.d);
    const double theta = wrap_angle(std::atan2(sa, ca));
    const double norm = std::hypot(ca, sa);
    const double cs = ca / norm;
    const double sn = sa / norm;
    // c = rx(1-cos) - ry sin + dx cos + dy sin
    // f = rx sin + ry(1-cos) - dx sin + dy cos
    const double u = m.c - center.rx * (1.0 - cs) + center.ry * sn;
    const double v = m.f - center.rx * sn - center.ry * (1.0 - cs);
    return {theta, cs * u - sn * v, sn * u + cs * v};
}

AffineMatrix compose(const AffineMatrix& a, const AffineMatrix& b) {
    AffineMatrix r;
    r.a = a.a * b.a + a.b * b.d;
    r.b = a.a * b.b + a.b * b.e;
    r.c = a.a * b.c + a.b * b.f + a.c;
    r.d = a.d * b.a + a.e * b.d;
    r.e = a.d * b.b + a.e * b.e;
    r.f = a.d * b.c + a.e * b.f + a.f;
    return r;
}

AffineMatrix inverse(const AffineMatrix& m) {
    const double det = m.determinant();
    if (std::abs(det) <= 1e-12) {
        throw Error(ErrorCode::Singular, "affine matrix is not invertible");
    }
    AffineMatrix r;
    r.a = m.e / det;
    r.b = -m.b / det;
    r.d = -m.d / det;
    r.e = m.a / det;
    r.c = -(r.a * m.c + r.b * m.f);
    r.f = -(r.d * m.c + r.e * m.f);
    return r;
}

Frame warp(const Frame& frame, const AffineMatrix& m) {
    if (frame.empty()) {
        throw Error(ErrorCode::InvalidArgument, "warp: empty frame");
    }
    frame.check();
    const AffineMatrix inv = inverse(m);
    const int w = frame.width;
    const int h = frame.height;
    const int ch = frame.channels;

    Frame out = Frame::filled(w, h, ch, 0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const Point2 src = inv.apply({static_cast<double>(x), static_cast<double>(y)});
            const double sx = snap(src.x);
            const double sy = snap(src.y);
            const double fx0 = std::floor(sx);
            const double fy0 = std::floor(sy);
            const double fx = sx - fx0;
            const double fy = sy - fy0;
            const std::size_t out_idx = static_cast<std::size_t>(y) * w + x;

            // Reject coordinates far outside before converting to int.
            if (fx0 < -1.0 || fy0 < -1.0 || fx0 > w || fy0 > h) {
                out.valid[out_idx] = 0;
                continue;
            }
            const int x0 = static_cast<int>(fx0);
            const int y0 = static_cast<int>(fy0);
            const double wts[4] = {(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy};
            const int tx[4] = {x0, x0 + 1, x0, x0 + 1};
            const int ty[4] = {y0, y0, y0 + 1, y0 + 1};

            bool ok = true;
            for (int k = 0; k < 4 && ok; ++k) {
                if (wts[k] <= 0.0) {
                    continue;
                }
                if (tx[k] < 0 || ty[k] < 0 || tx[k] >= w || ty[k] >= h || !frame.is_valid(tx[k], ty[k])) {
                    ok = false;
                }
            }
            if (!ok) {
                out.valid[out_idx] = 0;
                continue;
            }
            for (int c = 0; c < ch; ++c) {
                double acc = 0.0;
                for (int k = 0; k < 4; ++k) {
                    if (wts[k] > 0.0) {
                        acc += wts[k] * frame.at(tx[k], ty[k], c);
                    }
                }
                out.pixels[out_idx * ch + c] =
                    static_cast<std::uint8_t>(std::clamp(std::floor(acc + 0.5), 0.0, 255.0));
            }
        }
    }
    return out;
}

AffineParams rescale_params(const AffineParams& p, Resolution from, Resolution to) {
    if (from.width <= 0 || from.height <= 0 || to.width <= 0 || to.height <= 0) {
        throw Error(ErrorCode::InvalidArgument, "rescale_params: resolutions must be positive");
    }
    return {p.theta, p.dx * to.width / from.width, p.dy * to.height / from.height};
}

}  // namespace vstab
