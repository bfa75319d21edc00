#include "vstab/motion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vstab/error.hpp"
#include "vstab/rng.hpp"

namespace vstab {

namespace {

// Sobel-based minimum-eigenvalue map. Pixels whose 5x5 support leaves the
// image or touches a masked-out pixel score 0.
Plane min_eigen_map(const Plane& img, const std::vector<std::uint8_t>* mask) {
    const int w = img.width;
    const int h = img.height;
    Plane gxx(w, h), gxy(w, h), gyy(w, h);
    for (int y = 1; y + 1 < h; ++y) {
        for (int x = 1; x + 1 < w; ++x) {
            const double gx = (img.at(x + 1, y - 1) + 2.0 * img.at(x + 1, y) + img.at(x + 1, y + 1)) -
                              (img.at(x - 1, y - 1) + 2.0 * img.at(x - 1, y) + img.at(x - 1, y + 1));
            const double gy = (img.at(x - 1, y + 1) + 2.0 * img.at(x, y + 1) + img.at(x + 1, y + 1)) -
                              (img.at(x - 1, y - 1) + 2.0 * img.at(x, y - 1) + img.at(x + 1, y - 1));
            gxx.at(x, y) = gx * gx;
            gxy.at(x, y) = gx * gy;
            gyy.at(x, y) = gy * gy;
        }
    }
    // Invalid count over 5x5 windows through a summed-area table.
    std::vector<int> bad_sat;
    if (mask != nullptr) {
        bad_sat.assign(static_cast<std::size_t>(w + 1) * (h + 1), 0);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const int bad = (*mask)[static_cast<std::size_t>(y) * w + x] ? 0 : 1;
                bad_sat[static_cast<std::size_t>(y + 1) * (w + 1) + x + 1] =
                    bad + bad_sat[static_cast<std::size_t>(y) * (w + 1) + x + 1] +
                    bad_sat[static_cast<std::size_t>(y + 1) * (w + 1) + x] -
                    bad_sat[static_cast<std::size_t>(y) * (w + 1) + x];
            }
        }
    }
    auto bad_in = [&](int x0, int y0, int x1, int y1) {
        const auto W = static_cast<std::size_t>(w + 1);
        return bad_sat[static_cast<std::size_t>(y1 + 1) * W + x1 + 1] - bad_sat[static_cast<std::size_t>(y0) * W + x1 + 1] -
               bad_sat[static_cast<std::size_t>(y1 + 1) * W + x0] + bad_sat[static_cast<std::size_t>(y0) * W + x0];
    };

    Plane score(w, h, 0.0);
    for (int y = 2; y + 2 < h; ++y) {
        for (int x = 2; x + 2 < w; ++x) {
            if (mask != nullptr && bad_in(x - 2, y - 2, x + 2, y + 2) > 0) continue;
            double a = 0.0, b = 0.0, c = 0.0;
            for (int v = -1; v <= 1; ++v) {
                for (int u = -1; u <= 1; ++u) {
                    a += gxx.at(x + u, y + v);
                    b += gxy.at(x + u, y + v);
                    c += gyy.at(x + u, y + v);
                }
            }
            const double half = 0.5 * (a - c);
            score.at(x, y) = std::max(0.0, 0.5 * (a + c) - std::sqrt(half * half + b * b));
        }
    }
    return score;
}

Plane downsample2(const Plane& src) {
    const int w = std::max(1, src.width / 2);
    const int h = std::max(1, src.height / 2);
    Plane out(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int x0 = std::min(2 * x, src.width - 1), x1 = std::min(2 * x + 1, src.width - 1);
            const int y0 = std::min(2 * y, src.height - 1), y1 = std::min(2 * y + 1, src.height - 1);
            out.at(x, y) = 0.25 * (src.at(x0, y0) + src.at(x1, y0) + src.at(x0, y1) + src.at(x1, y1));
            const auto vi = [&](int xx, int yy) { return src.valid[static_cast<std::size_t>(yy) * src.width + xx]; };
            out.valid[static_cast<std::size_t>(y) * w + x] =
                (vi(x0, y0) && vi(x1, y0) && vi(x0, y1) && vi(x1, y1)) ? 1 : 0;
        }
    }
    return out;
}

struct Level {
    Plane img;
    Plane gx;
    Plane gy;
};

Level make_level(Plane img) {
    Level L;
    const int w = img.width;
    const int h = img.height;
    L.gx = Plane(w, h);
    L.gy = Plane(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int xm = std::max(0, x - 1), xp = std::min(w - 1, x + 1);
            const int ym = std::max(0, y - 1), yp = std::min(h - 1, y + 1);
            L.gx.at(x, y) = (img.at(xp, y) - img.at(xm, y)) / std::max(1, xp - xm);
            L.gy.at(x, y) = (img.at(x, yp) - img.at(x, ym)) / std::max(1, yp - ym);
        }
    }
    L.img = std::move(img);
    return L;
}

std::vector<Level> pyramid(const Plane& base, int levels) {
    std::vector<Level> pyr;
    pyr.push_back(make_level(base));
    for (int l = 1; l < levels; ++l) {
        const Plane& prev = pyr.back().img;
        if (prev.width < 8 || prev.height < 8) break;
        pyr.push_back(make_level(downsample2(prev)));
    }
    return pyr;
}

// Bilinear sample with edge clamping.
double sample(const Plane& p, double x, double y) {
    x = std::clamp(x, 0.0, static_cast<double>(p.width - 1));
    y = std::clamp(y, 0.0, static_cast<double>(p.height - 1));
    const int x0 = std::min(static_cast<int>(x), p.width - 1);
    const int y0 = std::min(static_cast<int>(y), p.height - 1);
    const int x1 = std::min(x0 + 1, p.width - 1);
    const int y1 = std::min(y0 + 1, p.height - 1);
    const double fx = x - x0;
    const double fy = y - y0;
    return (1.0 - fy) * ((1.0 - fx) * p.at(x0, y0) + fx * p.at(x1, y0)) +
           fy * ((1.0 - fx) * p.at(x0, y1) + fx * p.at(x1, y1));
}

bool valid_at(const Plane& p, double x, double y) {
    if (x < 0.0 || y < 0.0 || x > p.width - 1 || y > p.height - 1) return false;
    const int x0 = static_cast<int>(x);
    const int y0 = static_cast<int>(y);
    const int x1 = std::min(x0 + 1, p.width - 1);
    const int y1 = std::min(y0 + 1, p.height - 1);
    const auto v = [&](int xx, int yy) { return p.valid[static_cast<std::size_t>(yy) * p.width + xx] != 0; };
    return v(x0, y0) && v(x1, y0) && v(x0, y1) && v(x1, y1);
}

struct Rigid {
    double cs = 1.0;
    double sn = 0.0;
    double tx = 0.0;
    double ty = 0.0;

    Point2 apply(Point2 p) const { return {cs * p.x + sn * p.y + tx, -sn * p.x + cs * p.y + ty}; }
};

// Least-squares rotation + translation mapping ps onto qs.
Rigid solve_rigid(const std::vector<Point2>& ps, const std::vector<Point2>& qs, const std::vector<std::size_t>& idx) {
    double pmx = 0.0, pmy = 0.0, qmx = 0.0, qmy = 0.0;
    for (std::size_t i : idx) {
        pmx += ps[i].x;
        pmy += ps[i].y;
        qmx += qs[i].x;
        qmy += qs[i].y;
    }
    const double n = static_cast<double>(idx.size());
    pmx /= n;
    pmy /= n;
    qmx /= n;
    qmy /= n;
    double A = 0.0, B = 0.0;
    for (std::size_t i : idx) {
        const double ux = ps[i].x - pmx, uy = ps[i].y - pmy;
        const double vx = qs[i].x - qmx, vy = qs[i].y - qmy;
        A += ux * vx + uy * vy;
        B += vx * uy - vy * ux;
    }
    Rigid r;
    const double theta = std::atan2(B, A);
    r.cs = std::cos(theta);
    r.sn = std::sin(theta);
    r.tx = qmx - (r.cs * pmx + r.sn * pmy);
    r.ty = qmy - (-r.sn * pmx + r.cs * pmy);
    return r;
}

double residual(const Rigid& r, Point2 p, Point2 q) {
    const Point2 m = r.apply(p);
    return std::hypot(m.x - q.x, m.y - q.y);
}

}  // namespace

std::size_t FlowField::tracked_count() const {
    return static_cast<std::size_t>(
        std::count_if(points.begin(), points.end(), [](const FlowPoint& p) { return p.tracked; }));
}

std::vector<Point2> detect_corners(const Plane& image, const CornerOptions& options,
                                   const std::vector<std::uint8_t>* mask) {
    if (mask != nullptr && mask->size() != image.size()) {
        throw Error(ErrorCode::DimensionMismatch, "detect_corners: mask size mismatch");
    }
    std::vector<Point2> out;
    if (image.width < 5 || image.height < 5 || options.max_corners <= 0) return out;
    const Plane score = min_eigen_map(image, mask);
    const double max_score = *std::max_element(score.data.begin(), score.data.end());
    if (max_score <= 0.0) return out;
    const double threshold = options.quality * max_score;

    struct Candidate {
        double score;
        int x;
        int y;
    };
    std::vector<Candidate> cands;
    const int w = image.width;
    const int h = image.height;
    for (int y = 1; y + 1 < h; ++y) {
        for (int x = 1; x + 1 < w; ++x) {
            const double s = score.at(x, y);
            if (s <= 0.0 || s < threshold) continue;
            bool is_max = true;
            for (int v = -1; v <= 1 && is_max; ++v) {
                for (int u = -1; u <= 1; ++u) {
                    if ((u != 0 || v != 0) && score.at(x + u, y + v) > s) {
                        is_max = false;
                        break;
                    }
                }
            }
            if (is_max) cands.push_back({s, x, y});
        }
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) { return a.score > b.score; });

    const double min_d2 = options.min_distance * options.min_distance;
    for (const Candidate& c : cands) {
        bool far_enough = true;
        for (const Point2& p : out) {
            const double ddx = p.x - c.x;
            const double ddy = p.y - c.y;
            if (ddx * ddx + ddy * ddy < min_d2) {
                far_enough = false;
                break;
            }
        }
        if (!far_enough) continue;
        out.push_back({static_cast<double>(c.x), static_cast<double>(c.y)});
        if (static_cast<int>(out.size()) >= options.max_corners) break;
    }
    return out;
}

std::vector<Point2> detect_corners(const Frame& frame, int max_n, double quality, double min_distance) {
    const Plane p = to_plane(frame);
    return detect_corners(p, CornerOptions{max_n, quality, min_distance}, &p.valid);
}

FlowField track_lk(const Plane& prev, const Plane& next, const std::vector<Point2>& points, const LkOptions& options) {
    if (prev.width != next.width || prev.height != next.height) {
        throw Error(ErrorCode::DimensionMismatch, "track_lk: frames differ in size");
    }
    if (options.levels < 1 || options.window < 3) {
        throw Error(ErrorCode::InvalidArgument, "track_lk: levels >= 1 and window >= 3 required");
    }
    const std::vector<Level> pp = pyramid(prev, options.levels);
    const std::vector<Level> np = pyramid(next, options.levels);
    const int top = static_cast<int>(pp.size()) - 1;
    const int r = options.window / 2;
    const auto win_n = static_cast<std::size_t>((2 * r + 1) * (2 * r + 1));

    FlowField flow;
    flow.points.reserve(points.size());
    std::vector<double> wi(win_n), wgx(win_n), wgy(win_n);

    for (const Point2& pt : points) {
        FlowPoint fp;
        fp.point = pt;
        if (!valid_at(prev, pt.x, pt.y)) {
            flow.points.push_back(fp);
            continue;
        }
        double gx = 0.0, gy = 0.0;
        bool lost = false;
        for (int L = top; L >= 0 && !lost; --L) {
            const double scale = 1.0 / static_cast<double>(1 << L);
            const Level& P = pp[static_cast<std::size_t>(L)];
            const Level& N = np[static_cast<std::size_t>(L)];
            const double px = pt.x * scale;
            const double py = pt.y * scale;

            double a = 0.0, b = 0.0, c = 0.0;
            std::size_t k = 0;
            for (int v = -r; v <= r; ++v) {
                for (int u = -r; u <= r; ++u, ++k) {
                    wi[k] = sample(P.img, px + u, py + v);
                    wgx[k] = sample(P.gx, px + u, py + v);
                    wgy[k] = sample(P.gy, px + u, py + v);
                    a += wgx[k] * wgx[k];
                    b += wgx[k] * wgy[k];
                    c += wgy[k] * wgy[k];
                }
            }
            const double half = 0.5 * (a - c);
            const double min_eig = 0.5 * (a + c) - std::sqrt(half * half + b * b);
            const double det = a * c - b * b;
            if (min_eig / static_cast<double>(win_n) < options.min_eigen || det <= 0.0) {
                lost = true;
                break;
            }
            double nx = 0.0, ny = 0.0;
            for (int it = 0; it < options.max_iterations; ++it) {
                const double qx = px + gx + nx;
                const double qy = py + gy + ny;
                if (qx < -r || qy < -r || qx > N.img.width - 1 + r || qy > N.img.height - 1 + r) {
                    lost = true;
                    break;
                }
                double bx = 0.0, by = 0.0;
                k = 0;
                for (int v = -r; v <= r; ++v) {
                    for (int u = -r; u <= r; ++u, ++k) {
                        const double diff = wi[k] - sample(N.img, qx + u, qy + v);
                        bx += diff * wgx[k];
                        by += diff * wgy[k];
                    }
                }
                const double ex = (c * bx - b * by) / det;
                const double ey = (a * by - b * bx) / det;
                nx += ex;
                ny += ey;
                if (ex * ex + ey * ey < options.epsilon * options.epsilon) break;
            }
            if (lost) break;
            if (L > 0) {
                gx = 2.0 * (gx + nx);
                gy = 2.0 * (gy + ny);
            } else {
                gx += nx;
                gy += ny;
            }
        }
        if (lost) {
            flow.points.push_back(fp);
            continue;
        }
        fp.displacement = {gx, gy};
        const double qx = pt.x + gx;
        const double qy = pt.y + gy;
        if (!valid_at(next, qx, qy)) {
            flow.points.push_back(fp);
            continue;
        }
        double err = 0.0;
        for (int v = -r; v <= r; ++v) {
            for (int u = -r; u <= r; ++u) {
                err += std::abs(sample(prev, pt.x + u, pt.y + v) - sample(next, qx + u, qy + v));
            }
        }
        fp.error = err / static_cast<double>(win_n);
        fp.tracked = fp.error <= options.max_error;
        flow.points.push_back(fp);
    }
    return flow;
}

FlowField track_lk(const Frame& prev, const Frame& next, const std::vector<Point2>& points, int levels, int window) {
    LkOptions o;
    o.levels = levels;
    o.window = window;
    return track_lk(to_plane(prev), to_plane(next), points, o);
}

RigidEstimate fit_rigid(const FlowField& flow, const RotationCenter& center, const RansacOptions& options) {
    std::vector<Point2> ps, qs;
    for (const FlowPoint& fp : flow.points) {
        if (!fp.tracked) continue;
        ps.push_back(fp.point);
        qs.push_back({fp.point.x + fp.displacement.x, fp.point.y + fp.displacement.y});
    }
    const std::size_t n = ps.size();
    if (n < 3) {
        throw Error(ErrorCode::DegenerateFlow, "need at least 3 tracked points, have " + std::to_string(n));
    }

    Rng rng(options.seed);
    const double thr = options.inlier_threshold;
    std::size_t best_count = 0;
    double best_err = 0.0;
    Rigid best;
    for (int it = 0; it < options.iterations; ++it) {
        const auto i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n - 1)));
        auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n - 2)));
        if (j >= i) ++j;
        if (std::hypot(ps[j].x - ps[i].x, ps[j].y - ps[i].y) < 1.0) continue;
        const Rigid h = solve_rigid(ps, qs, {i, j});
        std::size_t count = 0;
        double err = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            const double e = residual(h, ps[k], qs[k]);
            if (e < thr) {
                ++count;
                err += e;
            }
        }
        if (count > best_count || (count == best_count && err < best_err)) {
            best_count = count;
            best_err = err;
            best = h;
        }
    }
    if (static_cast<double>(best_count) < options.min_inlier_ratio * static_cast<double>(n)) {
        throw Error(ErrorCode::DegenerateFlow, "no rigid hypothesis reached the inlier ratio (" +
                                                   std::to_string(best_count) + "/" + std::to_string(n) + ")");
    }

    Rigid model = best;
    std::vector<std::size_t> inliers;
    for (int round = 0; round < 3; ++round) {
        std::vector<std::size_t> next_inliers;
        for (std::size_t k = 0; k < n; ++k) {
            if (residual(model, ps[k], qs[k]) < thr) next_inliers.push_back(k);
        }
        if (next_inliers.size() < 2) break;
        const bool same = next_inliers == inliers;
        inliers = std::move(next_inliers);
        model = solve_rigid(ps, qs, inliers);
        if (same) break;
    }
    if (inliers.size() < 2) {
        throw Error(ErrorCode::DegenerateFlow, "refit lost its inliers");
    }

    RigidEstimate est;
    const AffineMatrix m{model.cs, model.sn, model.tx, -model.sn, model.cs, model.ty};
    est.params = matrix_to_params(m, center);
    est.inliers = static_cast<int>(inliers.size());
    est.tracked = static_cast<int>(n);
    double sum = 0.0;
    for (std::size_t k : inliers) sum += residual(model, ps[k], qs[k]);
    est.mean_residual = sum / static_cast<double>(inliers.size());
    return est;
}

RigidEstimate estimate_transform(const Frame& prev, const Frame& next, const MotionOptions& options) {
    if (prev.width != next.width || prev.height != next.height) {
        throw Error(ErrorCode::DimensionMismatch, "estimate_transform: frames differ in size");
    }
    const Plane p = to_plane(prev);
    const Plane q = to_plane(next);

    // Keep the tracking window off the black border.
    const int margin = options.lk.window / 2 + 1;
    const int w = p.width;
    const int h = p.height;
    std::vector<int> sat(static_cast<std::size_t>(w + 1) * (h + 1), 0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            sat[static_cast<std::size_t>(y + 1) * (w + 1) + x + 1] =
                (p.valid[static_cast<std::size_t>(y) * w + x] ? 0 : 1) + sat[static_cast<std::size_t>(y) * (w + 1) + x + 1] +
                sat[static_cast<std::size_t>(y + 1) * (w + 1) + x] - sat[static_cast<std::size_t>(y) * (w + 1) + x];
        }
    }
    std::vector<std::uint8_t> mask(p.size(), 0);
    for (int y = margin; y + margin < h; ++y) {
        for (int x = margin; x + margin < w; ++x) {
            const int x0 = x - margin, y0 = y - margin, x1 = x + margin, y1 = y + margin;
            const auto W = static_cast<std::size_t>(w + 1);
            const int bad = sat[static_cast<std::size_t>(y1 + 1) * W + x1 + 1] - sat[static_cast<std::size_t>(y0) * W + x1 + 1] -
                            sat[static_cast<std::size_t>(y1 + 1) * W + x0] + sat[static_cast<std::size_t>(y0) * W + x0];
            mask[static_cast<std::size_t>(y) * w + x] = bad == 0 ? 1 : 0;
        }
    }

    const std::vector<Point2> corners = detect_corners(p, options.corners, &mask);
    if (corners.size() < 3) {
        throw Error(ErrorCode::DegenerateFlow, "too few corners (" + std::to_string(corners.size()) + ")");
    }
    const FlowField flow = track_lk(p, q, corners, options.lk);
    return fit_rigid(flow, frame_center(w, h), options.ransac);
}

}  // namespace vstab
