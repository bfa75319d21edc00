#include "vstab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "vstab/error.hpp"
#include "vstab/rng.hpp"

namespace vstab {

namespace {

constexpr std::size_t kMinStabilityLength = 16;
constexpr std::size_t kLowBins = 6;

}  // namespace

double psnr(const Frame& a, const Frame& b, bool masked) {
    if (!a.same_shape(b)) throw Error(ErrorCode::DimensionMismatch, "psnr: frames differ in shape");
    a.check();
    b.check();
    const int ch = a.channels;
    double sse = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < a.pixel_count(); ++i) {
        if (masked && (!a.valid[i] || !b.valid[i])) continue;
        for (int c = 0; c < ch; ++c) {
            const double d = static_cast<double>(a.pixels[i * ch + c]) - b.pixels[i * ch + c];
            sse += d * d;
        }
        count += static_cast<std::size_t>(ch);
    }
    if (count == 0) throw Error(ErrorCode::EmptyOverlap, "psnr: no jointly valid pixels");
    if (sse == 0.0) return kInfinitePsnr;
    const double mse = sse / static_cast<double>(count);
    return 10.0 * std::log10(255.0 * 255.0 / mse);
}

FidelityReport fidelity(const FrameSequence& seq, bool masked) {
    if (seq.size() < 2) throw Error(ErrorCode::TooShort, "fidelity needs at least 2 frames");
    FidelityReport r;
    double sum = 0.0;
    std::size_t finite = 0;
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
        const double v = psnr(seq[i], seq[i + 1], masked);
        r.psnr_db.push_back(v);
        if (std::isinf(v)) {
            ++r.infinite_count;
        } else {
            sum += v;
            ++finite;
        }
    }
    r.mean_db = finite == 0 ? kInfinitePsnr : sum / static_cast<double>(finite);
    return r;
}

CameraPath estimate_path(const FrameSequence& seq, std::uint64_t seed, const MotionOptions& options) {
    if (seq.size() < 2) throw Error(ErrorCode::TooShort, "camera path needs at least 2 frames");
    seq.check();
    const RotationCenter c = frame_center(seq[0].width, seq[0].height);
    CameraPath path;
    path.params.push_back({});
    AffineMatrix p = AffineMatrix::identity();
    for (std::size_t t = 1; t < seq.size(); ++t) {
        MotionOptions opt = options;
        opt.ransac.seed = mix_seed(seed, t);
        AffineMatrix h = AffineMatrix::identity();
        bool degenerate = false;
        try {
            h = params_to_matrix(estimate_transform(seq[t - 1], seq[t], opt).params, c);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::DegenerateFlow) throw;
            degenerate = true;
        }
        p = compose(h, p);
        path.params.push_back(matrix_to_params(p, c));
        path.degenerate.push_back(degenerate);
    }
    return path;
}

double dft_power(const std::vector<double>& signal, std::size_t k) {
    const std::size_t n = signal.size();
    double re = 0.0, im = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        // Reduce k*t mod n first so the angle stays accurate for long inputs.
        const double ang = -2.0 * std::numbers::pi * static_cast<double>((k * t) % n) / static_cast<double>(n);
        re += signal[t] * std::cos(ang);
        im += signal[t] * std::sin(ang);
    }
    return re * re + im * im;
}

double low_frequency_ratio(const std::vector<double>& signal, const StabilityOptions& options) {
    const std::size_t n = signal.size();
    if (n < kMinStabilityLength) {
        throw Error(ErrorCode::TooShort, "stability needs at least " + std::to_string(kMinStabilityLength) +
                                             " samples, got " + std::to_string(n));
    }
    double sum = 0.0;
    for (double v : signal) sum += v;
    const bool constant = std::all_of(signal.begin(), signal.end(), [&](double v) { return v == signal[0]; });
    if (constant && !(options.include_dc && signal[0] != 0.0)) return 1.0;

    // Bins 1..n-1 carry n * sum((x - mean)^2) (Parseval with the DC removed)
    // and pair up as |X_k| = |X_{n-k}|, so bins 1..floor(n/2) hold half of it
    // plus, for even n, half of the unpaired Nyquist bin.
    const double mean = sum / static_cast<double>(n);
    std::vector<double> centered(n);
    double ss = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        centered[t] = signal[t] - mean;
        ss += centered[t] * centered[t];
    }
    double denom = 0.5 * static_cast<double>(n) * ss;
    if (n % 2 == 0) denom += 0.5 * dft_power(centered, n / 2);
    double numer = 0.0;
    for (std::size_t k = 1; k <= kLowBins; ++k) numer += dft_power(centered, k);
    if (options.include_dc) denom += sum * sum;
    if (denom <= 0.0) return 1.0;
    return std::clamp(numer / denom, 0.0, 1.0);
}

StabilityReport stability(const CameraPath& path, const StabilityOptions& options) {
    const std::size_t n = path.params.size();
    std::array<std::vector<double>, 3> signals;
    for (const AffineParams& p : path.params) {
        signals[0].push_back(p.theta);
        signals[1].push_back(p.dx);
        signals[2].push_back(p.dy);
    }
    if (n < kMinStabilityLength) {
        throw Error(ErrorCode::TooShort, "stability needs at least " + std::to_string(kMinStabilityLength) + " frames");
    }
    StabilityReport r;
    for (std::size_t i = 0; i < 3; ++i) r.ratios[i] = low_frequency_ratio(signals[i], options);
    r.score = *std::min_element(r.ratios.begin(), r.ratios.end());
    return r;
}

StabilityReport stability(const FrameSequence& seq, const StabilityOptions& options, std::uint64_t seed) {
    if (seq.size() < kMinStabilityLength) {
        throw Error(ErrorCode::TooShort, "stability needs at least " + std::to_string(kMinStabilityLength) + " frames");
    }
    return stability(estimate_path(seq, seed), options);
}

}  // namespace vstab
