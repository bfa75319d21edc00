#include "vstab/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "vstab/error.hpp"
#include "vstab/frameio.hpp"
#include "vstab/rng.hpp"

namespace fs = std::filesystem;

namespace vstab {

namespace {

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double truncated_normal(Rng& rng, double sigma) {
    if (sigma <= 0.0) {
        return 0.0;
    }
    for (;;) {
        const double z = rng.normal();
        if (std::abs(z) <= 3.0) {
            return sigma * z;
        }
    }
}

double parse_double(const std::string& s, const std::string& what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw Error(ErrorCode::CorruptImage, "trace: cannot parse " + what + " from '" + s + "'");
    }
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) out.push_back(cur);
    return out;
}

Resolution parse_resolution(const std::string& s) {
    const auto x = s.find('x');
    if (x == std::string::npos) {
        throw Error(ErrorCode::CorruptImage, "trace: bad resolution '" + s + "'");
    }
    return {static_cast<int>(parse_double(s.substr(0, x), "width")),
            static_cast<int>(parse_double(s.substr(x + 1), "height"))};
}

void check_lengths(const FrameSequence& seq, const JitterTrace& trace) {
    seq.check();
    if (seq.size() != trace.size()) {
        throw Error(ErrorCode::DimensionMismatch, "trace length " + std::to_string(trace.size()) +
                                                      " differs from sequence length " + std::to_string(seq.size()));
    }
}

}  // namespace

std::string to_string(Split split) { return split == Split::Train ? "train" : "validation"; }

AffineParams IntensityProfile::bound(Resolution res) const {
    return rescale_params({3.0 * sigma_theta, 3.0 * sigma_dx, 3.0 * sigma_dy}, reference, res);
}

void IntensityProfile::check() const {
    if (sigma_theta < 0.0 || sigma_dx < 0.0 || sigma_dy < 0.0 || interval_min < 1 || interval_max < interval_min ||
        reference.width < 1 || reference.height < 1) {
        throw Error(ErrorCode::InvalidArgument, "invalid intensity profile '" + name + "'");
    }
}

IntensityProfile IntensityProfile::small() { return {"small", radians(0.3), 3.0, 3.0, 4, 6, {1280, 720}}; }
IntensityProfile IntensityProfile::medium() { return {"medium", radians(0.8), 8.0, 8.0, 4, 6, {1280, 720}}; }
IntensityProfile IntensityProfile::large() { return {"large", radians(1.5), 15.0, 15.0, 4, 6, {1280, 720}}; }

IntensityProfile IntensityProfile::named(const std::string& name) {
    if (name == "small") return small();
    if (name == "medium") return medium();
    if (name == "large") return large();
    throw Error(ErrorCode::InvalidArgument, "unknown intensity profile '" + name + "'");
}

AffineParams JitterTrace::params_at(std::size_t i, Resolution res) const {
    const AffineParams& p = params.at(i);
    return res == resolution ? p : rescale_params(p, resolution, res);
}

RotationCenter JitterTrace::center_at(Resolution res) const {
    if (res == resolution) return center;
    return {center.rx * res.width / resolution.width, center.ry * res.height / resolution.height};
}

std::vector<AffineParams> interpolate_keyframes(const std::vector<Keyframe>& keys, int n_frames) {
    if (keys.empty() || keys.front().index != 0 || n_frames < 1) {
        throw Error(ErrorCode::InvalidArgument, "interpolate_keyframes: need a keyframe at 0 and n_frames >= 1");
    }
    for (std::size_t k = 1; k < keys.size(); ++k) {
        if (keys[k].index <= keys[k - 1].index) {
            throw Error(ErrorCode::InvalidArgument, "interpolate_keyframes: indices must increase");
        }
    }
    std::vector<AffineParams> out(static_cast<std::size_t>(n_frames));
    std::size_t seg = 0;
    for (int i = 0; i < n_frames; ++i) {
        while (seg + 1 < keys.size() && keys[seg + 1].index <= i) ++seg;
        const Keyframe& a = keys[seg];
        if (seg + 1 == keys.size()) {
            out[static_cast<std::size_t>(i)] = a.value;
            continue;
        }
        const Keyframe& b = keys[seg + 1];
        const double t = static_cast<double>(i - a.index) / (b.index - a.index);
        out[static_cast<std::size_t>(i)] = {a.value.theta + (b.value.theta - a.value.theta) * t,
                                            a.value.dx + (b.value.dx - a.value.dx) * t,
                                            a.value.dy + (b.value.dy - a.value.dy) * t};
    }
    return out;
}

JitterTrace generate_trace(int n_frames, const IntensityProfile& profile, std::uint64_t seed, Resolution resolution) {
    if (n_frames < 1) {
        throw Error(ErrorCode::InvalidArgument, "generate_trace: n_frames must be >= 1");
    }
    profile.check();
    Rng rng(seed);
    std::vector<Keyframe> keys;
    int index = 0;
    // Draw order per keyframe: theta, dx, dy, then the gap to the next one.
    for (;;) {
        AffineParams v;
        v.theta = truncated_normal(rng, profile.sigma_theta);
        v.dx = truncated_normal(rng, profile.sigma_dx);
        v.dy = truncated_normal(rng, profile.sigma_dy);
        keys.push_back({index, rescale_params(v, profile.reference, resolution)});
        if (index >= n_frames - 1) break;
        index += static_cast<int>(rng.uniform_int(profile.interval_min, profile.interval_max));
    }
    JitterTrace trace;
    trace.params = interpolate_keyframes(keys, n_frames);
    trace.resolution = resolution;
    trace.center = frame_center(resolution);
    trace.profile = profile;
    trace.seed = seed;
    return trace;
}

FrameSequence apply_jitter(const FrameSequence& stable, const JitterTrace& trace) {
    check_lengths(stable, trace);
    const Resolution res{stable[0].width, stable[0].height};
    const RotationCenter c = trace.center_at(res);
    FrameSequence out;
    out.fps = stable.fps;
    out.frames.reserve(stable.size());
    for (std::size_t i = 0; i < stable.size(); ++i) {
        out.frames.push_back(warp(stable[i], params_to_matrix(trace.params_at(i, res), c)));
    }
    return out;
}

FrameSequence ground_truth_stabilize(const FrameSequence& unstable, const JitterTrace& trace) {
    check_lengths(unstable, trace);
    const Resolution res{unstable[0].width, unstable[0].height};
    const RotationCenter c = trace.center_at(res);
    FrameSequence out;
    out.fps = unstable.fps;
    out.frames.reserve(unstable.size());
    for (std::size_t i = 0; i < unstable.size(); ++i) {
        out.frames.push_back(warp(unstable[i], inverse(params_to_matrix(trace.params_at(i, res), c))));
    }
    return out;
}

void write_trace(const JitterTrace& trace, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error(ErrorCode::IoFailure, "cannot write trace " + path.string());
    }
    const IntensityProfile& p = trace.profile;
    out << "# seed=" << trace.seed << "\n"
        << "# profile=" << p.name << "\n"
        << "# sigma=" << fmt17(degrees(p.sigma_theta)) << "," << fmt17(p.sigma_dx) << "," << fmt17(p.sigma_dy) << "\n"
        << "# interval=" << p.interval_min << "," << p.interval_max << "\n"
        << "# reference=" << p.reference.width << "x" << p.reference.height << "\n"
        << "# center=" << fmt17(trace.center.rx) << "," << fmt17(trace.center.ry) << "\n"
        << "# resolution=" << trace.resolution.width << "x" << trace.resolution.height << "\n"
        << "frame,theta_deg,dx,dy\n";
    for (std::size_t i = 0; i < trace.params.size(); ++i) {
        const AffineParams& q = trace.params[i];
        out << i << "," << fmt17(degrees(q.theta)) << "," << fmt17(q.dx) << "," << fmt17(q.dy) << "\n";
    }
    if (!out) {
        throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
    }
}

JitterTrace read_trace(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::IoFailure, "cannot open trace " + path.string());
    }
    JitterTrace trace;
    bool have_center = false;
    bool header_seen = false;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            std::string key = line.substr(1, eq - 1);
            key.erase(std::remove(key.begin(), key.end(), ' '), key.end());
            const std::string value = line.substr(eq + 1);
            if (key == "seed") {
                trace.seed = std::stoull(value);
            } else if (key == "profile") {
                trace.profile.name = value;
            } else if (key == "sigma") {
                const auto f = split(value, ',');
                if (f.size() != 3) throw Error(ErrorCode::CorruptImage, "trace: bad sigma line");
                trace.profile.sigma_theta = radians(parse_double(f[0], "sigma"));
                trace.profile.sigma_dx = parse_double(f[1], "sigma");
                trace.profile.sigma_dy = parse_double(f[2], "sigma");
            } else if (key == "interval") {
                const auto f = split(value, ',');
                if (f.size() != 2) throw Error(ErrorCode::CorruptImage, "trace: bad interval line");
                trace.profile.interval_min = static_cast<int>(parse_double(f[0], "interval"));
                trace.profile.interval_max = static_cast<int>(parse_double(f[1], "interval"));
            } else if (key == "reference") {
                trace.profile.reference = parse_resolution(value);
            } else if (key == "center") {
                const auto f = split(value, ',');
                if (f.size() != 2) throw Error(ErrorCode::CorruptImage, "trace: bad center line");
                trace.center = {parse_double(f[0], "center"), parse_double(f[1], "center")};
                have_center = true;
            } else if (key == "resolution") {
                trace.resolution = parse_resolution(value);
            }
            continue;
        }
        if (!header_seen) {
            if (line != "frame,theta_deg,dx,dy") {
                throw Error(ErrorCode::CorruptImage, "trace: unexpected header '" + line + "'");
            }
            header_seen = true;
            continue;
        }
        const auto f = split(line, ',');
        if (f.size() != 4) {
            throw Error(ErrorCode::CorruptImage, "trace: malformed row '" + line + "'");
        }
        if (static_cast<std::size_t>(parse_double(f[0], "frame")) != trace.params.size()) {
            throw Error(ErrorCode::CorruptImage, "trace: rows out of order at '" + line + "'");
        }
        trace.params.push_back(
            {radians(parse_double(f[1], "theta")), parse_double(f[2], "dx"), parse_double(f[3], "dy")});
    }
    if (!header_seen || trace.params.empty()) {
        throw Error(ErrorCode::CorruptImage, "trace: no rows in " + path.string());
    }
    if (!have_center) {
        trace.center = frame_center(trace.resolution);
    }
    return trace;
}

CorpusManifest synthesize_corpus(const std::vector<fs::path>& stable_manifests,
                                 const std::vector<IntensityProfile>& profiles, std::uint64_t seed,
                                 const fs::path& out_dir, const CorpusOptions& options) {
    if (stable_manifests.empty() || profiles.empty()) {
        throw Error(ErrorCode::InvalidArgument, "synthesize_corpus: need at least one sequence and one profile");
    }
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) {
        throw Error(ErrorCode::IoFailure, "cannot create " + out_dir.string() + ": " + ec.message());
    }

    CorpusManifest corpus;
    corpus.root = out_dir;
    std::size_t item = 0;
    for (const fs::path& manifest : stable_manifests) {
        const FrameSequence stable = load_sequence(manifest);
        const Resolution res{stable[0].width, stable[0].height};
        for (const IntensityProfile& profile : profiles) {
            CorpusEntry entry;
            char name[32];
            std::snprintf(name, sizeof name, "item_%04zu", item);
            entry.name = name;
            entry.source = manifest.string();
            entry.profile = profile.name;
            entry.seed = mix_seed(seed, item);

            const JitterTrace generated =
                generate_trace(static_cast<int>(stable.size()), profile, entry.seed, res);
            fs::create_directories(out_dir / entry.name, ec);
            if (ec) {
                throw Error(ErrorCode::IoFailure, "cannot create item directory: " + ec.message());
            }
            write_trace(generated, corpus.trace_path(entry));
            const JitterTrace trace = read_trace(corpus.trace_path(entry));

            const FrameSequence unstable = apply_jitter(stable, trace);
            save_sequence(unstable, corpus.unstable_dir(entry));
            save_sequence(ground_truth_stabilize(unstable, trace), corpus.stable_dir(entry));
            corpus.entries.push_back(std::move(entry));
            ++item;
        }
    }

    // Validation items: the first round(n * fraction) of a seeded permutation.
    const std::size_t n = corpus.entries.size();
    const auto n_val = static_cast<std::size_t>(
        std::llround(std::clamp(options.validation_fraction, 0.0, 1.0) * static_cast<double>(n)));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(mix_seed(seed, 0xC0FFEEULL));
    for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)));
        std::swap(order[i - 1], order[j]);
    }
    for (std::size_t k = 0; k < n_val; ++k) corpus.entries[order[k]].split = Split::Validation;

    std::ofstream out(out_dir / kCorpusManifestName, std::ios::binary);
    if (!out) {
        throw Error(ErrorCode::IoFailure, "cannot write corpus manifest");
    }
    out << "item,source,profile,split,seed\n";
    for (const CorpusEntry& e : corpus.entries) {
        out << e.name << "," << e.source << "," << e.profile << "," << to_string(e.split) << "," << e.seed << "\n";
    }
    if (!out) {
        throw Error(ErrorCode::IoFailure, "write failed for corpus manifest");
    }
    return corpus;
}

CorpusManifest read_corpus(const fs::path& corpus_dir) {
    const fs::path path = corpus_dir / kCorpusManifestName;
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::IoFailure, "cannot open corpus manifest " + path.string());
    }
    CorpusManifest corpus;
    corpus.root = corpus_dir;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto f = split(line, ',');
        if (f.size() != 5) {
            throw Error(ErrorCode::CorruptImage, "corpus manifest: malformed row '" + line + "'");
        }
        CorpusEntry e;
        e.name = f[0];
        e.source = f[1];
        e.profile = f[2];
        e.split = f[3] == "validation" ? Split::Validation : Split::Train;
        e.seed = std::stoull(f[4]);
        corpus.entries.push_back(std::move(e));
    }
    return corpus;
}

}  // namespace vstab
