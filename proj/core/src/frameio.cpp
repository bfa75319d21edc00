#include "vstab/frameio.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "vstab/error.hpp"

namespace fs = std::filesystem;

namespace vstab {

namespace {

struct Tap {
    int index;
    double weight;
};

// Footprint of output pixel o on the source axis: [o*scale, (o+1)*scale).
std::vector<std::vector<Tap>> area_taps(int src, int dst) {
    std::vector<std::vector<Tap>> taps(static_cast<std::size_t>(dst));
    const double scale = static_cast<double>(src) / dst;
    for (int o = 0; o < dst; ++o) {
        const double lo = o * scale;
        const double hi = std::min<double>((o + 1) * scale, src);
        const int first = static_cast<int>(std::floor(lo));
        const int last = std::min(src - 1, static_cast<int>(std::ceil(hi)) - 1);
        for (int s = first; s <= last; ++s) {
            const double w = std::min<double>(s + 1, hi) - std::max<double>(s, lo);
            if (w > 0.0) {
                taps[static_cast<std::size_t>(o)].push_back({s, w});
            }
        }
    }
    return taps;
}

std::string trim(const std::string& s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

int parse_int(const std::map<std::string, std::string>& kv, const std::string& key) {
    const auto it = kv.find(key);
    if (it == kv.end()) {
        throw Error(ErrorCode::CorruptImage, "manifest missing key '" + key + "'");
    }
    try {
        std::size_t used = 0;
        const int v = std::stoi(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument(key);
        return v;
    } catch (const std::exception&) {
        throw Error(ErrorCode::CorruptImage, "manifest key '" + key + "' is not an integer");
    }
}

// Reads one header token, skipping whitespace and '#' comments.
std::string header_token(std::istream& in) {
    std::string tok;
    int ch = 0;
    for (;;) {
        ch = in.get();
        if (ch == EOF) return tok;
        if (ch == '#') {
            while (ch != EOF && ch != '\n' && ch != '\r') ch = in.get();
            continue;
        }
        if (!std::isspace(ch)) break;
    }
    while (ch != EOF && !std::isspace(ch) && ch != '#') {
        tok.push_back(static_cast<char>(ch));
        ch = in.get();
    }
    if (ch == '#') in.unget();
    return tok;
}

}  // namespace

std::string format_index(const std::string& pattern, int index) {
    const auto pos = pattern.find('%');
    if (pos == std::string::npos) {
        throw Error(ErrorCode::InvalidArgument, "frame pattern has no %d conversion: " + pattern);
    }
    std::size_t end = pos + 1;
    int width = 0;
    bool zero = false;
    if (end < pattern.size() && pattern[end] == '0') {
        zero = true;
        ++end;
    }
    while (end < pattern.size() && std::isdigit(static_cast<unsigned char>(pattern[end]))) {
        width = width * 10 + (pattern[end] - '0');
        ++end;
    }
    if (end >= pattern.size() || pattern[end] != 'd') {
        throw Error(ErrorCode::InvalidArgument, "unsupported frame pattern: " + pattern);
    }
    std::string digits = std::to_string(index);
    if (static_cast<int>(digits.size()) < width) {
        digits.insert(0, static_cast<std::size_t>(width) - digits.size(), zero ? '0' : ' ');
    }
    return pattern.substr(0, pos) + digits + pattern.substr(end + 1);
}

fs::path SequenceManifest::frame_path(int index) const {
    return directory / format_index(pattern, index);
}

SequenceManifest read_manifest(const fs::path& manifest_path) {
    fs::path path = manifest_path;
    if (fs::is_directory(path)) {
        path /= kManifestName;
    }
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::IoFailure, "cannot open manifest " + path.string());
    }
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw Error(ErrorCode::CorruptImage, "manifest line without '=': " + line);
        }
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    SequenceManifest m;
    m.directory = path.parent_path();
    if (auto it = kv.find("pattern"); it != kv.end()) m.pattern = it->second;
    m.count = parse_int(kv, "count");
    m.width = parse_int(kv, "width");
    m.height = parse_int(kv, "height");
    m.channels = parse_int(kv, "channels");
    if (auto it = kv.find("fps"); it != kv.end()) {
        try {
            m.fps = std::stod(it->second);
        } catch (const std::exception&) {
            throw Error(ErrorCode::CorruptImage, "manifest fps is not a number");
        }
    }
    if (m.count < 1 || m.width < 1 || m.height < 1 || (m.channels != 1 && m.channels != 3)) {
        throw Error(ErrorCode::CorruptImage, "manifest has out-of-range values: " + path.string());
    }
    return m;
}

void write_manifest(const SequenceManifest& m, const fs::path& manifest_path) {
    std::ofstream out(manifest_path, std::ios::binary);
    if (!out) {
        throw Error(ErrorCode::IoFailure, "cannot write manifest " + manifest_path.string());
    }
    std::ostringstream fps;
    fps.precision(17);
    fps << m.fps;
    out << "pattern=" << m.pattern << "\n"
        << "count=" << m.count << "\n"
        << "width=" << m.width << "\n"
        << "height=" << m.height << "\n"
        << "channels=" << m.channels << "\n"
        << "fps=" << fps.str() << "\n";
    if (!out) {
        throw Error(ErrorCode::IoFailure, "write failed for " + manifest_path.string());
    }
}

Frame read_pnm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::MissingFrame, "cannot open " + path.string());
    }
    const std::string magic = header_token(in);
    int channels = 0;
    if (magic == "P5") {
        channels = 1;
    } else if (magic == "P6") {
        channels = 3;
    } else {
        throw Error(ErrorCode::CorruptImage, path.string() + ": not a binary PGM/PPM");
    }
    int values[3] = {0, 0, 0};
    for (int& v : values) {
        const std::string tok = header_token(in);
        if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
            throw Error(ErrorCode::CorruptImage, path.string() + ": malformed header");
        }
        v = std::stoi(tok);
    }
    const auto [width, height, maxval] = values;
    if (width < 1 || height < 1 || maxval != 255) {
        throw Error(ErrorCode::CorruptImage, path.string() + ": unsupported dimensions or maxval");
    }
    // header_token consumed exactly one whitespace byte after maxval.
    Frame f;
    f.width = width;
    f.height = height;
    f.channels = channels;
    f.pixels.resize(f.pixel_count() * static_cast<std::size_t>(channels));
    in.read(reinterpret_cast<char*>(f.pixels.data()), static_cast<std::streamsize>(f.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(f.pixels.size())) {
        throw Error(ErrorCode::CorruptImage, path.string() + ": truncated pixel data");
    }
    f.valid.assign(f.pixel_count(), 1);
    return f;
}

void write_pnm(const Frame& frame, const fs::path& path) {
    frame.check();
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
    }
    out << (frame.channels == 3 ? "P6" : "P5") << "\n" << frame.width << " " << frame.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(frame.pixels.data()), static_cast<std::streamsize>(frame.pixels.size()));
    if (!out) {
        throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
    }
}

FrameSequence load_sequence(const fs::path& manifest_path) {
    const SequenceManifest m = read_manifest(manifest_path);
    FrameSequence seq;
    seq.fps = m.fps;
    seq.frames.reserve(static_cast<std::size_t>(m.count));
    for (int i = 0; i < m.count; ++i) {
        const fs::path p = m.frame_path(i);
        if (!fs::exists(p)) {
            throw Error(ErrorCode::MissingFrame, "frame index " + std::to_string(i) + " missing (" + p.string() + ")");
        }
        Frame f = read_pnm(p);
        if (f.width != m.width || f.height != m.height || f.channels != m.channels) {
            throw Error(ErrorCode::DimensionMismatch,
                        "frame index " + std::to_string(i) + " does not match manifest dimensions");
        }
        seq.frames.push_back(std::move(f));
    }
    return seq;
}

SequenceManifest save_sequence(const FrameSequence& seq, const fs::path& directory) {
    seq.check();
    std::error_code ec;
    fs::create_directories(directory, ec);
    if (ec) {
        throw Error(ErrorCode::IoFailure, "cannot create " + directory.string() + ": " + ec.message());
    }
    const Frame& first = seq.frames.front();
    SequenceManifest m;
    m.directory = directory;
    m.pattern = first.channels == 3 ? "frame_%06d.ppm" : "frame_%06d.pgm";
    m.count = static_cast<int>(seq.size());
    m.width = first.width;
    m.height = first.height;
    m.channels = first.channels;
    m.fps = seq.fps;
    for (int i = 0; i < m.count; ++i) {
        write_pnm(seq.frames[static_cast<std::size_t>(i)], m.frame_path(i));
    }
    write_manifest(m, directory / kManifestName);
    return m;
}

Frame resize_area(const Frame& frame, int width, int height) {
    if (width < 1 || height < 1) {
        throw Error(ErrorCode::InvalidArgument, "resize_area: target must be at least 1x1");
    }
    frame.check();
    if (width == frame.width && height == frame.height) {
        return frame;
    }
    const int ch = frame.channels;
    const auto xt = area_taps(frame.width, width);
    const auto yt = area_taps(frame.height, height);

    // Horizontal pass into doubles, tracking invalid coverage.
    const std::size_t row_len = static_cast<std::size_t>(width) * ch;
    std::vector<double> tmp(static_cast<std::size_t>(frame.height) * row_len, 0.0);
    std::vector<std::uint8_t> tmp_bad(static_cast<std::size_t>(frame.height) * width, 0);
    std::vector<double> xsum(static_cast<std::size_t>(width), 0.0);
    for (int ox = 0; ox < width; ++ox) {
        for (const Tap& t : xt[static_cast<std::size_t>(ox)]) xsum[static_cast<std::size_t>(ox)] += t.weight;
    }
    for (int y = 0; y < frame.height; ++y) {
        const std::uint8_t* px = frame.pixels.data() + static_cast<std::size_t>(y) * frame.width * ch;
        const std::uint8_t* vm = frame.valid.data() + static_cast<std::size_t>(y) * frame.width;
        double* trow = tmp.data() + static_cast<std::size_t>(y) * row_len;
        std::uint8_t* brow = tmp_bad.data() + static_cast<std::size_t>(y) * width;
        for (int ox = 0; ox < width; ++ox) {
            for (const Tap& t : xt[static_cast<std::size_t>(ox)]) {
                if (vm[t.index] == 0) brow[ox] = 1;
                for (int c = 0; c < ch; ++c) {
                    trow[static_cast<std::size_t>(ox) * ch + c] += t.weight * px[static_cast<std::size_t>(t.index) * ch + c];
                }
            }
        }
    }

    Frame out = Frame::filled(width, height, ch, 0);
    std::vector<double> acc(row_len);
    std::vector<std::uint8_t> bad(static_cast<std::size_t>(width));
    for (int oy = 0; oy < height; ++oy) {
        double ysum = 0.0;
        std::fill(acc.begin(), acc.end(), 0.0);
        std::fill(bad.begin(), bad.end(), 0);
        for (const Tap& t : yt[static_cast<std::size_t>(oy)]) {
            ysum += t.weight;
            const double* trow = tmp.data() + static_cast<std::size_t>(t.index) * row_len;
            const std::uint8_t* brow = tmp_bad.data() + static_cast<std::size_t>(t.index) * width;
            for (std::size_t j = 0; j < row_len; ++j) acc[j] += t.weight * trow[j];
            for (int ox = 0; ox < width; ++ox) bad[static_cast<std::size_t>(ox)] |= brow[ox];
        }
        std::uint8_t* orow = out.pixels.data() + static_cast<std::size_t>(oy) * row_len;
        for (int ox = 0; ox < width; ++ox) {
            const double norm = ysum * xsum[static_cast<std::size_t>(ox)];
            for (int c = 0; c < ch; ++c) {
                const std::size_t j = static_cast<std::size_t>(ox) * ch + c;
                orow[j] = static_cast<std::uint8_t>(std::clamp(std::floor(acc[j] / norm + 0.5), 0.0, 255.0));
            }
            out.valid[static_cast<std::size_t>(oy) * width + ox] = bad[static_cast<std::size_t>(ox)] ? 0 : 1;
        }
    }
    return out;
}

Frame to_grayscale(const Frame& frame) {
    frame.check();
    if (frame.channels == 1) {
        return frame;
    }
    Frame out = Frame::filled(frame.width, frame.height, 1, 0);
    for (std::size_t i = 0; i < frame.pixel_count(); ++i) {
        const unsigned r = frame.pixels[3 * i];
        const unsigned g = frame.pixels[3 * i + 1];
        const unsigned b = frame.pixels[3 * i + 2];
        out.pixels[i] = static_cast<std::uint8_t>(std::min(255u, (299 * r + 587 * g + 114 * b + 500) / 1000));
    }
    out.valid = frame.valid;
    return out;
}

}  // namespace vstab
