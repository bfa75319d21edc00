#include "vstab/frame.hpp"

#include <string>

#include "vstab/error.hpp"
#include "vstab/frameio.hpp"

namespace vstab {

Frame Frame::filled(int width, int height, int channels, std::uint8_t value) {
    if (width <= 0 || height <= 0 || (channels != 1 && channels != 3)) {
        throw Error(ErrorCode::InvalidArgument, "Frame::filled: bad dimensions");
    }
    Frame f;
    f.width = width;
    f.height = height;
    f.channels = channels;
    f.pixels.assign(f.pixel_count() * channels, value);
    f.valid.assign(f.pixel_count(), 1);
    return f;
}

void Frame::check() const {
    if (channels != 1 && channels != 3) {
        throw Error(ErrorCode::InvalidArgument, "frame channels must be 1 or 3");
    }
    if (pixels.size() != pixel_count() * static_cast<std::size_t>(channels) ||
        valid.size() != pixel_count()) {
        throw Error(ErrorCode::DimensionMismatch, "frame buffer size disagrees with dimensions");
    }
}

void FrameSequence::check() const {
    if (frames.empty()) {
        throw Error(ErrorCode::TooShort, "sequence has no frames");
    }
    for (std::size_t i = 0; i < frames.size(); ++i) {
        frames[i].check();
        if (!frames[i].same_shape(frames.front())) {
            throw Error(ErrorCode::DimensionMismatch,
                        "frame " + std::to_string(i) + " differs in size from frame 0");
        }
    }
}

Plane to_plane(const Frame& frame, double scale) {
    const Frame gray = frame.channels == 3 ? to_grayscale(frame) : frame;
    Plane p(gray.width, gray.height);
    for (std::size_t i = 0; i < p.size(); ++i) {
        p.data[i] = scale * gray.pixels[i];
    }
    p.valid = gray.valid;
    return p;
}

}  // namespace vstab
