#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace vstab {

/// 8-bit raster, row-major and channel-interleaved, with a per-pixel
/// valid-region mask (1 = defined content, 0 = black border).
struct Frame {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<std::uint8_t> pixels;
    std::vector<std::uint8_t> valid;

    /// All-valid frame filled with `value`.
    static Frame filled(int width, int height, int channels, std::uint8_t value = 0);

    bool empty() const noexcept { return width <= 0 || height <= 0; }
    std::size_t pixel_count() const noexcept {
        return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    }
    std::uint8_t& at(int x, int y, int c = 0) {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    std::uint8_t at(int x, int y, int c = 0) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    bool is_valid(int x, int y) const { return valid[static_cast<std::size_t>(y) * width + x] != 0; }
    bool same_shape(const Frame& other) const noexcept {
        return width == other.width && height == other.height && channels == other.channels;
    }

    /// Throws DimensionMismatch / InvalidArgument on inconsistent buffers.
    void check() const;

    friend bool operator==(const Frame&, const Frame&) = default;
};

struct FrameSequence {
    std::vector<Frame> frames;
    double fps = 24.0;

    std::size_t size() const noexcept { return frames.size(); }
    bool empty() const noexcept { return frames.empty(); }
    const Frame& operator[](std::size_t i) const { return frames[i]; }
    Frame& operator[](std::size_t i) { return frames[i]; }

    /// Length >= 1 and uniform (width, height, channels); throws otherwise.
    void check() const;
};

/// Real-valued single-channel image used by the gradient-based code paths
/// (optical flow, training losses). Values are whatever the caller chose,
/// typically [0, 255] for flow and [0, 1] for losses.
struct Plane {
    int width = 0;
    int height = 0;
    std::vector<double> data;
    std::vector<std::uint8_t> valid;

    Plane() = default;
    Plane(int w, int h, double value = 0.0)
        : width(w), height(h),
          data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), value),
          valid(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), 1) {}

    double& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
    double at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
    std::size_t size() const noexcept { return data.size(); }
};

/// Grayscale (or first channel) of `frame`, scaled by `scale`; mask copied.
Plane to_plane(const Frame& frame, double scale = 1.0);

}  // namespace vstab
