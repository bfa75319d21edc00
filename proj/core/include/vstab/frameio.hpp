#pragma once

#include <filesystem>
#include <string>

#include "vstab/frame.hpp"

namespace vstab {

/// On-disk description of a frame directory. Stored as `manifest.txt`
/// holding UTF-8 `key=value` lines:
///   pattern=frame_%06d.pgm
///   count=100
///   width=1280
///   height=720
///   channels=1
///   fps=24
/// Frame files are numbered from 0.
struct SequenceManifest {
    std::filesystem::path directory;
    std::string pattern = "frame_%06d.pgm";
    int count = 0;
    int width = 0;
    int height = 0;
    int channels = 1;
    double fps = 24.0;

    std::filesystem::path frame_path(int index) const;
};

inline constexpr const char* kManifestName = "manifest.txt";

SequenceManifest read_manifest(const std::filesystem::path& manifest_path);
void write_manifest(const SequenceManifest& manifest, const std::filesystem::path& manifest_path);

/// Accepts a manifest file or a directory containing manifest.txt.
FrameSequence load_sequence(const std::filesystem::path& manifest_path);

/// Writes one binary PGM (1 channel) or PPM (3 channels) per frame plus the
/// manifest. Creates the directory if needed.
SequenceManifest save_sequence(const FrameSequence& seq, const std::filesystem::path& directory);

/// Binary P5/P6 with maxval 255. Header comments are accepted on read and
/// never written.
Frame read_pnm(const std::filesystem::path& path);
void write_pnm(const Frame& frame, const std::filesystem::path& path);

/// Area (box) resampling: every output pixel averages the source pixels its
/// back-projected footprint covers, weighted by fractional coverage, then
/// rounds half up. An output pixel is valid only if every source pixel with
/// non-zero coverage is valid.
Frame resize_area(const Frame& frame, int width, int height);

/// round(0.299 R + 0.587 G + 0.114 B), computed in integer arithmetic.
/// Single-channel frames are returned unchanged.
Frame to_grayscale(const Frame& frame);

/// printf-style expansion of a single %d / %0Nd conversion.
std::string format_index(const std::string& pattern, int index);

}  // namespace vstab
