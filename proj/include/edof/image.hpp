#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "edof/error.hpp"

namespace edof {

/// Single-channel raster with values in [0,1] and a physical pixel pitch
/// (micrometers per pixel). Row-major storage.
struct Image {
    int height = 0;
    int width = 0;
    double pixel_pitch = 0.0;
    std::vector<double> pixels;

    double& at(int y, int x) { return pixels[static_cast<size_t>(y) * width + x]; }
    double at(int y, int x) const { return pixels[static_cast<size_t>(y) * width + x]; }
    size_t size() const { return pixels.size(); }
};

Image make_image(int height, int width, double pixel_pitch, double fill = 0.0);

/// Integer raster as read from disk, before normalization.
struct RawImage {
    int height = 0;
    int width = 0;
    int maxval = 255; // 255 or 65535
    std::vector<uint16_t> samples;
};

/// Ordered focal planes (ascending z) sharing one geometry.
struct ZStack {
    std::vector<Image> planes;
    double z_step = 0.0; // micrometers between adjacent planes
};

/// Builds a stack after checking that every plane shares the same
/// height, width and pixel pitch. Throws dimension_mismatch otherwise.
ZStack make_stack(std::vector<Image> planes, double z_step);

struct StackManifest {
    double z_step_um = 0.0;
    double pixel_pitch_um = 0.0;
    std::vector<std::filesystem::path> plane_paths;
};

// Binary PGM (P5), maxval 255 or 65535; 16-bit samples big-endian.
RawImage load_pgm(const std::filesystem::path& path);
void save_pgm(const Image& image, int bit_depth, const std::filesystem::path& path);

/// Divides every sample by maxval, producing values in [0,1].
Image to_unit(const RawImage& raw, double pixel_pitch);

/// Line format: `#` comments, `z_step_um=`, `pixel_pitch_um=`, then one
/// `plane=<relative path>` per plane in ascending z. Plane paths are
/// resolved against the manifest's directory.
StackManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const StackManifest& manifest, const std::filesystem::path& path);

ZStack load_stack(const StackManifest& manifest);

} // namespace edof
