#pragma once

#include <cstdint>

#include "edof/image.hpp"

namespace edof {

struct BinaryMask {
    int height = 0;
    int width = 0;
    double pixel_pitch = 0.0;
    std::vector<uint8_t> bits;

    bool at(int y, int x) const { return bits[static_cast<size_t>(y) * width + x] != 0; }
    void set(int y, int x, bool b) { bits[static_cast<size_t>(y) * width + x] = b ? 1 : 0; }
};

BinaryMask make_mask(int height, int width, double pixel_pitch);

/// Reference SSIM configuration: 11x11 Gaussian window (sigma 1.5),
/// K1 = 0.01, K2 = 0.03, dynamic range 1.
struct SsimConfig {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;
};

/// Mean local SSIM over all fully interior window positions.
double ssim(const Image& a, const Image& b, const SsimConfig& cfg = {});

/// 256-bin Otsu threshold over [0,1]; returns the upper edge of the bin
/// maximizing between-class variance (ties: lowest). Foreground is the
/// population below the threshold. Throws degenerate_histogram when no
/// split separates anything.
double otsu_threshold(const Image& image);

struct ComponentLabels {
    int height = 0;
    int width = 0;
    int count = 0;
    std::vector<int> label;     // 0 = background, regions 1..count
    std::vector<size_t> area;   // area[k] = pixels of region k+1

    int at(int y, int x) const { return label[static_cast<size_t>(y) * width + x]; }
};

/// 8-connected labeling; labels follow first-encounter row-major order.
ComponentLabels connected_components(const BinaryMask& mask);

/// Otsu binarization (dark foreground) followed by removal of blobs
/// outside [min_area_um2, max_area_um2] physical area (inclusive).
BinaryMask segment_parasite_regions(const Image& image, double min_area_um2 = 0.5,
                                    double max_area_um2 = 3.0);

/// 2|A∩B| / (|A|+|B|); two empty masks compare as 1.
double dice(const BinaryMask& a, const BinaryMask& b);

} // namespace edof
