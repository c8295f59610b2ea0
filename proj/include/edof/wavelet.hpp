#pragma once

#include <string>
#include <utility>
#include <vector>

#include "edof/image.hpp"

namespace edof {

/// Orthonormal two-channel filter bank. The highpass is derived from the
/// analysis lowpass by the alternating-flip rule g[k] = (-1)^k h[L-1-k].
struct FilterBank {
    std::string name;
    std::vector<double> lowpass;
    std::vector<double> highpass;

    int taps() const { return static_cast<int>(lowpass.size()); }

    static FilterBank sym8();
    static FilterBank haar();

    /// Validates Σh = √2, Σh² = 1 and the even-shift orthogonality
    /// Σ h[k]h[k+2m] = 0 (all within 1e-10) before constructing.
    static FilterBank from_lowpass(std::string name, std::vector<double> lowpass);
};

struct Band {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    double& at(int y, int x) { return v[static_cast<size_t>(y) * cols + x]; }
    double at(int y, int x) const { return v[static_cast<size_t>(y) * cols + x]; }
};

Band make_band(int rows, int cols, double fill = 0.0);

/// Periodized separable 2D DWT coefficients. detail[l] holds the three
/// sub-bands of level l+1 (dimensions halve per level); approx sits at the
/// deepest level. Total coefficient count equals rows*cols of the source.
struct WaveletPyramid {
    struct Level {
        Band hl; // highpass along x, lowpass along y
        Band lh; // lowpass along x, highpass along y
        Band hh; // highpass along both
    };
    int image_rows = 0;
    int image_cols = 0;
    double pixel_pitch = 0.0;
    std::vector<Level> detail;
    Band approx;

    int levels() const { return static_cast<int>(detail.size()); }
};

/// Winning plane index per level and spatial position.
struct SelectionMap {
    struct Level {
        int rows = 0;
        int cols = 0;
        std::vector<int> plane;

        int& at(int y, int x) { return plane[static_cast<size_t>(y) * cols + x]; }
        int at(int y, int x) const { return plane[static_cast<size_t>(y) * cols + x]; }
    };
    std::vector<Level> level;
};

/// Deepest usable decomposition depth: floor(log2(min(H,W)/(taps-1))),
/// at least 1. Throws image_too_small when min(H,W) < taps-1.
int max_levels(int height, int width, int taps);

WaveletPyramid dwt2(const Image& image, const FilterBank& bank, int levels);
Image idwt2(const WaveletPyramid& pyramid, const FilterBank& bank);

/// Per coefficient, keeps the plane with the largest |value| in each detail
/// sub-band; the approximation becomes the element-wise mean. The map records
/// the plane winning the majority of the three sub-bands per position
/// (ties: lowest plane index).
std::pair<WaveletPyramid, SelectionMap> select_max(const std::vector<WaveletPyramid>& pyramids);

/// One pass of a 3x3 modal filter per level (truncated window at borders,
/// ties to the lowest index).
SelectionMap consistency_filter(const SelectionMap& map);

/// Wavelet EDoF: per-plane DWT, max-magnitude selection, consistency check,
/// re-gather of all detail sub-bands from the filtered map, inverse DWT,
/// clamp to [0,1]. `levels` is capped to max_levels; inputs whose dimensions
/// are not divisible by 2^levels are symmetric-padded and cropped back.
Image fuse_wavelet(const ZStack& stack, const FilterBank& bank, int levels);

} // namespace edof
