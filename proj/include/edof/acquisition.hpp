#pragma once

#include <cstdint>

#include "edof/image.hpp"

namespace edof {

/// Optics for the simulated low-magnification scenario. Lengths in
/// micrometers; voxel = (dz, dy, dx).
struct PsfParams {
    double numerical_aperture = 0.6;
    double wavelength = 0.55;
    double refractive_index = 1.0;
    double voxel_dz = 0.5;
    double voxel_dy = 0.065;
    double voxel_dx = 0.065;
};

/// Sampled separable Gaussian PSF, unit sum, odd extents, center-maximal.
struct Psf3d {
    int nz = 0, ny = 0, nx = 0;
    std::vector<double> kernel; // z-major, then y, then x
    double dz = 0.0, dy = 0.0, dx = 0.0;
    double sigma_lateral = 0.0, sigma_axial = 0.0; // micrometers
    // 1D factors whose outer product is `kernel`; each sums to 1
    std::vector<double> axial, lateral_y, lateral_x;

    double at(int z, int y, int x) const {
        return kernel[(static_cast<size_t>(z) * ny + y) * nx + x];
    }
};

/// Scene generator configuration for oracle stacks with a known
/// all-in-focus ground truth.
struct SynthConfig {
    uint64_t seed = 1;
    int height = 64;
    int width = 64;
    int planes = 5;
    int objects = 6;
    double min_radius_um = 0.4;
    double max_radius_um = 1.2;
    double blur_slope_px = 1.5; // Gaussian sigma per plane of |z - home|
    double noise_sigma = 0.01;
    double pixel_pitch_um = 0.065;
    double z_step_um = 0.5;
};

struct SynthBlob {
    double cy = 0.0, cx = 0.0; // center, px
    double ra = 0.0, rb = 0.0; // semi-axes, px
    double angle = 0.0;
    double value = 0.0;
    int home = 0; // plane on which this blob is sharp
};

struct SynthStack {
    ZStack stack;
    Image ground_truth;
    std::vector<SynthBlob> blobs;
};

/// Keeps planes {0, stride, 2*stride, ...}; z_step grows by the stride.
ZStack subsample_zstep(const ZStack& stack, int stride);

/// factor x factor block averaging per plane; pixel pitch grows by factor.
ZStack bin_stack(const ZStack& stack, int factor);

/// Paraxial Gaussian approximation: sigma_lateral = 0.21*lambda/NA,
/// sigma_axial = 0.66*lambda*n/NA^2, sampled on the voxel grid with
/// extents 2*ceil(truncation*sigma/voxel)+1.
Psf3d gaussian_psf3d(const PsfParams& params, double truncation = 3.0);

/// Area-weighted box downsampling to round(dim/scale) pixels per axis.
Image resample_area(const Image& image, double scale);

/// 3D PSF blur (symmetric boundaries in x/y, replicate in z) followed by
/// per-plane area resampling; output clamped to [0,1]. scale == 1 skips
/// the resampling step.
ZStack simulate_low_mag(const ZStack& stack, const PsfParams& params, double scale);

/// Bright background with dark elliptical blobs, each sharp on its home
/// plane and defocused elsewhere (sigma = blur_slope_px * plane distance).
/// Deterministic in cfg.seed.
SynthStack gen_synthetic_stack(const SynthConfig& cfg);

} // namespace edof
