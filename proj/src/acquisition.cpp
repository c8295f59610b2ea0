#include "edof/acquisition.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace edof {

ZStack subsample_zstep(const ZStack& stack, int stride) {
    if (stride < 1)
        fail(Errc::invalid_argument, "stride must be >= 1");
    ZStack out;
    out.z_step = stack.z_step * stride;
    for (size_t i = 0; i < stack.planes.size(); i += static_cast<size_t>(stride))
        out.planes.push_back(stack.planes[i]);
    return out;
}

ZStack bin_stack(const ZStack& stack, int factor) {
    if (factor < 1)
        fail(Errc::invalid_argument, "bin factor must be >= 1");
    if (stack.planes.empty())
        fail(Errc::empty_input, "empty stack");
    const Image& first = stack.planes.front();
    if (first.height % factor != 0 || first.width % factor != 0)
        fail(Errc::dimension_mismatch,
             std::to_string(first.width) + "x" + std::to_string(first.height) +
                 " not divisible by bin factor " + std::to_string(factor));

    ZStack out;
    out.z_step = stack.z_step;
    const int oh = first.height / factor, ow = first.width / factor;
    const double inv = 1.0 / (static_cast<double>(factor) * factor);
    for (const Image& plane : stack.planes) {
        Image binned = make_image(oh, ow, plane.pixel_pitch * factor);
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                double s = 0.0;
                for (int by = 0; by < factor; ++by)
                    for (int bx = 0; bx < factor; ++bx)
                        s += plane.at(y * factor + by, x * factor + bx);
                binned.at(y, x) = s * inv;
            }
        }
        out.planes.push_back(std::move(binned));
    }
    return out;
}

namespace {

std::vector<double> gaussian_taps(double sigma, double voxel, double truncation) {
    const int half = static_cast<int>(std::ceil(truncation * sigma / voxel));
    std::vector<double> taps(2 * half + 1);
    double sum = 0.0;
    for (int i = -half; i <= half; ++i) {
        const double r = i * voxel;
        taps[i + half] = std::exp(-0.5 * r * r / (sigma * sigma));
        sum += taps[i + half];
    }
    for (double& t : taps)
        t /= sum;
    return taps;
}

} // namespace

Psf3d gaussian_psf3d(const PsfParams& params, double truncation) {
    if (params.numerical_aperture <= 0 || params.numerical_aperture > 1.5)
        fail(Errc::invalid_argument, "numerical aperture must be in (0, 1.5]");
    if (params.wavelength <= 0 || params.refractive_index < 1)
        fail(Errc::invalid_argument, "wavelength must be > 0 and refractive index >= 1");
    if (params.numerical_aperture >= params.refractive_index)
        fail(Errc::invalid_argument, "NA must be below the refractive index");
    if (params.voxel_dz <= 0 || params.voxel_dy <= 0 || params.voxel_dx <= 0)
        fail(Errc::invalid_argument, "voxel sizes must be > 0");
    if (truncation < 1)
        fail(Errc::invalid_argument, "truncation must be >= 1 sigma");

    const double na = params.numerical_aperture;
    const double sigma_lateral = 0.21 * params.wavelength / na;
    const double sigma_axial = 0.66 * params.wavelength * params.refractive_index / (na * na);

    Psf3d psf;
    psf.dz = params.voxel_dz;
    psf.dy = params.voxel_dy;
    psf.dx = params.voxel_dx;
    psf.sigma_lateral = sigma_lateral;
    psf.sigma_axial = sigma_axial;
    psf.axial = gaussian_taps(sigma_axial, params.voxel_dz, truncation);
    psf.lateral_y = gaussian_taps(sigma_lateral, params.voxel_dy, truncation);
    psf.lateral_x = gaussian_taps(sigma_lateral, params.voxel_dx, truncation);
    psf.nz = static_cast<int>(psf.axial.size());
    psf.ny = static_cast<int>(psf.lateral_y.size());
    psf.nx = static_cast<int>(psf.lateral_x.size());

    psf.kernel.resize(static_cast<size_t>(psf.nz) * psf.ny * psf.nx);
    size_t i = 0;
    for (int z = 0; z < psf.nz; ++z)
        for (int y = 0; y < psf.ny; ++y)
            for (int x = 0; x < psf.nx; ++x, ++i)
                psf.kernel[i] = psf.axial[z] * psf.lateral_y[y] * psf.lateral_x[x];
    return psf;
}

namespace {

// per-axis overlap weights of output cell j over source cells
struct AxisFootprint {
    int start = 0;
    std::vector<double> weights; // already divided by the cell span
};

std::vector<AxisFootprint> box_footprints(int in_dim, int out_dim) {
    const double r = static_cast<double>(in_dim) / out_dim;
    std::vector<AxisFootprint> fp(out_dim);
    for (int j = 0; j < out_dim; ++j) {
        const double lo = j * r, hi = (j + 1) * r;
        const int s0 = static_cast<int>(std::floor(lo));
        const int s1 = std::min(in_dim, static_cast<int>(std::ceil(hi)));
        fp[j].start = s0;
        fp[j].weights.resize(s1 - s0);
        for (int s = s0; s < s1; ++s)
            fp[j].weights[s - s0] = (std::min(hi, s + 1.0) - std::max(lo, static_cast<double>(s))) / r;
    }
    return fp;
}

} // namespace

Image resample_area(const Image& image, double scale) {
    if (scale <= 1.0)
        fail(Errc::invalid_argument, "scale must be > 1");
    const int oh = static_cast<int>(std::lround(image.height / scale));
    const int ow = static_cast<int>(std::lround(image.width / scale));
    if (oh < 1 || ow < 1)
        fail(Errc::invalid_argument, "scale leaves no output pixels");

    const auto fy = box_footprints(image.height, oh);
    const auto fx = box_footprints(image.width, ow);

    Image out = make_image(oh, ow, image.pixel_pitch * scale);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (size_t wy = 0; wy < fy[y].weights.size(); ++wy) {
                const double* row = &image.pixels[static_cast<size_t>(fy[y].start + wy) * image.width];
                double rs = 0.0;
                for (size_t wx = 0; wx < fx[x].weights.size(); ++wx)
                    rs += fx[x].weights[wx] * row[fx[x].start + wx];
                s += fy[y].weights[wy] * rs;
            }
            out.at(y, x) = s;
        }
    }
    return out;
}

namespace {

int fold_symmetric(int t, int n) {
    const int period = 2 * n;
    int r = t % period;
    if (r < 0) r += period;
    return r < n ? r : period - 1 - r;
}

int clamp_index(int t, int n) { return std::clamp(t, 0, n - 1); }

} // namespace

ZStack simulate_low_mag(const ZStack& stack, const PsfParams& params, double scale) {
    if (stack.planes.empty())
        fail(Errc::empty_input, "empty stack");
    if (scale < 1.0)
        fail(Errc::invalid_argument, "scale must be >= 1");

    const Psf3d psf = gaussian_psf3d(params);
    const int depth = static_cast<int>(stack.planes.size());
    const int h = stack.planes.front().height, w = stack.planes.front().width;

    // z pass, replicate boundary
    std::vector<Image> mixed(depth);
    const int zc = psf.nz / 2;
    for (int z = 0; z < depth; ++z) {
        mixed[z] = make_image(h, w, stack.planes.front().pixel_pitch);
        for (int k = 0; k < psf.nz; ++k) {
            const Image& src = stack.planes[clamp_index(z + k - zc, depth)];
            const double tap = psf.axial[k];
            for (size_t i = 0; i < src.pixels.size(); ++i)
                mixed[z].pixels[i] += tap * src.pixels[i];
        }
    }

    // in-plane passes, symmetric boundary
    const int yc = psf.ny / 2, xc = psf.nx / 2;
    ZStack out;
    out.z_step = stack.z_step;
    for (int z = 0; z < depth; ++z) {
        Image tmp = make_image(h, w, mixed[z].pixel_pitch);
        for (int y = 0; y < h; ++y)
            for (int k = 0; k < psf.ny; ++k) {
                const double* src = &mixed[z].pixels[static_cast<size_t>(fold_symmetric(y + k - yc, h)) * w];
                double* dst = &tmp.pixels[static_cast<size_t>(y) * w];
                const double tap = psf.lateral_y[k];
                for (int x = 0; x < w; ++x)
                    dst[x] += tap * src[x];
            }
        Image blurred = make_image(h, w, tmp.pixel_pitch);
        for (int y = 0; y < h; ++y) {
            const double* src = &tmp.pixels[static_cast<size_t>(y) * w];
            double* dst = &blurred.pixels[static_cast<size_t>(y) * w];
            for (int x = 0; x < w; ++x) {
                double s = 0.0;
                for (int k = 0; k < psf.nx; ++k)
                    s += psf.lateral_x[k] * src[fold_symmetric(x + k - xc, w)];
                dst[x] = s;
            }
        }
        Image plane = scale > 1.0 ? resample_area(blurred, scale) : std::move(blurred);
        for (double& v : plane.pixels)
            v = std::clamp(v, 0.0, 1.0);
        out.planes.push_back(std::move(plane));
    }
    return out;
}

namespace {

// Renders the blob's darkening (background minus blob value inside the
// ellipse) into a local patch and max-composites it into `plane`,
// optionally defocused by a Gaussian of the given sigma.
void composite_blob(Image& plane, const SynthBlob& blob, double background, double sigma) {
    const double reach = std::max(blob.ra, blob.rb);
    const int margin = static_cast<int>(std::ceil(reach + (sigma > 0 ? 3.0 * sigma : 0.0))) + 1;
    const int y0 = std::max(0, static_cast<int>(std::floor(blob.cy)) - margin);
    const int y1 = std::min(plane.height - 1, static_cast<int>(std::ceil(blob.cy)) + margin);
    const int x0 = std::max(0, static_cast<int>(std::floor(blob.cx)) - margin);
    const int x1 = std::min(plane.width - 1, static_cast<int>(std::ceil(blob.cx)) + margin);
    if (y0 > y1 || x0 > x1)
        return;

    const int ph = y1 - y0 + 1, pw = x1 - x0 + 1;
    std::vector<double> patch(static_cast<size_t>(ph) * pw, 0.0);
    const double ca = std::cos(blob.angle), sa = std::sin(blob.angle);
    const double dark = background - blob.value;
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const double dy = y - blob.cy, dx = x - blob.cx;
            const double u = (ca * dx + sa * dy) / blob.ra;
            const double v = (-sa * dx + ca * dy) / blob.rb;
            if (u * u + v * v <= 1.0)
                patch[static_cast<size_t>(y - y0) * pw + (x - x0)] = dark;
        }
    }

    if (sigma > 1e-12) {
        const int half = static_cast<int>(std::ceil(3.0 * sigma));
        std::vector<double> taps(2 * half + 1);
        double sum = 0.0;
        for (int i = -half; i <= half; ++i) {
            taps[i + half] = std::exp(-0.5 * i * i / (sigma * sigma));
            sum += taps[i + half];
        }
        for (double& t : taps)
            t /= sum;
        // zero boundary: the patch margin already covers the blur reach
        std::vector<double> tmp(patch.size(), 0.0);
        for (int y = 0; y < ph; ++y)
            for (int x = 0; x < pw; ++x) {
                double s = 0.0;
                for (int k = -half; k <= half; ++k) {
                    const int sx = x + k;
                    if (sx >= 0 && sx < pw)
                        s += taps[k + half] * patch[static_cast<size_t>(y) * pw + sx];
                }
                tmp[static_cast<size_t>(y) * pw + x] = s;
            }
        for (int y = 0; y < ph; ++y)
            for (int x = 0; x < pw; ++x) {
                double s = 0.0;
                for (int k = -half; k <= half; ++k) {
                    const int sy = y + k;
                    if (sy >= 0 && sy < ph)
                        s += taps[k + half] * tmp[static_cast<size_t>(sy) * pw + x];
                }
                patch[static_cast<size_t>(y) * pw + x] = s;
            }
    }

    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double d = patch[static_cast<size_t>(y - y0) * pw + (x - x0)];
            double& dst = plane.at(y, x);
            dst = std::min(dst, background - d);
        }
}

} // namespace

SynthStack gen_synthetic_stack(const SynthConfig& cfg) {
    if (cfg.height < 1 || cfg.width < 1 || cfg.planes < 1 || cfg.objects < 0 ||
        cfg.pixel_pitch_um <= 0 || cfg.z_step_um <= 0 || cfg.min_radius_um <= 0 ||
        cfg.max_radius_um < cfg.min_radius_um || cfg.blur_slope_px < 0 || cfg.noise_sigma < 0)
        fail(Errc::invalid_argument, "invalid synthetic stack configuration");

    constexpr double kBackground = 0.85;
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const double min_r_px = cfg.min_radius_um / cfg.pixel_pitch_um;
    const double max_r_px = cfg.max_radius_um / cfg.pixel_pitch_um;
    const double margin = max_r_px + 2.0;

    std::vector<SynthBlob> blobs(static_cast<size_t>(cfg.objects));
    for (SynthBlob& b : blobs) {
        b.cy = margin + unit(rng) * std::max(1.0, cfg.height - 2.0 * margin);
        b.cx = margin + unit(rng) * std::max(1.0, cfg.width - 2.0 * margin);
        b.ra = min_r_px + unit(rng) * (max_r_px - min_r_px);
        b.rb = min_r_px + unit(rng) * (max_r_px - min_r_px);
        b.angle = unit(rng) * 3.14159265358979323846;
        b.value = 0.15 + unit(rng) * 0.25;
        b.home = static_cast<int>(unit(rng) * cfg.planes);
        if (b.home >= cfg.planes) b.home = cfg.planes - 1;
    }

    SynthStack out;
    out.ground_truth = make_image(cfg.height, cfg.width, cfg.pixel_pitch_um, kBackground);
    for (const SynthBlob& b : blobs)
        composite_blob(out.ground_truth, b, kBackground, 0.0);

    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<Image> planes;
    planes.reserve(static_cast<size_t>(cfg.planes));
    for (int z = 0; z < cfg.planes; ++z) {
        Image plane = make_image(cfg.height, cfg.width, cfg.pixel_pitch_um, kBackground);
        for (const SynthBlob& b : blobs)
            composite_blob(plane, b, kBackground, cfg.blur_slope_px * std::abs(z - b.home));
        if (cfg.noise_sigma > 0)
            for (double& v : plane.pixels)
                v += cfg.noise_sigma * noise(rng);
        for (double& v : plane.pixels)
            v = std::clamp(v, 0.0, 1.0);
        planes.push_back(std::move(plane));
    }
    out.stack = make_stack(std::move(planes), cfg.z_step_um);
    out.blobs = std::move(blobs);
    return out;
}

} // namespace edof
