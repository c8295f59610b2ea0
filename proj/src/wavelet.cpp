#include "edof/wavelet.hpp"

#include <algorithm>
#include <cmath>

namespace edof {

namespace {

// Symlet-8 analysis lowpass, standard published table (16 taps).
const std::vector<double> kSym8Lowpass = {
    -0.0033824159510061256, -0.00054213233179114812,
    0.031695087811492981,   0.0076074873249176054,
    -0.14329423835080971,   -0.061273359067658524,
    0.48135965125837221,    0.77718575170052351,
    0.3644418948353314,     -0.051945838107709037,
    -0.027219029917056003,  0.049137179673607506,
    0.0038087520138906151,  -0.014952258337048231,
    -0.0003029205147213668, 0.0018899503327594609,
};

constexpr double kBankTolerance = 1e-10;

} // namespace

FilterBank FilterBank::from_lowpass(std::string name, std::vector<double> lowpass) {
    const int n = static_cast<int>(lowpass.size());
    if (n < 2 || n % 2 != 0)
        fail(Errc::invalid_argument, "filter bank '" + name + "' needs an even tap count >= 2");

    double sum = 0.0, sumsq = 0.0;
    for (double h : lowpass) {
        sum += h;
        sumsq += h * h;
    }
    if (std::abs(sum - std::sqrt(2.0)) > kBankTolerance)
        fail(Errc::invalid_argument, "filter bank '" + name + "': tap sum is not sqrt(2)");
    if (std::abs(sumsq - 1.0) > kBankTolerance)
        fail(Errc::invalid_argument, "filter bank '" + name + "': tap energy is not 1");
    for (int m = 1; 2 * m < n; ++m) {
        double dot = 0.0;
        for (int k = 0; k + 2 * m < n; ++k)
            dot += lowpass[k] * lowpass[k + 2 * m];
        if (std::abs(dot) > kBankTolerance)
            fail(Errc::invalid_argument,
                 "filter bank '" + name + "': shift-" + std::to_string(2 * m) +
                     " orthogonality violated");
    }

    FilterBank bank;
    bank.name = std::move(name);
    bank.highpass.resize(n);
    for (int k = 0; k < n; ++k) // alternating flip
        bank.highpass[k] = (k % 2 == 0 ? 1.0 : -1.0) * lowpass[n - 1 - k];
    bank.lowpass = std::move(lowpass);
    return bank;
}

FilterBank FilterBank::sym8() { return from_lowpass("sym8", kSym8Lowpass); }

FilterBank FilterBank::haar() {
    const double r = std::sqrt(0.5);
    return from_lowpass("haar", {r, r});
}

Band make_band(int rows, int cols, double fill) {
    Band b;
    b.rows = rows;
    b.cols = cols;
    b.v.assign(static_cast<size_t>(rows) * cols, fill);
    return b;
}

int max_levels(int height, int width, int taps) {
    if (height < 1 || width < 1 || taps < 1)
        fail(Errc::invalid_argument, "max_levels inputs must be >= 1");
    const int m = std::min(height, width);
    if (m < taps - 1)
        fail(Errc::image_too_small,
             std::to_string(m) + " px cannot host a " + std::to_string(taps) + "-tap bank");
    const int levels =
        static_cast<int>(std::floor(std::log2(static_cast<double>(m) / (taps - 1))));
    return std::max(1, levels);
}

namespace {

// One analysis pass along x: out_lo/out_hi are rows x cols/2.
// Periodized: lo[i] = sum_k h[k] * row[(2i+k) mod cols].
void analyze_rows(const Band& in, const FilterBank& bank, Band& lo, Band& hi) {
    const int n = in.cols, half = n / 2, taps = bank.taps();
    lo = make_band(in.rows, half);
    hi = make_band(in.rows, half);
    for (int y = 0; y < in.rows; ++y) {
        const double* row = &in.v[static_cast<size_t>(y) * n];
        double* lr = &lo.v[static_cast<size_t>(y) * half];
        double* hr = &hi.v[static_cast<size_t>(y) * half];
        for (int i = 0; i < half; ++i) {
            double a = 0.0, d = 0.0;
            int idx = 2 * i;
            for (int k = 0; k < taps; ++k) {
                const double x = row[idx];
                a += bank.lowpass[k] * x;
                d += bank.highpass[k] * x;
                if (++idx == n) idx = 0;
            }
            lr[i] = a;
            hr[i] = d;
        }
    }
}

// One analysis pass along y, accumulating whole rows for locality.
void analyze_cols(const Band& in, const FilterBank& bank, Band& lo, Band& hi) {
    const int n = in.rows, half = n / 2, taps = bank.taps(), cols = in.cols;
    lo = make_band(half, cols);
    hi = make_band(half, cols);
    for (int i = 0; i < half; ++i) {
        double* lr = &lo.v[static_cast<size_t>(i) * cols];
        double* hr = &hi.v[static_cast<size_t>(i) * cols];
        int idx = 2 * i;
        for (int k = 0; k < taps; ++k) {
            const double* row = &in.v[static_cast<size_t>(idx) * cols];
            const double hk = bank.lowpass[k], gk = bank.highpass[k];
            for (int x = 0; x < cols; ++x) {
                lr[x] += hk * row[x];
                hr[x] += gk * row[x];
            }
            if (++idx == n) idx = 0;
        }
    }
}

// Adjoint of analyze_rows.
void synthesize_rows(const Band& lo, const Band& hi, const FilterBank& bank, Band& out) {
    const int half = lo.cols, n = 2 * half, taps = bank.taps();
    out = make_band(lo.rows, n);
    for (int y = 0; y < lo.rows; ++y) {
        const double* lr = &lo.v[static_cast<size_t>(y) * half];
        const double* hr = &hi.v[static_cast<size_t>(y) * half];
        double* row = &out.v[static_cast<size_t>(y) * n];
        for (int i = 0; i < half; ++i) {
            const double a = lr[i], d = hr[i];
            int idx = 2 * i;
            for (int k = 0; k < taps; ++k) {
                row[idx] += bank.lowpass[k] * a + bank.highpass[k] * d;
                if (++idx == n) idx = 0;
            }
        }
    }
}

// Adjoint of analyze_cols.
void synthesize_cols(const Band& lo, const Band& hi, const FilterBank& bank, Band& out) {
    const int half = lo.rows, n = 2 * half, taps = bank.taps(), cols = lo.cols;
    out = make_band(n, cols);
    for (int i = 0; i < half; ++i) {
        const double* lr = &lo.v[static_cast<size_t>(i) * cols];
        const double* hr = &hi.v[static_cast<size_t>(i) * cols];
        int idx = 2 * i;
        for (int k = 0; k < taps; ++k) {
            double* row = &out.v[static_cast<size_t>(idx) * cols];
            const double hk = bank.lowpass[k], gk = bank.highpass[k];
            for (int x = 0; x < cols; ++x)
                row[x] += hk * lr[x] + gk * hr[x];
            if (++idx == n) idx = 0;
        }
    }
}

} // namespace

WaveletPyramid dwt2(const Image& image, const FilterBank& bank, int levels) {
    if (levels < 1)
        fail(Errc::invalid_argument, "levels must be >= 1");
    if (levels > max_levels(image.height, image.width, bank.taps()))
        fail(Errc::level_overflow,
             std::to_string(levels) + " levels exceed the maximum for " +
                 std::to_string(image.width) + "x" + std::to_string(image.height));
    if (image.height % (1 << levels) != 0 || image.width % (1 << levels) != 0)
        fail(Errc::invalid_argument, "image dimensions must be divisible by 2^levels");

    WaveletPyramid pyr;
    pyr.image_rows = image.height;
    pyr.image_cols = image.width;
    pyr.pixel_pitch = image.pixel_pitch;
    pyr.detail.resize(levels);

    Band current = make_band(image.height, image.width);
    current.v = image.pixels;

    for (int l = 0; l < levels; ++l) {
        Band lox, hix;
        analyze_rows(current, bank, lox, hix);
        Band next, lh, hl, hh;
        analyze_cols(lox, bank, next, lh);
        analyze_cols(hix, bank, hl, hh);
        pyr.detail[l].hl = std::move(hl);
        pyr.detail[l].lh = std::move(lh);
        pyr.detail[l].hh = std::move(hh);
        current = std::move(next);
    }
    pyr.approx = std::move(current);
    return pyr;
}

Image idwt2(const WaveletPyramid& pyramid, const FilterBank& bank) {
    const int levels = pyramid.levels();
    if (levels < 1)
        fail(Errc::invalid_argument, "pyramid has no levels");

    Band current = pyramid.approx;
    for (int l = levels - 1; l >= 0; --l) {
        const auto& d = pyramid.detail[l];
        if (d.hl.rows != current.rows || d.hl.cols != current.cols ||
            d.lh.rows != current.rows || d.hh.rows != current.rows)
            fail(Errc::dimension_mismatch, "pyramid level " + std::to_string(l + 1) +
                                               " does not match the approximation band");
        Band lox, hix;
        synthesize_cols(current, d.lh, bank, lox);
        synthesize_cols(d.hl, d.hh, bank, hix);
        Band merged;
        synthesize_rows(lox, hix, bank, merged);
        current = std::move(merged);
    }
    if (current.rows != pyramid.image_rows || current.cols != pyramid.image_cols)
        fail(Errc::dimension_mismatch, "reconstructed size does not match pyramid header");

    Image out = make_image(current.rows, current.cols, pyramid.pixel_pitch);
    out.pixels = std::move(current.v);
    return out;
}

namespace {

void check_same_shape(const std::vector<WaveletPyramid>& pyramids) {
    if (pyramids.empty())
        fail(Errc::empty_input, "select_max needs at least one pyramid");
    const auto& ref = pyramids.front();
    for (size_t p = 1; p < pyramids.size(); ++p) {
        const auto& q = pyramids[p];
        if (q.levels() != ref.levels() || q.image_rows != ref.image_rows ||
            q.image_cols != ref.image_cols)
            fail(Errc::shape_mismatch, "pyramid " + std::to_string(p) + " shape differs");
    }
}

// Majority vote over the three sub-band winners; 2-of-3 wins, otherwise
// the lowest plane index among the candidates.
int majority3(int a, int b, int c) {
    if (b == c) return b;
    if (a == b || a == c) return a;
    return std::min({a, b, c});
}

} // namespace

std::pair<WaveletPyramid, SelectionMap> select_max(const std::vector<WaveletPyramid>& pyramids) {
    check_same_shape(pyramids);
    const auto& ref = pyramids.front();
    const int levels = ref.levels();
    const size_t planes = pyramids.size();

    WaveletPyramid fused;
    fused.image_rows = ref.image_rows;
    fused.image_cols = ref.image_cols;
    fused.pixel_pitch = ref.pixel_pitch;
    fused.detail.resize(levels);

    SelectionMap map;
    map.level.resize(levels);

    for (int l = 0; l < levels; ++l) {
        const int rows = ref.detail[l].hl.rows, cols = ref.detail[l].hl.cols;
        auto& out = fused.detail[l];
        out.hl = make_band(rows, cols);
        out.lh = make_band(rows, cols);
        out.hh = make_band(rows, cols);
        auto& m = map.level[l];
        m.rows = rows;
        m.cols = cols;
        m.plane.assign(static_cast<size_t>(rows) * cols, 0);

        const size_t n = static_cast<size_t>(rows) * cols;
        for (size_t i = 0; i < n; ++i) {
            int whl = 0, wlh = 0, whh = 0;
            double bhl = std::abs(ref.detail[l].hl.v[i]);
            double blh = std::abs(ref.detail[l].lh.v[i]);
            double bhh = std::abs(ref.detail[l].hh.v[i]);
            for (size_t p = 1; p < planes; ++p) {
                const auto& d = pyramids[p].detail[l];
                if (std::abs(d.hl.v[i]) > bhl) { bhl = std::abs(d.hl.v[i]); whl = static_cast<int>(p); }
                if (std::abs(d.lh.v[i]) > blh) { blh = std::abs(d.lh.v[i]); wlh = static_cast<int>(p); }
                if (std::abs(d.hh.v[i]) > bhh) { bhh = std::abs(d.hh.v[i]); whh = static_cast<int>(p); }
            }
            out.hl.v[i] = pyramids[whl].detail[l].hl.v[i];
            out.lh.v[i] = pyramids[wlh].detail[l].lh.v[i];
            out.hh.v[i] = pyramids[whh].detail[l].hh.v[i];
            m.plane[i] = majority3(whl, wlh, whh);
        }
    }

    // low-frequency content is averaged, not winner-take-all
    fused.approx = make_band(ref.approx.rows, ref.approx.cols);
    const double inv = 1.0 / static_cast<double>(planes);
    for (size_t i = 0; i < fused.approx.v.size(); ++i) {
        double s = 0.0;
        for (const auto& p : pyramids)
            s += p.approx.v[i];
        fused.approx.v[i] = s * inv;
    }
    return {std::move(fused), std::move(map)};
}

SelectionMap consistency_filter(const SelectionMap& map) {
    SelectionMap out = map;
    for (size_t l = 0; l < map.level.size(); ++l) {
        const auto& in = map.level[l];
        auto& dst = out.level[l];
        for (int y = 0; y < in.rows; ++y) {
            for (int x = 0; x < in.cols; ++x) {
                const int y0 = std::max(0, y - 1), y1 = std::min(in.rows - 1, y + 1);
                const int x0 = std::max(0, x - 1), x1 = std::min(in.cols - 1, x + 1);
                int best = -1, best_count = 0;
                for (int wy = y0; wy <= y1; ++wy) {
                    for (int wx = x0; wx <= x1; ++wx) {
                        const int cand = in.at(wy, wx);
                        int count = 0;
                        for (int cy = y0; cy <= y1; ++cy)
                            for (int cx = x0; cx <= x1; ++cx)
                                if (in.at(cy, cx) == cand) ++count;
                        if (count > best_count || (count == best_count && cand < best)) {
                            best = cand;
                            best_count = count;
                        }
                    }
                }
                dst.at(y, x) = best;
            }
        }
    }
    return out;
}

namespace {

// Half-sample symmetric fold of coordinate t into [0, n).
int fold_symmetric(int t, int n) {
    const int period = 2 * n;
    int r = t % period;
    if (r < 0) r += period;
    return r < n ? r : period - 1 - r;
}

Image pad_symmetric(const Image& image, int target_h, int target_w) {
    if (target_h == image.height && target_w == image.width)
        return image;
    Image out = make_image(target_h, target_w, image.pixel_pitch);
    for (int y = 0; y < target_h; ++y) {
        const int sy = fold_symmetric(y, image.height);
        for (int x = 0; x < target_w; ++x)
            out.at(y, x) = image.at(sy, fold_symmetric(x, image.width));
    }
    return out;
}

} // namespace

Image fuse_wavelet(const ZStack& stack, const FilterBank& bank, int levels) {
    if (stack.planes.empty())
        fail(Errc::empty_input, "empty stack");
    if (levels < 1)
        fail(Errc::invalid_argument, "levels must be >= 1");

    const Image& first = stack.planes.front();
    const int cap = max_levels(first.height, first.width, bank.taps());
    const int L = std::min(levels, cap);

    const int step = 1 << L;
    const int pad_h = (first.height + step - 1) / step * step;
    const int pad_w = (first.width + step - 1) / step * step;

    std::vector<WaveletPyramid> pyramids;
    pyramids.reserve(stack.planes.size());
    for (const Image& plane : stack.planes)
        pyramids.push_back(dwt2(pad_symmetric(plane, pad_h, pad_w), bank, L));

    auto [fused, raw_map] = select_max(pyramids);
    const SelectionMap map = consistency_filter(raw_map);

    // re-gather every detail sub-band from the filtered winner map
    for (int l = 0; l < L; ++l) {
        const auto& m = map.level[l];
        auto& d = fused.detail[l];
        const size_t n = m.plane.size();
        for (size_t i = 0; i < n; ++i) {
            const int p = m.plane[i];
            d.hl.v[i] = pyramids[p].detail[l].hl.v[i];
            d.lh.v[i] = pyramids[p].detail[l].lh.v[i];
            d.hh.v[i] = pyramids[p].detail[l].hh.v[i];
        }
    }

    Image padded = idwt2(fused, bank);
    Image out = make_image(first.height, first.width, first.pixel_pitch);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            out.at(y, x) = std::clamp(padded.at(y, x), 0.0, 1.0);
    return out;
}

} // namespace edof
