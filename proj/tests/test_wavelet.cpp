#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "edof/wavelet.hpp"

using namespace edof;

#define CHECK_ERRC(expr, errc)                                                                     \
    do {                                                                                           \
        try {                                                                                      \
            expr;                                                                                  \
            FAIL_CHECK("expected " #errc ", nothing thrown");                                      \
        } catch (const Error& e) {                                                                 \
            CHECK(e.code() == errc);                                                               \
        }                                                                                          \
    } while (0)

namespace {

Image random_image(int h, int w, uint64_t seed) {
    Image img = make_image(h, w, 0.065);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (double& v : img.pixels)
        v = unit(rng);
    return img;
}

double rms_diff(const std::vector<double>& a, const std::vector<double>& b) {
    REQUIRE(a.size() == b.size());
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i)
        s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s / static_cast<double>(a.size()));
}

// oracle: full circular correlation, then keep the even samples
std::vector<double> conv_then_downsample(const std::vector<double>& x,
                                         const std::vector<double>& taps) {
    const int n = static_cast<int>(x.size());
    std::vector<double> full(n, 0.0);
    for (int j = 0; j < n; ++j)
        for (size_t k = 0; k < taps.size(); ++k)
            full[j] += taps[k] * x[(j + static_cast<int>(k)) % n];
    std::vector<double> half(n / 2);
    for (int i = 0; i < n / 2; ++i)
        half[i] = full[2 * i];
    return half;
}

struct Matrix {
    int rows = 0, cols = 0;
    std::vector<double> v;
};

Matrix transpose(const Matrix& m) {
    Matrix t{m.cols, m.rows, std::vector<double>(m.v.size())};
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x)
            t.v[static_cast<size_t>(x) * m.rows + y] = m.v[static_cast<size_t>(y) * m.cols + x];
    return t;
}

Matrix filter_rows(const Matrix& m, const std::vector<double>& taps) {
    Matrix out{m.rows, m.cols / 2, {}};
    out.v.reserve(static_cast<size_t>(out.rows) * out.cols);
    for (int y = 0; y < m.rows; ++y) {
        std::vector<double> row(m.v.begin() + static_cast<size_t>(y) * m.cols,
                                m.v.begin() + static_cast<size_t>(y + 1) * m.cols);
        const auto half = conv_then_downsample(row, taps);
        out.v.insert(out.v.end(), half.begin(), half.end());
    }
    return out;
}

struct OracleLevel {
    Matrix ll, hl, lh, hh;
};

OracleLevel oracle_dwt2_level(const Matrix& m, const FilterBank& bank) {
    const Matrix lo = filter_rows(m, bank.lowpass);
    const Matrix hi = filter_rows(m, bank.highpass);
    OracleLevel out;
    out.ll = transpose(filter_rows(transpose(lo), bank.lowpass));
    out.lh = transpose(filter_rows(transpose(lo), bank.highpass));
    out.hl = transpose(filter_rows(transpose(hi), bank.lowpass));
    out.hh = transpose(filter_rows(transpose(hi), bank.highpass));
    return out;
}

} // namespace

TEST_CASE("filter banks satisfy the orthonormality conditions") {
    for (const FilterBank& bank : {FilterBank::sym8(), FilterBank::haar()}) {
        double sum = 0.0, sumsq = 0.0;
        for (double h : bank.lowpass) {
            sum += h;
            sumsq += h * h;
        }
        CHECK(std::abs(sum - std::sqrt(2.0)) < 1e-10);
        CHECK(std::abs(sumsq - 1.0) < 1e-10);
        for (int m = 1; 2 * m < bank.taps(); ++m) {
            double dot = 0.0;
            for (int k = 0; k + 2 * m < bank.taps(); ++k)
                dot += bank.lowpass[k] * bank.lowpass[k + 2 * m];
            CHECK(std::abs(dot) < 1e-10);
        }
    }
    CHECK(FilterBank::sym8().taps() == 16);
    CHECK(FilterBank::haar().taps() == 2);
    CHECK_ERRC(FilterBank::from_lowpass("bogus", {0.5, 0.5}), Errc::invalid_argument);
}

TEST_CASE("max_levels") {
    CHECK(max_levels(512, 512, 16) == 5);
    CHECK(max_levels(512, 512, 2) == 9);
    CHECK(max_levels(16, 16, 16) == 1); // clamped up to 1
    CHECK_ERRC(max_levels(8, 8, 16), Errc::image_too_small);
}

TEST_CASE("dwt2 of a constant image") {
    const FilterBank bank = FilterBank::sym8();
    Image img = make_image(64, 64, 0.065, 0.3);
    const WaveletPyramid pyr = dwt2(img, bank, 2);
    // the residue floor is the precision of the published tap table
    for (const auto& level : pyr.detail)
        for (const Band* b : {&level.hl, &level.lh, &level.hh})
            for (double c : b->v)
                CHECK(std::abs(c) < 1e-10);
    for (double c : pyr.approx.v)
        CHECK(c == doctest::Approx(0.3 * 4.0).epsilon(1e-10)); // constant * 2^levels
}

TEST_CASE("haar on [[1,1],[1,1]]") {
    const FilterBank bank = FilterBank::haar();
    Image img = make_image(2, 2, 1.0, 1.0);
    const WaveletPyramid pyr = dwt2(img, bank, 1);
    REQUIRE(pyr.approx.v.size() == 1);
    CHECK(pyr.approx.v[0] == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(pyr.detail[0].hl.v[0] == doctest::Approx(0.0));
    CHECK(pyr.detail[0].lh.v[0] == doctest::Approx(0.0));
    CHECK(pyr.detail[0].hh.v[0] == doctest::Approx(0.0));

    const Image back = idwt2(pyr, bank);
    for (double v : back.pixels)
        CHECK(v == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("dwt2 matches the direct convolution + downsample oracle") {
    const FilterBank bank = FilterBank::sym8();
    const Image img = random_image(64, 64, 42);
    const WaveletPyramid pyr = dwt2(img, bank, 2);

    Matrix m{64, 64, img.pixels};
    const OracleLevel l1 = oracle_dwt2_level(m, bank);
    const OracleLevel l2 = oracle_dwt2_level(l1.ll, bank);

    auto max_abs_diff = [](const std::vector<double>& a, const std::vector<double>& b) {
        double best = 0.0;
        for (size_t i = 0; i < a.size(); ++i)
            best = std::max(best, std::abs(a[i] - b[i]));
        return best;
    };
    CHECK(max_abs_diff(pyr.detail[0].hl.v, l1.hl.v) < 1e-10);
    CHECK(max_abs_diff(pyr.detail[0].lh.v, l1.lh.v) < 1e-10);
    CHECK(max_abs_diff(pyr.detail[0].hh.v, l1.hh.v) < 1e-10);
    CHECK(max_abs_diff(pyr.detail[1].hl.v, l2.hl.v) < 1e-10);
    CHECK(max_abs_diff(pyr.detail[1].lh.v, l2.lh.v) < 1e-10);
    CHECK(max_abs_diff(pyr.detail[1].hh.v, l2.hh.v) < 1e-10);
    CHECK(max_abs_diff(pyr.approx.v, l2.ll.v) < 1e-10);
}

TEST_CASE("perfect reconstruction and energy conservation") {
    std::mt19937_64 rng(5);
    for (const FilterBank& bank : {FilterBank::sym8(), FilterBank::haar()}) {
        for (int size : {32, 64}) {
            const int cap = max_levels(size, size, bank.taps());
            for (int levels = 1; levels <= cap; ++levels) {
                const Image img = random_image(size, size, rng());
                const WaveletPyramid pyr = dwt2(img, bank, levels);

                double in_energy = 0.0, coef_energy = 0.0;
                for (double v : img.pixels)
                    in_energy += v * v;
                for (const auto& level : pyr.detail)
                    for (const Band* b : {&level.hl, &level.lh, &level.hh})
                        for (double c : b->v)
                            coef_energy += c * c;
                for (double c : pyr.approx.v)
                    coef_energy += c * c;
                CHECK(std::abs(in_energy - coef_energy) / in_energy < 1e-9);

                size_t count = pyr.approx.v.size();
                for (const auto& level : pyr.detail)
                    count += level.hl.v.size() + level.lh.v.size() + level.hh.v.size();
                CHECK(count == img.pixels.size());

                const Image back = idwt2(pyr, bank);
                CHECK(rms_diff(back.pixels, img.pixels) < 1e-6);
            }
        }
    }
}

TEST_CASE("idwt2 of a zero pyramid is a zero image") {
    const FilterBank bank = FilterBank::sym8();
    WaveletPyramid pyr = dwt2(random_image(32, 32, 3), bank, 1);
    for (auto* b : {&pyr.detail[0].hl, &pyr.detail[0].lh, &pyr.detail[0].hh, &pyr.approx})
        std::fill(b->v.begin(), b->v.end(), 0.0);
    const Image back = idwt2(pyr, bank);
    for (double v : back.pixels)
        CHECK(v == 0.0);
}

TEST_CASE("dwt2 rejects level overflow") {
    const Image img = random_image(32, 32, 1);
    CHECK_ERRC(dwt2(img, FilterBank::sym8(), 3), Errc::level_overflow);
}

TEST_CASE("select_max on a single plane changes nothing") {
    const FilterBank bank = FilterBank::sym8();
    const WaveletPyramid pyr = dwt2(random_image(32, 32, 9), bank, 1);
    const auto [fused, map] = select_max({pyr});
    CHECK(fused.detail[0].hl.v == pyr.detail[0].hl.v);
    CHECK(fused.approx.v == pyr.approx.v);
    for (int idx : map.level[0].plane)
        CHECK(idx == 0);
}

TEST_CASE("select_max picks the dominant plane") {
    const FilterBank bank = FilterBank::sym8();
    const WaveletPyramid a = dwt2(random_image(32, 32, 10), bank, 1);
    WaveletPyramid b = a;
    for (auto* band : {&b.detail[0].hl, &b.detail[0].lh, &b.detail[0].hh})
        for (double& c : band->v)
            c *= 2.0;
    const auto [fused, map] = select_max({a, b});
    for (int idx : map.level[0].plane)
        CHECK(idx == 1);
    CHECK(fused.detail[0].hh.v == b.detail[0].hh.v);
}

TEST_CASE("select_max equals the exhaustive argmax oracle") {
    const FilterBank bank = FilterBank::sym8();
    std::vector<WaveletPyramid> pyrs;
    for (uint64_t s = 0; s < 3; ++s)
        pyrs.push_back(dwt2(random_image(32, 32, 100 + s), bank, 1));
    const auto [fused, map] = select_max(pyrs);

    const size_t n = pyrs[0].detail[0].hl.v.size();
    for (size_t i = 0; i < n; ++i) {
        int wins[3];
        int bi = 0;
        for (auto band : {&WaveletPyramid::Level::hl, &WaveletPyramid::Level::lh,
                          &WaveletPyramid::Level::hh}) {
            int best = 0;
            for (int p = 1; p < 3; ++p)
                if (std::abs((pyrs[p].detail[0].*band).v[i]) >
                    std::abs((pyrs[best].detail[0].*band).v[i]))
                    best = p;
            wins[bi++] = best;
            CHECK((fused.detail[0].*band).v[i] == (pyrs[best].detail[0].*band).v[i]);
        }
        // majority with lowest-index ties
        int expect = -1, expect_count = 0;
        for (int p = 0; p < 3; ++p) {
            const int count = (wins[0] == p) + (wins[1] == p) + (wins[2] == p);
            if (count > expect_count) {
                expect = p;
                expect_count = count;
            }
        }
        CHECK(map.level[0].plane[i] == expect);

        double mean = 0.0;
        for (const auto& p : pyrs)
            mean += p.approx.v[i];
        CHECK(fused.approx.v[i] == doctest::Approx(mean / 3.0).epsilon(1e-15));
    }
}

TEST_CASE("select_max rejects mismatched shapes") {
    const FilterBank bank = FilterBank::sym8();
    const WaveletPyramid a = dwt2(random_image(32, 32, 1), bank, 1);
    const WaveletPyramid b = dwt2(random_image(64, 64, 2), bank, 1);
    CHECK_ERRC(select_max({a, b}), Errc::shape_mismatch);
}

TEST_CASE("consistency_filter leaves a uniform map unchanged") {
    SelectionMap map;
    map.level.resize(1);
    map.level[0].rows = 8;
    map.level[0].cols = 8;
    map.level[0].plane.assign(64, 2);
    const SelectionMap out = consistency_filter(map);
    CHECK(out.level[0].plane == map.level[0].plane);
}

TEST_CASE("consistency_filter flips a lone dissenter") {
    SelectionMap map;
    map.level.resize(1);
    map.level[0].rows = 5;
    map.level[0].cols = 5;
    map.level[0].plane.assign(25, 3);
    map.level[0].at(2, 2) = 0;
    const SelectionMap out = consistency_filter(map);
    CHECK(out.level[0].at(2, 2) == 3);
}

TEST_CASE("consistency_filter equals the brute-force windowed mode") {
    std::mt19937_64 rng(77);
    SelectionMap map;
    map.level.resize(1);
    auto& lvl = map.level[0];
    lvl.rows = 16;
    lvl.cols = 16;
    lvl.plane.resize(256);
    for (int& p : lvl.plane)
        p = static_cast<int>(rng() % 3);

    const SelectionMap out = consistency_filter(map);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            int best = -1, best_count = 0;
            for (int cand = 0; cand < 3; ++cand) {
                int count = 0;
                for (int wy = std::max(0, y - 1); wy <= std::min(15, y + 1); ++wy)
                    for (int wx = std::max(0, x - 1); wx <= std::min(15, x + 1); ++wx)
                        if (lvl.at(wy, wx) == cand)
                            ++count;
                if (count > best_count) {
                    best = cand;
                    best_count = count;
                }
            }
            CHECK(out.level[0].at(y, x) == best);
        }
}

TEST_CASE("fuse_wavelet is the identity on stacks of equal planes") {
    const Image plane = random_image(64, 64, 200);
    for (int copies : {1, 3, 5}) {
        ZStack stack = make_stack(std::vector<Image>(static_cast<size_t>(copies), plane), 0.5);
        const Image fused = fuse_wavelet(stack, FilterBank::sym8(), 12);
        CHECK(rms_diff(fused.pixels, plane.pixels) < 1e-6);
    }
}

TEST_CASE("fuse_wavelet output is invariant to plane order on equal planes") {
    const Image plane = random_image(32, 32, 300);
    ZStack stack = make_stack({plane, plane, plane}, 0.5);
    const Image a = fuse_wavelet(stack, FilterBank::haar(), 3);
    std::swap(stack.planes[0], stack.planes[2]);
    const Image b = fuse_wavelet(stack, FilterBank::haar(), 3);
    CHECK(a.pixels == b.pixels);
}

TEST_CASE("fuse_wavelet handles non-dyadic sizes via padding") {
    const Image plane = random_image(51, 71, 400);
    ZStack stack = make_stack({plane, plane}, 0.5);
    const Image fused = fuse_wavelet(stack, FilterBank::sym8(), 12);
    CHECK(fused.height == 51);
    CHECK(fused.width == 71);
    CHECK(rms_diff(fused.pixels, plane.pixels) < 1e-6);
}

TEST_CASE("dominating detail coefficients carry the fusion") {
    // plane 1 = 0.5 + 2*(plane0 - 0.5): same mean, double the detail energy
    const Image base = random_image(32, 32, 500);
    Image strong = base;
    for (double& v : strong.pixels)
        v = 0.5 + 2.0 * (v - 0.5);
    const FilterBank bank = FilterBank::haar();
    const WaveletPyramid pa = dwt2(base, bank, 2);
    const WaveletPyramid pb = dwt2(strong, bank, 2);
    const auto [fused, map] = select_max({pa, pb});
    for (int l = 0; l < 2; ++l) {
        CHECK(fused.detail[l].hl.v == pb.detail[l].hl.v);
        CHECK(fused.detail[l].lh.v == pb.detail[l].lh.v);
        CHECK(fused.detail[l].hh.v == pb.detail[l].hh.v);
    }
    for (const auto& lvl : map.level)
        for (int idx : lvl.plane)
            CHECK(idx == 1);
}

TEST_CASE("fusing a split-focus pair beats both inputs") {
    // left half sharp in plane 0, right half sharp in plane 1
    const int n = 64;
    Image truth = random_image(n, n, 600);
    auto blur_half = [&](const Image& src, bool left) {
        Image out = src;
        for (int y = 0; y < n; ++y)
            for (int x = left ? 0 : n / 2; x < (left ? n / 2 : n); ++x) {
                double s = 0.0;
                int c = 0;
                for (int dy = -2; dy <= 2; ++dy)
                    for (int dx = -2; dx <= 2; ++dx) {
                        const int yy = y + dy, xx = x + dx;
                        if (yy >= 0 && yy < n && xx >= 0 && xx < n) {
                            s += src.at(yy, xx);
                            ++c;
                        }
                    }
                out.at(y, x) = s / c;
            }
        return out;
    };
    const Image plane0 = blur_half(truth, false); // right blurred
    const Image plane1 = blur_half(truth, true);  // left blurred
    ZStack stack = make_stack({plane0, plane1}, 0.5);
    const Image fused = fuse_wavelet(stack, FilterBank::sym8(), 12);

    auto mse = [&](const Image& a) {
        double s = 0.0;
        for (size_t i = 0; i < a.pixels.size(); ++i)
            s += (a.pixels[i] - truth.pixels[i]) * (a.pixels[i] - truth.pixels[i]);
        return s / static_cast<double>(a.pixels.size());
    };
    CHECK(mse(fused) < std::min(mse(plane0), mse(plane1)));
}
