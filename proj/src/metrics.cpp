#include "edof/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

namespace edof {

BinaryMask make_mask(int height, int width, double pixel_pitch) {
    BinaryMask m;
    m.height = height;
    m.width = width;
    m.pixel_pitch = pixel_pitch;
    m.bits.assign(static_cast<size_t>(height) * width, 0);
    return m;
}

namespace {

std::vector<double> gaussian_window_1d(int window, double sigma) {
    std::vector<double> w(window);
    const double c = (window - 1) / 2.0;
    double sum = 0.0;
    for (int i = 0; i < window; ++i) {
        w[i] = std::exp(-0.5 * (i - c) * (i - c) / (sigma * sigma));
        sum += w[i];
    }
    for (double& v : w)
        v /= sum;
    return w;
}

// Valid-region separable Gaussian filter: output is (h-win+1) x (w-win+1).
std::vector<double> filter_valid(const std::vector<double>& in, int h, int w,
                                 const std::vector<double>& taps) {
    const int win = static_cast<int>(taps.size());
    const int ow = w - win + 1;
    std::vector<double> horiz(static_cast<size_t>(h) * ow);
    for (int y = 0; y < h; ++y) {
        const double* src = &in[static_cast<size_t>(y) * w];
        double* dst = &horiz[static_cast<size_t>(y) * ow];
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int k = 0; k < win; ++k)
                s += taps[k] * src[x + k];
            dst[x] = s;
        }
    }
    const int oh = h - win + 1;
    std::vector<double> out(static_cast<size_t>(oh) * ow, 0.0);
    for (int y = 0; y < oh; ++y) {
        double* dst = &out[static_cast<size_t>(y) * ow];
        for (int k = 0; k < win; ++k) {
            const double* src = &horiz[static_cast<size_t>(y + k) * ow];
            const double tap = taps[k];
            for (int x = 0; x < ow; ++x)
                dst[x] += tap * src[x];
        }
    }
    return out;
}

} // namespace

double ssim(const Image& a, const Image& b, const SsimConfig& cfg) {
    if (a.height != b.height || a.width != b.width)
        fail(Errc::dimension_mismatch, "ssim inputs differ in size");
    if (a.height < cfg.window || a.width < cfg.window)
        fail(Errc::image_too_small, "image smaller than the ssim window");

    const double c1 = cfg.k1 * cfg.dynamic_range * cfg.k1 * cfg.dynamic_range;
    const double c2 = cfg.k2 * cfg.dynamic_range * cfg.k2 * cfg.dynamic_range;
    const auto taps = gaussian_window_1d(cfg.window, cfg.sigma);

    const size_t n = a.size();
    std::vector<double> aa(n), bb(n), ab(n);
    for (size_t i = 0; i < n; ++i) {
        aa[i] = a.pixels[i] * a.pixels[i];
        bb[i] = b.pixels[i] * b.pixels[i];
        ab[i] = a.pixels[i] * b.pixels[i];
    }

    const auto mu_a = filter_valid(a.pixels, a.height, a.width, taps);
    const auto mu_b = filter_valid(b.pixels, a.height, a.width, taps);
    const auto m_aa = filter_valid(aa, a.height, a.width, taps);
    const auto m_bb = filter_valid(bb, a.height, a.width, taps);
    const auto m_ab = filter_valid(ab, a.height, a.width, taps);

    double total = 0.0;
    for (size_t i = 0; i < mu_a.size(); ++i) {
        const double ma = mu_a[i], mb = mu_b[i];
        const double va = m_aa[i] - ma * ma;
        const double vb = m_bb[i] - mb * mb;
        const double cov = m_ab[i] - ma * mb;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                 ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    return total / static_cast<double>(mu_a.size());
}

double otsu_threshold(const Image& image) {
    if (image.pixels.empty())
        fail(Errc::empty_input, "empty image");

    constexpr int kBins = 256;
    std::array<double, kBins> hist{};
    for (double v : image.pixels) {
        int bin = static_cast<int>(v * kBins);
        if (bin < 0) bin = 0;
        if (bin >= kBins) bin = kBins - 1;
        hist[bin] += 1.0;
    }
    const double total = static_cast<double>(image.pixels.size());
    double total_mass = 0.0;
    for (int i = 0; i < kBins; ++i)
        total_mass += hist[i] * i;

    // running sums over the lower class; split after bin t
    double best_var = 0.0;
    int best_t = -1;
    double w0 = 0.0, mass0 = 0.0;
    for (int t = 0; t < kBins - 1; ++t) {
        w0 += hist[t];
        mass0 += hist[t] * t;
        const double w1 = total - w0;
        if (w0 <= 0.0 || w1 <= 0.0)
            continue;
        const double mu0 = mass0 / w0;
        const double mu1 = (total_mass - mass0) / w1;
        const double var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if (var > best_var) {
            best_var = var;
            best_t = t;
        }
    }
    if (best_t < 0 || best_var <= 0.0)
        fail(Errc::degenerate_histogram, "no threshold separates the histogram");
    return (best_t + 1) / static_cast<double>(kBins);
}

ComponentLabels connected_components(const BinaryMask& mask) {
    ComponentLabels out;
    out.height = mask.height;
    out.width = mask.width;
    out.label.assign(static_cast<size_t>(mask.height) * mask.width, 0);

    // two-pass union-find over provisional labels
    std::vector<int> parent(1, 0);
    auto find = [&parent](int a) {
        while (parent[a] != a)
            a = parent[a] = parent[parent[a]];
        return a;
    };

    std::vector<int> prov(out.label.size(), 0);
    int next = 0;
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            if (!mask.at(y, x))
                continue;
            int link = 0;
            const int neighbors[4][2] = {{y, x - 1}, {y - 1, x - 1}, {y - 1, x}, {y - 1, x + 1}};
            for (const auto& nb : neighbors) {
                if (nb[0] < 0 || nb[1] < 0 || nb[1] >= mask.width)
                    continue;
                const int lab = prov[static_cast<size_t>(nb[0]) * mask.width + nb[1]];
                if (lab == 0)
                    continue;
                if (link == 0) {
                    link = find(lab);
                } else {
                    const int r = find(lab);
                    if (r != link)
                        parent[std::max(r, link)] = std::min(r, link);
                    link = std::min(r, link);
                }
            }
            if (link == 0) {
                link = ++next;
                parent.push_back(link);
            }
            prov[static_cast<size_t>(y) * mask.width + x] = link;
        }
    }

    // relabel roots in first-encounter order
    std::vector<int> remap(parent.size(), 0);
    out.count = 0;
    for (size_t i = 0; i < prov.size(); ++i) {
        if (prov[i] == 0)
            continue;
        const int root = find(prov[i]);
        if (remap[root] == 0) {
            remap[root] = ++out.count;
            out.area.push_back(0);
        }
        out.label[i] = remap[root];
        ++out.area[remap[root] - 1];
    }
    return out;
}

BinaryMask segment_parasite_regions(const Image& image, double min_area_um2,
                                    double max_area_um2) {
    if (image.pixel_pitch <= 0)
        fail(Errc::invalid_argument, "image lacks a pixel pitch");

    const double threshold = otsu_threshold(image);
    BinaryMask fg = make_mask(image.height, image.width, image.pixel_pitch);
    for (size_t i = 0; i < image.pixels.size(); ++i)
        fg.bits[i] = image.pixels[i] < threshold ? 1 : 0;

    const ComponentLabels cc = connected_components(fg);
    const double px_area = image.pixel_pitch * image.pixel_pitch;
    std::vector<uint8_t> keep(static_cast<size_t>(cc.count), 0);
    for (int k = 0; k < cc.count; ++k) {
        const double area = static_cast<double>(cc.area[k]) * px_area;
        keep[k] = (area >= min_area_um2 && area <= max_area_um2) ? 1 : 0;
    }

    BinaryMask out = make_mask(image.height, image.width, image.pixel_pitch);
    for (size_t i = 0; i < out.bits.size(); ++i)
        out.bits[i] = (cc.label[i] > 0 && keep[cc.label[i] - 1]) ? 1 : 0;
    return out;
}

double dice(const BinaryMask& a, const BinaryMask& b) {
    if (a.height != b.height || a.width != b.width)
        fail(Errc::dimension_mismatch, "dice masks differ in size");
    size_t na = 0, nb = 0, ni = 0;
    for (size_t i = 0; i < a.bits.size(); ++i) {
        na += a.bits[i] ? 1 : 0;
        nb += b.bits[i] ? 1 : 0;
        ni += (a.bits[i] && b.bits[i]) ? 1 : 0;
    }
    if (na + nb == 0)
        return 1.0;
    return 2.0 * static_cast<double>(ni) / static_cast<double>(na + nb);
}

} // namespace edof
