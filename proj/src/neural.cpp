#include "edof/neural.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace edof {

std::vector<TensorSpec> tensor_specs(const ArchConfig& cfg) {
    if (cfg.base_width < 1 || cfg.residual_blocks < 0)
        fail(Errc::invalid_argument, "base width must be >= 1 and residual blocks >= 0");
    if (cfg.variant == Variant::volumetric && cfg.input_planes < 1)
        fail(Errc::invalid_argument, "volumetric variant needs a fixed plane count >= 1");

    const int f = cfg.base_width;
    std::vector<TensorSpec> specs;
    auto conv = [&specs](std::vector<int> dims, int in_c, int out_c) {
        int k = 1;
        for (size_t i = 2; i < dims.size(); ++i)
            k *= dims[i];
        specs.push_back({std::move(dims), in_c * k, out_c * k, false});
        specs.push_back({{out_c}, 0, 0, true});
    };

    if (cfg.variant == Variant::max_fusion) {
        conv({f, 1, 9, 9}, 1, f);
        conv({2 * f, f, 3, 3}, f, 2 * f);
        conv({4 * f, 2 * f, 3, 3}, 2 * f, 4 * f);
    } else {
        conv({f, 1, 3, 9, 9}, 1, f);
        conv({2 * f, f, 3, 3, 3}, f, 2 * f);
        conv({4 * f, 2 * f, 3, 3, 3}, 2 * f, 4 * f);
    }
    for (int r = 0; r < cfg.residual_blocks; ++r) {
        conv({4 * f, 4 * f, 3, 3}, 4 * f, 4 * f);
        conv({4 * f, 4 * f, 3, 3}, 4 * f, 4 * f);
    }
    // transposed convs store [in, out, kh, kw]
    conv({4 * f, 2 * f, 3, 3}, 4 * f, 2 * f);
    conv({2 * f, f, 3, 3}, 2 * f, f);
    conv({1, f, 9, 9}, f, 1);
    return specs;
}

NetworkParams init_params(const ArchConfig& cfg, uint64_t seed, Precision precision) {
    const auto specs = tensor_specs(cfg);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    NetworkParams params;
    params.precision = precision;
    params.tensors.reserve(specs.size());
    for (const auto& spec : specs) {
        Tensor t;
        t.dims = spec.dims;
        t.v.assign(t.count(), 0.0);
        if (!spec.bias) {
            const double bound = std::sqrt(6.0 / (spec.fan_in + spec.fan_out));
            for (double& w : t.v) {
                w = (2.0 * unit(rng) - 1.0) * bound;
                if (precision == Precision::f32)
                    w = static_cast<double>(static_cast<float>(w));
            }
        }
        params.tensors.push_back(std::move(t));
    }
    return params;
}

ZStack pre_upsample(const ZStack& stack, int target_h, int target_w) {
    if (stack.planes.empty())
        fail(Errc::empty_input, "empty stack");
    const Image& first = stack.planes.front();
    if (target_h < first.height || target_w < first.width)
        fail(Errc::invalid_argument, "pre_upsample cannot shrink");
    if (target_h == first.height && target_w == first.width)
        return stack;

    const int sh = first.height, sw = first.width;
    const double ry = target_h > 1 && sh > 1 ? static_cast<double>(sh - 1) / (target_h - 1) : 0.0;
    const double rx = target_w > 1 && sw > 1 ? static_cast<double>(sw - 1) / (target_w - 1) : 0.0;
    const double pitch = (sh > 1 && target_h > 1)
                             ? first.pixel_pitch * (sh - 1) / (target_h - 1)
                             : first.pixel_pitch * sh / target_h;

    ZStack out;
    out.z_step = stack.z_step;
    for (const Image& plane : stack.planes) {
        Image up = make_image(target_h, target_w, pitch);
        for (int y = 0; y < target_h; ++y) {
            const double fy = y * ry;
            const int y0 = std::min(sh - 1, static_cast<int>(fy));
            const int y1 = std::min(sh - 1, y0 + 1);
            const double wy = fy - y0;
            for (int x = 0; x < target_w; ++x) {
                const double fx = x * rx;
                const int x0 = std::min(sw - 1, static_cast<int>(fx));
                const int x1 = std::min(sw - 1, x0 + 1);
                const double wx = fx - x0;
                up.at(y, x) = (1 - wy) * ((1 - wx) * plane.at(y0, x0) + wx * plane.at(y0, x1)) +
                              wy * ((1 - wx) * plane.at(y1, x0) + wx * plane.at(y1, x1));
            }
        }
        out.planes.push_back(std::move(up));
    }
    return out;
}

double mse_loss(const Image& pred, const Image& target) {
    if (pred.height != target.height || pred.width != target.width)
        fail(Errc::dimension_mismatch, "mse_loss inputs differ in size");
    double s = 0.0;
    for (size_t i = 0; i < pred.pixels.size(); ++i) {
        const double d = pred.pixels[i] - target.pixels[i];
        s += d * d;
    }
    return s / static_cast<double>(pred.pixels.size());
}

// ---------------------------------------------------------------------------
// internal dense compute
// ---------------------------------------------------------------------------

namespace {

struct Vol {
    int c = 0, h = 0, w = 0;
    std::vector<double> v;

    double* ch(int ci) { return &v[static_cast<size_t>(ci) * h * w]; }
    const double* ch(int ci) const { return &v[static_cast<size_t>(ci) * h * w]; }
};

Vol make_vol(int c, int h, int w, double fill = 0.0) {
    Vol vol;
    vol.c = c;
    vol.h = h;
    vol.w = w;
    vol.v.assign(static_cast<size_t>(c) * h * w, fill);
    return vol;
}

// channel-major volume with a depth axis
struct Vol4 {
    int c = 0, d = 0, h = 0, w = 0;
    std::vector<double> v;

    double* slab(int ci, int di) {
        return &v[(static_cast<size_t>(ci) * d + di) * h * w];
    }
    const double* slab(int ci, int di) const {
        return &v[(static_cast<size_t>(ci) * d + di) * h * w];
    }
};

Vol4 make_vol4(int c, int d, int h, int w, double fill = 0.0) {
    Vol4 vol;
    vol.c = c;
    vol.d = d;
    vol.h = h;
    vol.w = w;
    vol.v.assign(static_cast<size_t>(c) * d * h * w, fill);
    return vol;
}

int ceil_div(int a, int b) { return a >= 0 ? (a + b - 1) / b : -(-a / b); }

// 2D correlation, zero padding. w layout [oc, ic, kh, kw].
Vol conv2d_fwd(const Vol& in, const Tensor& w, const Tensor& b, int stride, int pad) {
    const int oc_n = w.dims[0], ic_n = w.dims[1], kh = w.dims[2], kw = w.dims[3];
    const int oh = (in.h + 2 * pad - kh) / stride + 1;
    const int ow = (in.w + 2 * pad - kw) / stride + 1;
    Vol out = make_vol(oc_n, oh, ow);
    for (int oc = 0; oc < oc_n; ++oc)
        std::fill_n(out.ch(oc), static_cast<size_t>(oh) * ow, b.v[oc]);

    const double* wp = w.v.data();
    for (int oc = 0; oc < oc_n; ++oc) {
        for (int ic = 0; ic < ic_n; ++ic) {
            const double* src = in.ch(ic);
            double* dst = out.ch(oc);
            for (int ky = 0; ky < kh; ++ky) {
                const int oy0 = std::max(0, ceil_div(pad - ky, stride));
                const int oy1 = std::min(oh - 1, (in.h - 1 + pad - ky) / stride);
                for (int kx = 0; kx < kw; ++kx) {
                    const double wv = wp[((static_cast<size_t>(oc) * ic_n + ic) * kh + ky) * kw + kx];
                    if (wv == 0.0)
                        continue;
                    const int ox0 = std::max(0, ceil_div(pad - kx, stride));
                    const int ox1 = std::min(ow - 1, (in.w - 1 + pad - kx) / stride);
                    for (int oy = oy0; oy <= oy1; ++oy) {
                        const double* sr = src + static_cast<size_t>(oy * stride + ky - pad) * in.w;
                        double* dr = dst + static_cast<size_t>(oy) * ow;
                        if (stride == 1) {
                            const double* s = sr + kx - pad + ox0;
                            for (int ox = ox0; ox <= ox1; ++ox)
                                dr[ox] += wv * *s++;
                        } else {
                            for (int ox = ox0; ox <= ox1; ++ox)
                                dr[ox] += wv * sr[ox * stride + kx - pad];
                        }
                    }
                }
            }
        }
    }
    return out;
}

// Gradients of conv2d_fwd. grad_in may be null for the first layer.
void conv2d_bwd(const Vol& in, const Tensor& w, const Vol& grad_out, int stride, int pad,
                Vol* grad_in, Tensor& grad_w, Tensor& grad_b) {
    const int oc_n = w.dims[0], ic_n = w.dims[1], kh = w.dims[2], kw = w.dims[3];
    const int oh = grad_out.h, ow = grad_out.w;

    for (int oc = 0; oc < oc_n; ++oc) {
        const double* g = grad_out.ch(oc);
        double s = 0.0;
        for (size_t i = 0; i < static_cast<size_t>(oh) * ow; ++i)
            s += g[i];
        grad_b.v[oc] += s;
    }

    for (int oc = 0; oc < oc_n; ++oc) {
        const double* g = grad_out.ch(oc);
        for (int ic = 0; ic < ic_n; ++ic) {
            const double* src = in.ch(ic);
            double* gi = grad_in ? grad_in->ch(ic) : nullptr;
            for (int ky = 0; ky < kh; ++ky) {
                const int oy0 = std::max(0, ceil_div(pad - ky, stride));
                const int oy1 = std::min(oh - 1, (in.h - 1 + pad - ky) / stride);
                for (int kx = 0; kx < kw; ++kx) {
                    const size_t widx = ((static_cast<size_t>(oc) * ic_n + ic) * kh + ky) * kw + kx;
                    const double wv = w.v[widx];
                    const int ox0 = std::max(0, ceil_div(pad - kx, stride));
                    const int ox1 = std::min(ow - 1, (in.w - 1 + pad - kx) / stride);
                    double acc = 0.0;
                    for (int oy = oy0; oy <= oy1; ++oy) {
                        const double* gr = g + static_cast<size_t>(oy) * ow;
                        const double* sr = src + static_cast<size_t>(oy * stride + ky - pad) * in.w;
                        double* ir = gi ? gi + static_cast<size_t>(oy * stride + ky - pad) * in.w
                                        : nullptr;
                        for (int ox = ox0; ox <= ox1; ++ox) {
                            const int ix = ox * stride + kx - pad;
                            acc += gr[ox] * sr[ix];
                            if (ir)
                                ir[ix] += wv * gr[ox];
                        }
                    }
                    grad_w.v[widx] += acc;
                }
            }
        }
    }
}

// Transposed 2D conv (stride 2, pad 1, output padding 1 -> exact doubling).
// w layout [ic, oc, kh, kw].
Vol tconv2d_fwd(const Vol& in, const Tensor& w, const Tensor& b) {
    const int ic_n = w.dims[0], oc_n = w.dims[1], kh = w.dims[2], kw = w.dims[3];
    const int stride = 2, pad = 1;
    const int oh = in.h * 2, ow = in.w * 2;
    Vol out = make_vol(oc_n, oh, ow);
    for (int oc = 0; oc < oc_n; ++oc)
        std::fill_n(out.ch(oc), static_cast<size_t>(oh) * ow, b.v[oc]);

    for (int ic = 0; ic < ic_n; ++ic) {
        const double* src = in.ch(ic);
        for (int oc = 0; oc < oc_n; ++oc) {
            double* dst = out.ch(oc);
            for (int ky = 0; ky < kh; ++ky) {
                const int iy0 = std::max(0, ceil_div(pad - ky, stride));
                const int iy1 = std::min(in.h - 1, (oh - 1 + pad - ky) / stride);
                for (int kx = 0; kx < kw; ++kx) {
                    const double wv =
                        w.v[((static_cast<size_t>(ic) * oc_n + oc) * kh + ky) * kw + kx];
                    if (wv == 0.0)
                        continue;
                    const int ix0 = std::max(0, ceil_div(pad - kx, stride));
                    const int ix1 = std::min(in.w - 1, (ow - 1 + pad - kx) / stride);
                    for (int iy = iy0; iy <= iy1; ++iy) {
                        const double* sr = src + static_cast<size_t>(iy) * in.w;
                        double* dr = dst + static_cast<size_t>(iy * stride + ky - pad) * ow;
                        for (int ix = ix0; ix <= ix1; ++ix)
                            dr[ix * stride + kx - pad] += wv * sr[ix];
                    }
                }
            }
        }
    }
    return out;
}

void tconv2d_bwd(const Vol& in, const Tensor& w, const Vol& grad_out, Vol& grad_in,
                 Tensor& grad_w, Tensor& grad_b) {
    const int ic_n = w.dims[0], oc_n = w.dims[1], kh = w.dims[2], kw = w.dims[3];
    const int stride = 2, pad = 1;
    const int oh = grad_out.h, ow = grad_out.w;

    for (int oc = 0; oc < oc_n; ++oc) {
        const double* g = grad_out.ch(oc);
        double s = 0.0;
        for (size_t i = 0; i < static_cast<size_t>(oh) * ow; ++i)
            s += g[i];
        grad_b.v[oc] += s;
    }

    for (int ic = 0; ic < ic_n; ++ic) {
        const double* src = in.ch(ic);
        double* gi = grad_in.ch(ic);
        for (int oc = 0; oc < oc_n; ++oc) {
            const double* g = grad_out.ch(oc);
            for (int ky = 0; ky < kh; ++ky) {
                const int iy0 = std::max(0, ceil_div(pad - ky, stride));
                const int iy1 = std::min(in.h - 1, (oh - 1 + pad - ky) / stride);
                for (int kx = 0; kx < kw; ++kx) {
                    const size_t widx =
                        ((static_cast<size_t>(ic) * oc_n + oc) * kh + ky) * kw + kx;
                    const double wv = w.v[widx];
                    const int ix0 = std::max(0, ceil_div(pad - kx, stride));
                    const int ix1 = std::min(in.w - 1, (ow - 1 + pad - kx) / stride);
                    double acc = 0.0;
                    for (int iy = iy0; iy <= iy1; ++iy) {
                        const double* sr = src + static_cast<size_t>(iy) * in.w;
                        double* ir = gi + static_cast<size_t>(iy) * in.w;
                        const double* gr = g + static_cast<size_t>(iy * stride + ky - pad) * ow;
                        for (int ix = ix0; ix <= ix1; ++ix) {
                            const double gz = gr[ix * stride + kx - pad];
                            acc += sr[ix] * gz;
                            ir[ix] += wv * gz;
                        }
                    }
                    grad_w.v[widx] += acc;
                }
            }
        }
    }
}

// 3D correlation with z stride 1. w layout [oc, ic, kd, kh, kw].
Vol4 conv3d_fwd(const Vol4& in, const Tensor& w, const Tensor& b, int stride_hw, int pad_d,
                int pad_hw) {
    const int oc_n = w.dims[0], ic_n = w.dims[1], kd = w.dims[2], kh = w.dims[3],
              kw = w.dims[4];
    const int od = in.d + 2 * pad_d - kd + 1;
    const int oh = (in.h + 2 * pad_hw - kh) / stride_hw + 1;
    const int ow = (in.w + 2 * pad_hw - kw) / stride_hw + 1;
    Vol4 out = make_vol4(oc_n, od, oh, ow);
    for (int oc = 0; oc < oc_n; ++oc)
        for (int od_i = 0; od_i < od; ++od_i)
            std::fill_n(out.slab(oc, od_i), static_cast<size_t>(oh) * ow, b.v[oc]);

    for (int oc = 0; oc < oc_n; ++oc) {
        for (int ic = 0; ic < ic_n; ++ic) {
            for (int kz = 0; kz < kd; ++kz) {
                for (int od_i = 0; od_i < od; ++od_i) {
                    const int iz = od_i + kz - pad_d;
                    if (iz < 0 || iz >= in.d)
                        continue;
                    const double* src = in.slab(ic, iz);
                    double* dst = out.slab(oc, od_i);
                    for (int ky = 0; ky < kh; ++ky) {
                        const int oy0 = std::max(0, ceil_div(pad_hw - ky, stride_hw));
                        const int oy1 = std::min(oh - 1, (in.h - 1 + pad_hw - ky) / stride_hw);
                        for (int kx = 0; kx < kw; ++kx) {
                            const double wv =
                                w.v[(((static_cast<size_t>(oc) * ic_n + ic) * kd + kz) * kh + ky) *
                                        kw +
                                    kx];
                            if (wv == 0.0)
                                continue;
                            const int ox0 = std::max(0, ceil_div(pad_hw - kx, stride_hw));
                            const int ox1 =
                                std::min(ow - 1, (in.w - 1 + pad_hw - kx) / stride_hw);
                            for (int oy = oy0; oy <= oy1; ++oy) {
                                const double* sr =
                                    src + static_cast<size_t>(oy * stride_hw + ky - pad_hw) * in.w;
                                double* dr = dst + static_cast<size_t>(oy) * ow;
                                for (int ox = ox0; ox <= ox1; ++ox)
                                    dr[ox] += wv * sr[ox * stride_hw + kx - pad_hw];
                            }
                        }
                    }
                }
            }
        }
    }
    return out;
}

void conv3d_bwd(const Vol4& in, const Tensor& w, const Vol4& grad_out, int stride_hw, int pad_d,
                int pad_hw, Vol4* grad_in, Tensor& grad_w, Tensor& grad_b) {
    const int oc_n = w.dims[0], ic_n = w.dims[1], kd = w.dims[2], kh = w.dims[3],
              kw = w.dims[4];
    const int od = grad_out.d, oh = grad_out.h, ow = grad_out.w;

    for (int oc = 0; oc < oc_n; ++oc) {
        double s = 0.0;
        for (int od_i = 0; od_i < od; ++od_i) {
            const double* g = grad_out.slab(oc, od_i);
            for (size_t i = 0; i < static_cast<size_t>(oh) * ow; ++i)
                s += g[i];
        }
        grad_b.v[oc] += s;
    }

    for (int oc = 0; oc < oc_n; ++oc) {
        for (int ic = 0; ic < ic_n; ++ic) {
            for (int kz = 0; kz < kd; ++kz) {
                for (int od_i = 0; od_i < od; ++od_i) {
                    const int iz = od_i + kz - pad_d;
                    if (iz < 0 || iz >= in.d)
                        continue;
                    const double* src = in.slab(ic, iz);
                    double* gi = grad_in ? grad_in->slab(ic, iz) : nullptr;
                    const double* g = grad_out.slab(oc, od_i);
                    for (int ky = 0; ky < kh; ++ky) {
                        const int oy0 = std::max(0, ceil_div(pad_hw - ky, stride_hw));
                        const int oy1 = std::min(oh - 1, (in.h - 1 + pad_hw - ky) / stride_hw);
                        for (int kx = 0; kx < kw; ++kx) {
                            const size_t widx =
                                (((static_cast<size_t>(oc) * ic_n + ic) * kd + kz) * kh + ky) *
                                    kw +
                                kx;
                            const double wv = w.v[widx];
                            const int ox0 = std::max(0, ceil_div(pad_hw - kx, stride_hw));
                            const int ox1 =
                                std::min(ow - 1, (in.w - 1 + pad_hw - kx) / stride_hw);
                            double acc = 0.0;
                            for (int oy = oy0; oy <= oy1; ++oy) {
                                const double* gr = g + static_cast<size_t>(oy) * ow;
                                const double* sr =
                                    src + static_cast<size_t>(oy * stride_hw + ky - pad_hw) * in.w;
                                double* ir =
                                    gi ? gi + static_cast<size_t>(oy * stride_hw + ky - pad_hw) *
                                                  in.w
                                       : nullptr;
                                for (int ox = ox0; ox <= ox1; ++ox) {
                                    const int ix = ox * stride_hw + kx - pad_hw;
                                    acc += gr[ox] * sr[ix];
                                    if (ir)
                                        ir[ix] += wv * gr[ox];
                                }
                            }
                            grad_w.v[widx] += acc;
                        }
                    }
                }
            }
        }
    }
}

void relu_inplace(std::vector<double>& v) {
    for (double& x : v)
        if (x < 0.0) x = 0.0;
}

// mask taken from the stored post-activation (> 0 iff pre-activation > 0)
void relu_backward(const std::vector<double>& post, std::vector<double>& grad) {
    for (size_t i = 0; i < grad.size(); ++i)
        if (post[i] <= 0.0) grad[i] = 0.0;
}

struct LayerIdx {
    int enc1_w = 0, enc1_b = 1, enc2_w = 2, enc2_b = 3, enc3_w = 4, enc3_b = 5;
    int res0 = 6; // + 4 per block: c1w, c1b, c2w, c2b
    int dec1_w, dec1_b, dec2_w, dec2_b, out_w, out_b;

    explicit LayerIdx(int residual_blocks) {
        dec1_w = res0 + 4 * residual_blocks;
        dec1_b = dec1_w + 1;
        dec2_w = dec1_w + 2;
        dec2_b = dec1_w + 3;
        out_w = dec1_w + 4;
        out_b = dec1_w + 5;
    }
};

struct Trace {
    // max variant: per-plane encoder activations (post-relu)
    std::vector<Vol> enc_a1, enc_a2, enc_a3;
    std::vector<int> argmax; // winning plane per fused element
    // volumetric variant
    Vol4 enc3_a1, enc3_a2, enc3_a3;

    Vol fused;
    std::vector<Vol> res_in; // input of each residual block
    std::vector<Vol> res_a1; // post-relu inside each block
    Vol res_out;
    Vol dec_a1, dec_a2;
    Vol y; // final conv output, pre-tanh
};

void check_forward_pre(const ArchConfig& cfg, const ZStack& stack) {
    if (stack.planes.empty())
        fail(Errc::empty_input, "empty stack");
    const Image& first = stack.planes.front();
    if (first.height % 4 != 0 || first.width % 4 != 0)
        fail(Errc::dimension_mismatch, "plane dims must be divisible by 4");
    if (cfg.variant == Variant::volumetric &&
        static_cast<int>(stack.planes.size()) != cfg.input_planes)
        fail(Errc::dimension_mismatch,
             "volumetric model expects " + std::to_string(cfg.input_planes) + " planes, got " +
                 std::to_string(stack.planes.size()));
}

void check_params(const NetworkParams& params, const ArchConfig& cfg) {
    const auto specs = tensor_specs(cfg);
    if (params.tensors.size() != specs.size())
        fail(Errc::shape_mismatch, "parameter count does not match the architecture");
    for (size_t i = 0; i < specs.size(); ++i)
        if (params.tensors[i].dims != specs[i].dims)
            fail(Errc::shape_mismatch, "tensor " + std::to_string(i) + " shape mismatch");
}

Vol plane_to_vol(const Image& plane) {
    Vol v = make_vol(1, plane.height, plane.width);
    v.v = plane.pixels;
    return v;
}

// Shared tail: residual blocks, decoder, tanh. Fills the trace from `fused` on.
Image run_tail(const NetworkParams& p, const ArchConfig& cfg, const LayerIdx& li, Trace& tr,
               double pixel_pitch) {
    Vol x = tr.fused;
    tr.res_in.clear();
    tr.res_a1.clear();
    for (int r = 0; r < cfg.residual_blocks; ++r) {
        tr.res_in.push_back(x);
        Vol a1 = conv2d_fwd(x, p.tensors[li.res0 + 4 * r], p.tensors[li.res0 + 4 * r + 1], 1, 1);
        relu_inplace(a1.v);
        tr.res_a1.push_back(a1);
        Vol z2 = conv2d_fwd(a1, p.tensors[li.res0 + 4 * r + 2], p.tensors[li.res0 + 4 * r + 3], 1, 1);
        for (size_t i = 0; i < x.v.size(); ++i)
            x.v[i] += z2.v[i];
    }
    tr.res_out = x;

    Vol d1 = tconv2d_fwd(x, p.tensors[li.dec1_w], p.tensors[li.dec1_b]);
    relu_inplace(d1.v);
    tr.dec_a1 = d1;
    Vol d2 = tconv2d_fwd(d1, p.tensors[li.dec2_w], p.tensors[li.dec2_b]);
    relu_inplace(d2.v);
    tr.dec_a2 = d2;
    tr.y = conv2d_fwd(d2, p.tensors[li.out_w], p.tensors[li.out_b], 1, 4);

    Image out = make_image(tr.y.h, tr.y.w, pixel_pitch);
    for (size_t i = 0; i < out.pixels.size(); ++i)
        out.pixels[i] = (std::tanh(tr.y.v[i]) + 1.0) * 0.5;
    return out;
}

Image run_forward(const NetworkParams& p, const ArchConfig& cfg, const ZStack& stack,
                  Trace* trace) {
    check_forward_pre(cfg, stack);
    check_params(p, cfg);
    const LayerIdx li(cfg.residual_blocks);
    const Image& first = stack.planes.front();
    const int planes = static_cast<int>(stack.planes.size());

    Trace local;
    Trace& tr = trace ? *trace : local;

    if (cfg.variant == Variant::max_fusion) {
        for (int d = 0; d < planes; ++d) {
            Vol in = plane_to_vol(stack.planes[d]);
            Vol a1 = conv2d_fwd(in, p.tensors[li.enc1_w], p.tensors[li.enc1_b], 1, 4);
            relu_inplace(a1.v);
            Vol a2 = conv2d_fwd(a1, p.tensors[li.enc2_w], p.tensors[li.enc2_b], 2, 1);
            relu_inplace(a2.v);
            Vol a3 = conv2d_fwd(a2, p.tensors[li.enc3_w], p.tensors[li.enc3_b], 2, 1);
            relu_inplace(a3.v);

            if (d == 0) {
                tr.fused = a3;
                if (trace)
                    tr.argmax.assign(a3.v.size(), 0);
            } else {
                for (size_t i = 0; i < tr.fused.v.size(); ++i) {
                    if (a3.v[i] > tr.fused.v[i]) { // strict: ties keep the lowest plane
                        tr.fused.v[i] = a3.v[i];
                        if (trace)
                            tr.argmax[i] = d;
                    }
                }
            }
            if (trace) {
                tr.enc_a1.push_back(std::move(a1));
                tr.enc_a2.push_back(std::move(a2));
                tr.enc_a3.push_back(std::move(a3));
            }
        }
    } else {
        Vol4 in = make_vol4(1, planes, first.height, first.width);
        for (int d = 0; d < planes; ++d)
            std::copy(stack.planes[d].pixels.begin(), stack.planes[d].pixels.end(),
                      in.slab(0, d));
        Vol4 a1 = conv3d_fwd(in, p.tensors[li.enc1_w], p.tensors[li.enc1_b], 1, 1, 4);
        relu_inplace(a1.v);
        Vol4 a2 = conv3d_fwd(a1, p.tensors[li.enc2_w], p.tensors[li.enc2_b], 2, 1, 1);
        relu_inplace(a2.v);
        Vol4 a3 = conv3d_fwd(a2, p.tensors[li.enc3_w], p.tensors[li.enc3_b], 2, 1, 1);
        relu_inplace(a3.v);

        // flatten the z axis by averaging
        tr.fused = make_vol(a3.c, a3.h, a3.w);
        const double inv = 1.0 / a3.d;
        for (int c = 0; c < a3.c; ++c) {
            double* dst = tr.fused.ch(c);
            for (int d = 0; d < a3.d; ++d) {
                const double* src = a3.slab(c, d);
                for (size_t i = 0; i < static_cast<size_t>(a3.h) * a3.w; ++i)
                    dst[i] += inv * src[i];
            }
        }
        if (trace) {
            tr.enc3_a1 = std::move(a1);
            tr.enc3_a2 = std::move(a2);
            tr.enc3_a3 = std::move(a3);
        }
    }
    return run_tail(p, cfg, li, tr, first.pixel_pitch);
}

} // namespace

Image forward(const NetworkParams& params, const ArchConfig& cfg, const ZStack& stack) {
    return run_forward(params, cfg, stack, nullptr);
}

Gradients backward(const NetworkParams& params, const ArchConfig& cfg, const ZStack& stack,
                   const Image& target) {
    Trace tr;
    const Image out = run_forward(params, cfg, stack, &tr);
    if (out.height != target.height || out.width != target.width)
        fail(Errc::dimension_mismatch, "target size does not match the network output");

    const LayerIdx li(cfg.residual_blocks);
    Gradients g;
    g.tensors.resize(params.tensors.size());
    for (size_t i = 0; i < params.tensors.size(); ++i) {
        g.tensors[i].dims = params.tensors[i].dims;
        g.tensors[i].v.assign(params.tensors[i].count(), 0.0);
    }
    g.loss = mse_loss(out, target);

    // d(mse)/d(out) composed with out = (tanh(y)+1)/2
    const double inv_n = 1.0 / static_cast<double>(out.pixels.size());
    Vol gy = make_vol(1, out.height, out.width);
    for (size_t i = 0; i < out.pixels.size(); ++i) {
        const double t = 2.0 * out.pixels[i] - 1.0; // tanh(y)
        const double go = 2.0 * (out.pixels[i] - target.pixels[i]) * inv_n;
        gy.v[i] = go * 0.5 * (1.0 - t * t);
    }

    // output conv
    Vol g_d2 = make_vol(tr.dec_a2.c, tr.dec_a2.h, tr.dec_a2.w);
    conv2d_bwd(tr.dec_a2, params.tensors[li.out_w], gy, 1, 4, &g_d2, g.tensors[li.out_w],
               g.tensors[li.out_b]);
    relu_backward(tr.dec_a2.v, g_d2.v);

    Vol g_d1 = make_vol(tr.dec_a1.c, tr.dec_a1.h, tr.dec_a1.w);
    tconv2d_bwd(tr.dec_a1, params.tensors[li.dec2_w], g_d2, g_d1, g.tensors[li.dec2_w],
                g.tensors[li.dec2_b]);
    relu_backward(tr.dec_a1.v, g_d1.v);

    Vol gx = make_vol(tr.res_out.c, tr.res_out.h, tr.res_out.w);
    tconv2d_bwd(tr.res_out, params.tensors[li.dec1_w], g_d1, gx, g.tensors[li.dec1_w],
                g.tensors[li.dec1_b]);

    // residual blocks in reverse; gradient flows through both branches
    for (int r = cfg.residual_blocks - 1; r >= 0; --r) {
        Vol g_a1 = make_vol(tr.res_a1[r].c, tr.res_a1[r].h, tr.res_a1[r].w);
        conv2d_bwd(tr.res_a1[r], params.tensors[li.res0 + 4 * r + 2], gx, 1, 1, &g_a1,
                   g.tensors[li.res0 + 4 * r + 2], g.tensors[li.res0 + 4 * r + 3]);
        relu_backward(tr.res_a1[r].v, g_a1.v);
        conv2d_bwd(tr.res_in[r], params.tensors[li.res0 + 4 * r], g_a1, 1, 1, &gx,
                   g.tensors[li.res0 + 4 * r], g.tensors[li.res0 + 4 * r + 1]);
    }

    if (cfg.variant == Variant::max_fusion) {
        const int planes = static_cast<int>(stack.planes.size());
        for (int d = 0; d < planes; ++d) {
            Vol g_a3 = make_vol(tr.fused.c, tr.fused.h, tr.fused.w);
            bool any = false;
            for (size_t i = 0; i < gx.v.size(); ++i) {
                if (tr.argmax[i] == d && gx.v[i] != 0.0) {
                    g_a3.v[i] = gx.v[i];
                    any = true;
                }
            }
            if (!any)
                continue;
            relu_backward(tr.enc_a3[d].v, g_a3.v);
            Vol g_a2 = make_vol(tr.enc_a2[d].c, tr.enc_a2[d].h, tr.enc_a2[d].w);
            conv2d_bwd(tr.enc_a2[d], params.tensors[li.enc3_w], g_a3, 2, 1, &g_a2,
                       g.tensors[li.enc3_w], g.tensors[li.enc3_b]);
            relu_backward(tr.enc_a2[d].v, g_a2.v);
            Vol g_a1 = make_vol(tr.enc_a1[d].c, tr.enc_a1[d].h, tr.enc_a1[d].w);
            conv2d_bwd(tr.enc_a1[d], params.tensors[li.enc2_w], g_a2, 2, 1, &g_a1,
                       g.tensors[li.enc2_w], g.tensors[li.enc2_b]);
            relu_backward(tr.enc_a1[d].v, g_a1.v);
            conv2d_bwd(plane_to_vol(stack.planes[d]), params.tensors[li.enc1_w], g_a1, 1, 4,
                       nullptr, g.tensors[li.enc1_w], g.tensors[li.enc1_b]);
        }
    } else {
        const Vol4& a3 = tr.enc3_a3;
        Vol4 g_a3 = make_vol4(a3.c, a3.d, a3.h, a3.w);
        const double inv = 1.0 / a3.d;
        for (int c = 0; c < a3.c; ++c)
            for (int d = 0; d < a3.d; ++d) {
                double* dst = g_a3.slab(c, d);
                const double* src = gx.ch(c);
                for (size_t i = 0; i < static_cast<size_t>(a3.h) * a3.w; ++i)
                    dst[i] = inv * src[i];
            }
        relu_backward(a3.v, g_a3.v);
        Vol4 g_a2 = make_vol4(tr.enc3_a2.c, tr.enc3_a2.d, tr.enc3_a2.h, tr.enc3_a2.w);
        conv3d_bwd(tr.enc3_a2, params.tensors[li.enc3_w], g_a3, 2, 1, 1, &g_a2,
                   g.tensors[li.enc3_w], g.tensors[li.enc3_b]);
        relu_backward(tr.enc3_a2.v, g_a2.v);
        Vol4 g_a1 = make_vol4(tr.enc3_a1.c, tr.enc3_a1.d, tr.enc3_a1.h, tr.enc3_a1.w);
        conv3d_bwd(tr.enc3_a1, params.tensors[li.enc2_w], g_a2, 2, 1, 1, &g_a1,
                   g.tensors[li.enc2_w], g.tensors[li.enc2_b]);
        relu_backward(tr.enc3_a1.v, g_a1.v);
        const Image& first = stack.planes.front();
        Vol4 in = make_vol4(1, static_cast<int>(stack.planes.size()), first.height, first.width);
        for (size_t d = 0; d < stack.planes.size(); ++d)
            std::copy(stack.planes[d].pixels.begin(), stack.planes[d].pixels.end(),
                      in.slab(0, static_cast<int>(d)));
        conv3d_bwd(in, params.tensors[li.enc1_w], g_a1, 1, 1, 4, nullptr, g.tensors[li.enc1_w],
                   g.tensors[li.enc1_b]);
    }
    return g;
}

namespace {

std::pair<ZStack, Image> crop_pair(const std::pair<ZStack, Image>& sample, int patch,
                                   std::mt19937_64& rng) {
    const Image& target = sample.second;
    if (patch <= 0 || patch >= target.height || patch >= target.width)
        return sample;
    if (patch % 4 != 0)
        fail(Errc::invalid_argument, "patch size must be divisible by 4");
    std::uniform_int_distribution<int> dy(0, target.height - patch);
    std::uniform_int_distribution<int> dx(0, target.width - patch);
    const int oy = dy(rng), ox = dx(rng);

    auto crop = [&](const Image& src) {
        Image out = make_image(patch, patch, src.pixel_pitch);
        for (int y = 0; y < patch; ++y)
            for (int x = 0; x < patch; ++x)
                out.at(y, x) = src.at(oy + y, ox + x);
        return out;
    };
    ZStack stack;
    stack.z_step = sample.first.z_step;
    for (const Image& plane : sample.first.planes)
        stack.planes.push_back(crop(plane));
    return {std::move(stack), crop(target)};
}

} // namespace

TrainResult train(NetworkParams params, const ArchConfig& cfg,
                  const std::vector<std::pair<ZStack, Image>>& dataset, const TrainConfig& tcfg) {
    if (dataset.empty())
        fail(Errc::empty_input, "empty training dataset");
    if (tcfg.steps < 0 || tcfg.batch_size < 1)
        fail(Errc::invalid_argument, "steps must be >= 0 and batch size >= 1");
    check_params(params, cfg);

    std::mt19937_64 rng(tcfg.seed);
    const size_t n_tensors = params.tensors.size();
    std::vector<std::vector<double>> m(n_tensors), v(n_tensors);
    for (size_t i = 0; i < n_tensors; ++i) {
        m[i].assign(params.tensors[i].count(), 0.0);
        v[i].assign(params.tensors[i].count(), 0.0);
    }

    TrainResult result;
    result.loss_history.reserve(static_cast<size_t>(tcfg.steps));

    for (int step = 0; step < tcfg.steps; ++step) {
        std::vector<Tensor> batch_grad(n_tensors);
        for (size_t i = 0; i < n_tensors; ++i) {
            batch_grad[i].dims = params.tensors[i].dims;
            batch_grad[i].v.assign(params.tensors[i].count(), 0.0);
        }
        double batch_loss = 0.0;
        for (int b = 0; b < tcfg.batch_size; ++b) {
            const size_t idx =
                (static_cast<size_t>(step) * tcfg.batch_size + b) % dataset.size();
            const auto sample = crop_pair(dataset[idx], tcfg.patch, rng);
            Gradients grad = backward(params, cfg, sample.first, sample.second);
            batch_loss += grad.loss;
            for (size_t i = 0; i < n_tensors; ++i)
                for (size_t j = 0; j < batch_grad[i].v.size(); ++j)
                    batch_grad[i].v[j] += grad.tensors[i].v[j];
        }
        const double inv_b = 1.0 / tcfg.batch_size;
        result.loss_history.push_back(batch_loss * inv_b);

        const double t = step + 1;
        const double corr1 = 1.0 - std::pow(tcfg.beta1, t);
        const double corr2 = 1.0 - std::pow(tcfg.beta2, t);
        for (size_t i = 0; i < n_tensors; ++i) {
            auto& pv = params.tensors[i].v;
            for (size_t j = 0; j < pv.size(); ++j) {
                const double gj = batch_grad[i].v[j] * inv_b;
                m[i][j] = tcfg.beta1 * m[i][j] + (1.0 - tcfg.beta1) * gj;
                v[i][j] = tcfg.beta2 * v[i][j] + (1.0 - tcfg.beta2) * gj * gj;
                pv[j] -= tcfg.learning_rate * (m[i][j] / corr1) /
                         (std::sqrt(v[i][j] / corr2) + tcfg.epsilon);
            }
        }
    }

    if (params.precision == Precision::f32)
        for (auto& t : params.tensors)
            for (double& x : t.v)
                x = static_cast<double>(static_cast<float>(x));

    result.params = std::move(params);
    return result;
}

// ---------------------------------------------------------------------------
// weights file
// ---------------------------------------------------------------------------

namespace {

void put_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in)
        fail(Errc::truncated_weights, "unexpected end of file");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

} // namespace

void save_weights(const NetworkParams& params, const ArchConfig& cfg,
                  const std::filesystem::path& path) {
    check_params(params, cfg);
    std::ofstream out(path, std::ios::binary);
    if (!out)
        fail(Errc::unwritable_path, path.string());

    out.write("EDOF", 4);
    put_u32(out, 1);
    const unsigned char variant = cfg.variant == Variant::max_fusion ? 0 : 1;
    out.put(static_cast<char>(variant));
    put_u32(out, static_cast<uint32_t>(cfg.base_width));
    put_u32(out, static_cast<uint32_t>(cfg.residual_blocks));
    put_u32(out, cfg.variant == Variant::max_fusion
                     ? 0u
                     : static_cast<uint32_t>(cfg.input_planes));

    for (const Tensor& t : params.tensors) {
        out.put(static_cast<char>(t.dims.size()));
        for (int d : t.dims)
            put_u32(out, static_cast<uint32_t>(d));
        for (double x : t.v) {
            const float f = static_cast<float>(x);
            uint32_t bits;
            std::memcpy(&bits, &f, 4);
            put_u32(out, bits);
        }
    }
    if (!out)
        fail(Errc::unwritable_path, path.string());
}

std::pair<NetworkParams, ArchConfig> load_weights(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail(Errc::missing_file, path.string());

    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "EDOF", 4) != 0)
        fail(Errc::bad_weights_magic, path.string());
    const uint32_t version = get_u32(in);
    if (version != 1)
        fail(Errc::bad_weights_version, "version " + std::to_string(version));

    const int variant = in.get();
    if (variant != 0 && variant != 1)
        fail(Errc::shape_mismatch, "unknown variant byte " + std::to_string(variant));

    ArchConfig cfg;
    cfg.variant = variant == 0 ? Variant::max_fusion : Variant::volumetric;
    cfg.base_width = static_cast<int>(get_u32(in));
    cfg.residual_blocks = static_cast<int>(get_u32(in));
    cfg.input_planes = static_cast<int>(get_u32(in));
    if (cfg.variant == Variant::max_fusion && cfg.input_planes != 0)
        fail(Errc::shape_mismatch, "max variant must declare zero planes");

    const auto specs = tensor_specs(cfg);
    NetworkParams params;
    params.precision = Precision::f32;
    params.tensors.reserve(specs.size());
    for (size_t i = 0; i < specs.size(); ++i) {
        const int rank = in.get();
        if (rank == EOF)
            fail(Errc::truncated_weights, "missing tensor " + std::to_string(i));
        if (rank != static_cast<int>(specs[i].dims.size()))
            fail(Errc::shape_mismatch, "tensor " + std::to_string(i) + " rank " +
                                           std::to_string(rank) + ", expected " +
                                           std::to_string(specs[i].dims.size()));
        Tensor t;
        t.dims.resize(static_cast<size_t>(rank));
        for (int d = 0; d < rank; ++d)
            t.dims[d] = static_cast<int>(get_u32(in));
        if (t.dims != specs[i].dims)
            fail(Errc::shape_mismatch,
                 "tensor " + std::to_string(i) + " dims do not match the declared architecture");
        t.v.resize(t.count());
        for (double& x : t.v) {
            const uint32_t bits = get_u32(in);
            float f;
            std::memcpy(&f, &bits, 4);
            x = static_cast<double>(f);
        }
        params.tensors.push_back(std::move(t));
    }
    return {std::move(params), cfg};
}

} // namespace edof
