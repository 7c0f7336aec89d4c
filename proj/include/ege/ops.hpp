#pragma once

// Neural-network primitives: grouped/dilated 2-D and 1-D convolution,
// bilinear resize, 2x2 max pooling, GELU/sigmoid, and channel-wise
// normalization. All ops are differentiable through the tape.
//
// Convolution accumulates contributions in a fixed canonical order
// (bias, then input-channel, kernel-row, kernel-column ascending), so the
// result is bit-identical to a naive nested-loop evaluation.

#include "ege/core.hpp"

#include <optional>

namespace ege {

struct Conv2dSpec {
    int in_channels = 0;
    int out_channels = 0;
    int kh = 3, kw = 3;
    int sh = 1, sw = 1;
    int ph = 0, pw = 0;
    int dh = 1, dw = 1;
    int groups = 1;
    bool has_bias = true;

    int64_t out_h(int64_t h) const { return (h + 2 * ph - dh * (kh - 1) - 1) / sh + 1; }
    int64_t out_w(int64_t w) const { return (w + 2 * pw - dw * (kw - 1) - 1) / sw + 1; }

    void validate() const {
        if (in_channels <= 0 || out_channels <= 0 || groups <= 0)
            throw ShapeError("conv2d: channel/group counts must be positive");
        if (in_channels % groups != 0 || out_channels % groups != 0)
            throw ShapeError("conv2d: channels (" + std::to_string(in_channels) + "->" +
                             std::to_string(out_channels) + ") not divisible by groups " +
                             std::to_string(groups));
        if (kh <= 0 || kw <= 0 || sh <= 0 || sw <= 0 || dh <= 0 || dw <= 0)
            throw ShapeError("conv2d: kernel/stride/dilation must be positive");
    }
};

struct Conv1dSpec {
    int in_channels = 0;
    int out_channels = 0;
    int k = 3;
    int stride = 1, pad = 0, dilation = 1;
    int groups = 1;
    bool has_bias = true;
};

struct ResizeSpec {
    int64_t out_h = 0, out_w = 0;
    bool align_corners = true;  // the project-wide choice; identity at equal size
};

namespace detail {

template <typename T>
void conv2d_forward_kernel(std::span<const T> x, std::span<const T> w, const T* bias,
                           std::span<T> y, int64_t n_batch, int64_t h, int64_t wd,
                           const Conv2dSpec& sp) {
    const int64_t oh_n = sp.out_h(h), ow_n = sp.out_w(wd);
    const int64_t cg = sp.in_channels / sp.groups;
    const int64_t ocg = sp.out_channels / sp.groups;
    for (int64_t n = 0; n < n_batch; ++n) {
        for (int64_t oc = 0; oc < sp.out_channels; ++oc) {
            const int64_t g = oc / ocg;
            const T* woc = w.data() + oc * cg * sp.kh * sp.kw;
            const T bv = bias ? bias[oc] : T(0);
            for (int64_t oh = 0; oh < oh_n; ++oh) {
                T* orow = y.data() + ((n * sp.out_channels + oc) * oh_n + oh) * ow_n;
                for (int64_t ow = 0; ow < ow_n; ++ow) orow[ow] = bv;
                for (int64_t icg = 0; icg < cg; ++icg) {
                    const T* xch = x.data() + ((n * sp.in_channels + g * cg + icg) * h) * wd;
                    for (int kh = 0; kh < sp.kh; ++kh) {
                        const int64_t ih = oh * sp.sh - sp.ph + kh * sp.dh;
                        if (ih < 0 || ih >= h) continue;
                        const T* xrow = xch + ih * wd;
                        for (int kw = 0; kw < sp.kw; ++kw) {
                            const T wv = woc[(icg * sp.kh + kh) * sp.kw + kw];
                            const int64_t off = kw * sp.dw - sp.pw;
                            // ow range keeping ow*sw + off inside [0, wd)
                            int64_t lo = 0, hi = ow_n;
                            if (off < 0) lo = (-off + sp.sw - 1) / sp.sw;
                            if (off < wd) {
                                int64_t m = (wd - 1 - off) / sp.sw + 1;
                                hi = std::min<int64_t>(hi, m);
                            } else {
                                hi = lo;
                            }
                            const T* xr = xrow + off;
                            if (sp.sw == 1) {
                                for (int64_t ow = lo; ow < hi; ++ow) orow[ow] += wv * xr[ow];
                            } else {
                                for (int64_t ow = lo; ow < hi; ++ow) orow[ow] += wv * xr[ow * sp.sw];
                            }
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void conv2d_backward_kernel(Tensor<T>& x, Tensor<T>& w, std::optional<Tensor<T>>& b,
                            Tensor<T>& out, const Conv2dSpec& sp) {
    const int64_t n_batch = x.dim(0), h = x.dim(2), wd = x.dim(3);
    const int64_t oh_n = sp.out_h(h), ow_n = sp.out_w(wd);
    const int64_t cg = sp.in_channels / sp.groups;
    const int64_t ocg = sp.out_channels / sp.groups;
    auto go = out.grad();
    if (b && b->requires_grad()) {
        auto gb = b->grad();
        for (int64_t n = 0; n < n_batch; ++n)
            for (int64_t oc = 0; oc < sp.out_channels; ++oc) {
                const T* grow = go.data() + (n * sp.out_channels + oc) * oh_n * ow_n;
                T acc = 0;
                for (int64_t i = 0; i < oh_n * ow_n; ++i) acc += grow[i];
                gb[oc] += acc;
            }
    }
    const bool need_w = w.requires_grad();
    const bool need_x = x.requires_grad();
    if (!need_w && !need_x) return;
    auto xv = x.data();
    auto wv = w.data();
    auto gx = need_x ? x.grad() : std::span<T>();
    auto gw = need_w ? w.grad() : std::span<T>();
    for (int64_t n = 0; n < n_batch; ++n) {
        for (int64_t oc = 0; oc < sp.out_channels; ++oc) {
            const int64_t g = oc / ocg;
            const T* woc = wv.data() + oc * cg * sp.kh * sp.kw;
            T* gwoc = need_w ? gw.data() + oc * cg * sp.kh * sp.kw : nullptr;
            for (int64_t oh = 0; oh < oh_n; ++oh) {
                const T* grow = go.data() + ((n * sp.out_channels + oc) * oh_n + oh) * ow_n;
                for (int64_t icg = 0; icg < cg; ++icg) {
                    const int64_t ic = g * cg + icg;
                    const T* xch = xv.data() + ((n * sp.in_channels + ic) * h) * wd;
                    T* gxch = need_x ? gx.data() + ((n * sp.in_channels + ic) * h) * wd : nullptr;
                    for (int kh = 0; kh < sp.kh; ++kh) {
                        const int64_t ih = oh * sp.sh - sp.ph + kh * sp.dh;
                        if (ih < 0 || ih >= h) continue;
                        for (int kw = 0; kw < sp.kw; ++kw) {
                            const int64_t off = kw * sp.dw - sp.pw;
                            int64_t lo = 0, hi = ow_n;
                            if (off < 0) lo = (-off + sp.sw - 1) / sp.sw;
                            if (off < wd) {
                                int64_t m = (wd - 1 - off) / sp.sw + 1;
                                hi = std::min<int64_t>(hi, m);
                            } else {
                                hi = lo;
                            }
                            const int64_t widx = (icg * sp.kh + kh) * sp.kw + kw;
                            if (need_w && need_x && sp.sw == 1) {
                                // single pass sharing the gradient-row loads
                                const T* __restrict__ xr = xch + ih * wd + off;
                                T* __restrict__ gxr = gxch + ih * wd + off;
                                const T* __restrict__ gr = grow;
                                const T wval = woc[widx];
                                T acc = 0;
                                for (int64_t ow = lo; ow < hi; ++ow) {
                                    const T g = gr[ow];
                                    acc += g * xr[ow];
                                    gxr[ow] += wval * g;
                                }
                                gwoc[widx] += acc;
                                continue;
                            }
                            if (need_w) {
                                const T* xr = xch + ih * wd + off;
                                T acc = 0;
                                for (int64_t ow = lo; ow < hi; ++ow) acc += grow[ow] * xr[ow * sp.sw];
                                gwoc[widx] += acc;
                            }
                            if (need_x) {
                                const T wval = woc[widx];
                                T* gxr = gxch + ih * wd + off;
                                for (int64_t ow = lo; ow < hi; ++ow) gxr[ow * sp.sw] += wval * grow[ow];
                            }
                        }
                    }
                }
            }
        }
    }
}

}  // namespace detail

// Standard zero-padded cross-correlation with grouping and dilation.
// x: (N, C, H, W); w: (out, in/groups, kh, kw); b: (out) or absent.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const std::optional<Tensor<T>>& b,
                 const Conv2dSpec& spec, Tape<T>* tape = nullptr) {
    spec.validate();
    if (x.rank() != 4) throw ShapeError("conv2d: input must be NCHW, got " + shape_str(x.shape()));
    if (x.dim(1) != spec.in_channels)
        throw ShapeError("conv2d: input has " + std::to_string(x.dim(1)) + " channels, spec wants " +
                         std::to_string(spec.in_channels));
    Shape ws = {spec.out_channels, spec.in_channels / spec.groups, spec.kh, spec.kw};
    if (w.shape() != ws)
        throw ShapeError("conv2d: weight shape " + shape_str(w.shape()) + " != expected " + shape_str(ws));
    if (spec.has_bias != b.has_value() || (b && b->shape() != Shape{spec.out_channels}))
        throw ShapeError("conv2d: bias mismatch with spec");
    const int64_t oh = spec.out_h(x.dim(2)), ow = spec.out_w(x.dim(3));
    if (oh <= 0 || ow <= 0)
        throw ShapeError("conv2d: non-positive output size for input " + shape_str(x.shape()));
    Tensor<T> out = Tensor<T>::uninit({x.dim(0), spec.out_channels, oh, ow});
    detail::conv2d_forward_kernel<T>(x.data(), w.data(), b ? b->data().data() : nullptr,
                                     out.data_mut(), x.dim(0), x.dim(2), x.dim(3), spec);
    bool rg = tape && (x.requires_grad() || w.requires_grad() || (b && b->requires_grad()));
    if (rg) {
        out.set_requires_grad(true);
        Tensor<T> xc = x, wc = w, oc = out;
        std::optional<Tensor<T>> bc = b;
        Conv2dSpec sp = spec;
        tape->record([xc, wc, bc, oc, sp]() mutable {
            detail::conv2d_backward_kernel<T>(xc, wc, bc, oc, sp);
        });
    }
    return out;
}

// 1-D analogue over (N, C, L); implemented on the 2-D kernel with kh = 1.
template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const std::optional<Tensor<T>>& b,
                 const Conv1dSpec& spec, Tape<T>* tape = nullptr) {
    if (x.rank() != 3) throw ShapeError("conv1d: input must be (N,C,L), got " + shape_str(x.shape()));
    Shape ws = {spec.out_channels, spec.in_channels / std::max(spec.groups, 1), spec.k};
    if (w.shape() != ws)
        throw ShapeError("conv1d: weight shape " + shape_str(w.shape()) + " != expected " + shape_str(ws));
    Conv2dSpec sp2;
    sp2.in_channels = spec.in_channels;
    sp2.out_channels = spec.out_channels;
    sp2.kh = 1;
    sp2.kw = spec.k;
    sp2.sw = spec.stride;
    sp2.pw = spec.pad;
    sp2.dw = spec.dilation;
    sp2.groups = spec.groups;
    sp2.has_bias = spec.has_bias;
    // reinterpret (N,C,L) as (N,C,1,L) and the weight as (out, in/g, 1, k)
    Tensor<T> x4 = Tensor<T>::from_data({x.dim(0), x.dim(1), 1, x.dim(2)},
                                        std::vector<T>(x.data().begin(), x.data().end()));
    x4.set_requires_grad(x.requires_grad());
    Tensor<T> w4 = Tensor<T>::from_data({ws[0], ws[1], 1, ws[2]},
                                        std::vector<T>(w.data().begin(), w.data().end()));
    w4.set_requires_grad(w.requires_grad());
    if (tape && x.requires_grad()) {
        Tensor<T> xc = x, x4c = x4;
        tape->record([xc, x4c]() mutable {
            auto g4 = x4c.grad();
            auto gx = xc.grad();
            for (int64_t i = 0; i < xc.numel(); ++i) gx[i] += g4[i];
        });
    }
    if (tape && w.requires_grad()) {
        Tensor<T> wc = w, w4c = w4;
        tape->record([wc, w4c]() mutable {
            auto g4 = w4c.grad();
            auto gw = wc.grad();
            for (int64_t i = 0; i < wc.numel(); ++i) gw[i] += g4[i];
        });
    }
    Tensor<T> y4 = conv2d(x4, w4, b, sp2, tape);
    Tensor<T> y = Tensor<T>::from_data({y4.dim(0), y4.dim(1), y4.dim(3)},
                                       std::vector<T>(y4.data().begin(), y4.data().end()));
    if (tape && y4.requires_grad()) {
        y.set_requires_grad(true);
        Tensor<T> yc = y, y4c = y4;
        tape->record([yc, y4c]() mutable {
            auto gy = yc.grad();
            auto g4 = y4c.grad();
            for (int64_t i = 0; i < yc.numel(); ++i) g4[i] += gy[i];
        });
    }
    return y;
}

// Bilinear interpolation with align_corners=true semantics. Resizing to the
// input's own size returns a value-identical copy.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, const ResizeSpec& spec, Tape<T>* tape = nullptr) {
    if (x.rank() != 4) throw ShapeError("bilinear_resize: input must be NCHW");
    if (spec.out_h < 1 || spec.out_w < 1) throw ShapeError("bilinear_resize: output size must be >= 1");
    const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int64_t oh = spec.out_h, ow = spec.out_w;
    if (oh == h && ow == w) {
        Tensor<T> out = x.clone_values();
        if (taped(tape, {&x})) {
            out.set_requires_grad(true);
            Tensor<T> xc = x, oc = out;
            tape->record([xc, oc]() mutable {
                auto go = oc.grad();
                auto gx = xc.grad();
                for (int64_t i = 0; i < xc.numel(); ++i) gx[i] += go[i];
            });
        }
        return out;
    }
    const double sy = oh > 1 ? static_cast<double>(h - 1) / static_cast<double>(oh - 1) : 0.0;
    const double sx = ow > 1 ? static_cast<double>(w - 1) / static_cast<double>(ow - 1) : 0.0;
    Tensor<T> out = Tensor<T>::uninit({n, c, oh, ow});
    auto xv = x.data();
    auto ov = out.data_mut();
    std::vector<int64_t> x0s(static_cast<size_t>(ow)), x1s(static_cast<size_t>(ow));
    std::vector<T> wxs(static_cast<size_t>(ow));
    for (int64_t j = 0; j < ow; ++j) {
        double src = j * sx;
        int64_t x0 = static_cast<int64_t>(src);
        x0s[j] = x0;
        x1s[j] = std::min<int64_t>(x0 + 1, w - 1);
        wxs[j] = static_cast<T>(src - static_cast<double>(x0));
    }
    for (int64_t nc = 0; nc < n * c; ++nc) {
        const T* plane = xv.data() + nc * h * w;
        T* oplane = ov.data() + nc * oh * ow;
        for (int64_t i = 0; i < oh; ++i) {
            double src = i * sy;
            int64_t y0 = static_cast<int64_t>(src);
            int64_t y1 = std::min<int64_t>(y0 + 1, h - 1);
            T wy = static_cast<T>(src - static_cast<double>(y0));
            const T* r0 = plane + y0 * w;
            const T* r1 = plane + y1 * w;
            T* orow = oplane + i * ow;
            for (int64_t j = 0; j < ow; ++j) {
                T wx = wxs[j];
                T a = r0[x0s[j]], bq = r0[x1s[j]], cq = r1[x0s[j]], d = r1[x1s[j]];
                orow[j] = (T(1) - wy) * ((T(1) - wx) * a + wx * bq) + wy * ((T(1) - wx) * cq + wx * d);
            }
        }
    }
    if (taped(tape, {&x})) {
        out.set_requires_grad(true);
        Tensor<T> xc = x, oc = out;
        tape->record([xc, oc, sy, sx, x0s, x1s, wxs]() mutable {
            const int64_t n2 = xc.dim(0), c2 = xc.dim(1), h2 = xc.dim(2), w2 = xc.dim(3);
            const int64_t oh2 = oc.dim(2), ow2 = oc.dim(3);
            auto go = oc.grad();
            auto gx = xc.grad();
            for (int64_t nc = 0; nc < n2 * c2; ++nc) {
                T* gplane = gx.data() + nc * h2 * w2;
                const T* goplane = go.data() + nc * oh2 * ow2;
                for (int64_t i = 0; i < oh2; ++i) {
                    double src = i * sy;
                    int64_t y0 = static_cast<int64_t>(src);
                    int64_t y1 = std::min<int64_t>(y0 + 1, h2 - 1);
                    T wy = static_cast<T>(src - static_cast<double>(y0));
                    const T* gorow = goplane + i * ow2;
                    for (int64_t j = 0; j < ow2; ++j) {
                        T wx = wxs[j];
                        T g = gorow[j];
                        gplane[y0 * w2 + x0s[j]] += (T(1) - wy) * (T(1) - wx) * g;
                        gplane[y0 * w2 + x1s[j]] += (T(1) - wy) * wx * g;
                        gplane[y1 * w2 + x0s[j]] += wy * (T(1) - wx) * g;
                        gplane[y1 * w2 + x1s[j]] += wy * wx * g;
                    }
                }
            }
        });
    }
    return out;
}

// Linear interpolation along the last axis of (N, C, L).
template <typename T>
Tensor<T> linear_resize1d(const Tensor<T>& x, int64_t out_l, Tape<T>* tape = nullptr) {
    if (x.rank() != 3) throw ShapeError("linear_resize1d: input must be (N,C,L)");
    Tensor<T> x4 = Tensor<T>::from_data({x.dim(0), x.dim(1), 1, x.dim(2)},
                                        std::vector<T>(x.data().begin(), x.data().end()));
    x4.set_requires_grad(x.requires_grad());
    if (tape && x.requires_grad()) {
        Tensor<T> xc = x, x4c = x4;
        tape->record([xc, x4c]() mutable {
            auto g4 = x4c.grad();
            auto gx = xc.grad();
            for (int64_t i = 0; i < xc.numel(); ++i) gx[i] += g4[i];
        });
    }
    Tensor<T> y4 = bilinear_resize(x4, ResizeSpec{1, out_l, true}, tape);
    Tensor<T> y = Tensor<T>::from_data({y4.dim(0), y4.dim(1), y4.dim(3)},
                                       std::vector<T>(y4.data().begin(), y4.data().end()));
    if (tape && y4.requires_grad()) {
        y.set_requires_grad(true);
        Tensor<T> yc = y, y4c = y4;
        tape->record([yc, y4c]() mutable {
            auto gy = yc.grad();
            auto g4 = y4c.grad();
            for (int64_t i = 0; i < yc.numel(); ++i) g4[i] += gy[i];
        });
    }
    return y;
}

// 2x2 max pooling with stride 2. Backward routes the gradient to the argmax,
// first index winning ties.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, Tape<T>* tape = nullptr) {
    if (x.rank() != 4) throw ShapeError("maxpool2d: input must be NCHW");
    const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % 2 != 0 || w % 2 != 0)
        throw ShapeError("maxpool2d: spatial dims must be even, got " + shape_str(x.shape()));
    const int64_t oh = h / 2, ow = w / 2;
    Tensor<T> out = Tensor<T>::uninit({n, c, oh, ow});
    std::vector<int32_t> arg(static_cast<size_t>(out.numel()));
    auto xv = x.data();
    auto ov = out.data_mut();
    for (int64_t nc = 0; nc < n * c; ++nc) {
        const T* plane = xv.data() + nc * h * w;
        T* oplane = ov.data() + nc * oh * ow;
        int32_t* aplane = arg.data() + nc * oh * ow;
        for (int64_t i = 0; i < oh; ++i) {
            for (int64_t j = 0; j < ow; ++j) {
                const int64_t base = (2 * i) * w + 2 * j;
                T best = plane[base];
                int32_t bidx = 0;
                const int64_t cand[3] = {base + 1, base + w, base + w + 1};
                for (int k = 0; k < 3; ++k) {
                    if (plane[cand[k]] > best) {
                        best = plane[cand[k]];
                        bidx = k + 1;
                    }
                }
                oplane[i * ow + j] = best;
                aplane[i * ow + j] = bidx;
            }
        }
    }
    if (taped(tape, {&x})) {
        out.set_requires_grad(true);
        Tensor<T> xc = x, oc = out;
        tape->record([xc, oc, arg = std::move(arg)]() mutable {
            const int64_t n2 = xc.dim(0), c2 = xc.dim(1), h2 = xc.dim(2), w2 = xc.dim(3);
            const int64_t oh2 = h2 / 2, ow2 = w2 / 2;
            auto go = oc.grad();
            auto gx = xc.grad();
            for (int64_t nc = 0; nc < n2 * c2; ++nc) {
                T* gplane = gx.data() + nc * h2 * w2;
                const T* goplane = go.data() + nc * oh2 * ow2;
                const int32_t* aplane = arg.data() + nc * oh2 * ow2;
                for (int64_t i = 0; i < oh2; ++i)
                    for (int64_t j = 0; j < ow2; ++j) {
                        const int64_t base = (2 * i) * w2 + 2 * j;
                        const int32_t k = aplane[i * ow2 + j];
                        const int64_t off = k == 0 ? 0 : (k == 1 ? 1 : (k == 2 ? w2 : w2 + 1));
                        gplane[base + off] += goplane[i * ow2 + j];
                    }
            }
        });
    }
    return out;
}

namespace detail {

// Rational tanh for the float path (max error a few ulp, well under the
// 1e-6 contract of the GELU formula and orders of magnitude below the
// gradient-check tolerance). Polynomial form keeps the loop vectorizable;
// the double path stays on std::tanh.
inline float fast_tanh(float x) {
    const float cl = std::clamp(x, -7.99881172180175781f, 7.99881172180175781f);
    const float x2 = cl * cl;
    float p = -2.76076847742355e-16f;
    p = x2 * p + 2.00018790482477e-13f;
    p = x2 * p + -8.60467152213735e-11f;
    p = x2 * p + 5.12229709037114e-08f;
    p = x2 * p + 1.48572235717979e-05f;
    p = x2 * p + 6.37261928875436e-04f;
    p = x2 * p + 4.89352455891786e-03f;
    p = cl * p;
    float q = 1.19825839466702e-06f;
    q = x2 * q + 1.18534705686654e-04f;
    q = x2 * q + 2.26843463243900e-03f;
    q = x2 * q + 4.89352518554385e-03f;
    return p / q;
}

inline double fast_tanh(double x) { return std::tanh(x); }

template <typename T>
inline T gelu_scalar(T x) {
    // tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
    const T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
    const T a = static_cast<T>(0.044715);
    return static_cast<T>(0.5) * x * (T(1) + fast_tanh(c * (x + a * x * x * x)));
}

template <typename T>
inline T gelu_grad_scalar(T x) {
    const T c = static_cast<T>(0.7978845608028654);
    const T a = static_cast<T>(0.044715);
    const T u = c * (x + a * x * x * x);
    const T t = fast_tanh(u);
    const T du = c * (T(1) + T(3) * a * x * x);
    return static_cast<T>(0.5) * (T(1) + t) + static_cast<T>(0.5) * x * (T(1) - t * t) * du;
}

template <typename T>
inline T sigmoid_scalar(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

}  // namespace detail

template <typename T>
Tensor<T> gelu(const Tensor<T>& x, Tape<T>* tape = nullptr) {
    Tensor<T> out = Tensor<T>::uninit(x.shape());
    auto xv = x.data();
    auto ov = out.data_mut();
    for (int64_t i = 0; i < x.numel(); ++i) ov[i] = detail::gelu_scalar(xv[i]);
    if (taped(tape, {&x})) {
        out.set_requires_grad(true);
        Tensor<T> xc = x, oc = out;
        tape->record([xc, oc]() mutable {
            auto go = oc.grad();
            auto gx = xc.grad();
            auto xv2 = xc.data();
            for (int64_t i = 0; i < xc.numel(); ++i) gx[i] += go[i] * detail::gelu_grad_scalar(xv2[i]);
        });
    }
    return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x, Tape<T>* tape = nullptr) {
    Tensor<T> out = Tensor<T>::uninit(x.shape());
    auto xv = x.data();
    auto ov = out.data_mut();
    for (int64_t i = 0; i < x.numel(); ++i) ov[i] = detail::sigmoid_scalar(xv[i]);
    if (taped(tape, {&x})) {
        out.set_requires_grad(true);
        Tensor<T> xc = x, oc = out;
        tape->record([xc, oc]() mutable {
            auto go = oc.grad();
            auto gx = xc.grad();
            auto sv = oc.data();
            for (int64_t i = 0; i < xc.numel(); ++i) gx[i] += go[i] * sv[i] * (T(1) - sv[i]);
        });
    }
    return out;
}

// Normalizes across the channel axis at every (n, h, w) position to zero
// mean / unit variance, then applies a per-channel scale and shift.
// Batch-independent, so train and eval behave identically.
template <typename T>
Tensor<T> channel_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       Tape<T>* tape = nullptr, T eps = static_cast<T>(1e-6)) {
    if (x.rank() != 4) throw ShapeError("channel_norm: input must be NCHW");
    const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (gamma.shape() != Shape{c} || beta.shape() != Shape{c})
        throw ShapeError("channel_norm: gamma/beta must have length " + std::to_string(c));
    const int64_t hw = h * w;
    Tensor<T> out = Tensor<T>::uninit(x.shape());
    std::vector<T> inv_std(static_cast<size_t>(n * hw));
    std::vector<T> means(static_cast<size_t>(n * hw));
    auto xv = x.data();
    auto gv = gamma.data();
    auto bv = beta.data();
    auto ov = out.data_mut();
    for (int64_t b = 0; b < n; ++b) {
        for (int64_t p = 0; p < hw; ++p) {
            const int64_t base = b * c * hw + p;
            T mean = 0;
            for (int64_t ch = 0; ch < c; ++ch) mean += xv[base + ch * hw];
            mean /= static_cast<T>(c);
            T var = 0;
            for (int64_t ch = 0; ch < c; ++ch) {
                T d = xv[base + ch * hw] - mean;
                var += d * d;
            }
            var /= static_cast<T>(c);
            T is = T(1) / std::sqrt(var + eps);
            means[b * hw + p] = mean;
            inv_std[b * hw + p] = is;
            for (int64_t ch = 0; ch < c; ++ch)
                ov[base + ch * hw] = (xv[base + ch * hw] - mean) * is * gv[ch] + bv[ch];
        }
    }
    bool rg = tape && (x.requires_grad() || gamma.requires_grad() || beta.requires_grad());
    if (rg) {
        out.set_requires_grad(true);
        Tensor<T> xc = x, gc = gamma, bc = beta, oc = out;
        tape->record([xc, gc, bc, oc, means = std::move(means), inv_std = std::move(inv_std), n, c,
                      hw]() mutable {
            auto go = oc.grad();
            auto xv2 = xc.data();
            auto gv2 = gc.data();
            for (int64_t b = 0; b < n; ++b) {
                for (int64_t p = 0; p < hw; ++p) {
                    const int64_t base = b * c * hw + p;
                    const T mean = means[b * hw + p];
                    const T is = inv_std[b * hw + p];
                    if (gc.requires_grad() || bc.requires_grad()) {
                        auto gg = gc.grad();
                        auto gb = bc.grad();
                        for (int64_t ch = 0; ch < c; ++ch) {
                            const T xhat = (xv2[base + ch * hw] - mean) * is;
                            if (gc.requires_grad()) gg[ch] += go[base + ch * hw] * xhat;
                            if (bc.requires_grad()) gb[ch] += go[base + ch * hw];
                        }
                    }
                    if (xc.requires_grad()) {
                        auto gx = xc.grad();
                        T sum_gg = 0, sum_ggx = 0;
                        for (int64_t ch = 0; ch < c; ++ch) {
                            const T xhat = (xv2[base + ch * hw] - mean) * is;
                            const T gy = go[base + ch * hw] * gv2[ch];
                            sum_gg += gy;
                            sum_ggx += gy * xhat;
                        }
                        const T inv_c = T(1) / static_cast<T>(c);
                        for (int64_t ch = 0; ch < c; ++ch) {
                            const T xhat = (xv2[base + ch * hw] - mean) * is;
                            const T gy = go[base + ch * hw] * gv2[ch];
                            gx[base + ch * hw] += is * (gy - inv_c * sum_gg - xhat * inv_c * sum_ggx);
                        }
                    }
                }
            }
        });
    }
    return out;
}

}  // namespace ege
