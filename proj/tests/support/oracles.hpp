#pragma once

// Independent brute-force reference implementations used to pin expected
// values. These stay free of the library's op code paths on purpose: each one
// is a direct transcription of the defining formula.

#include "ege/core.hpp"
#include "ege/loss.hpp"
#include "ege/ops.hpp"

#include <vector>

namespace oracle {

// Direct nested-loop cross-correlation. Per output element, contributions
// accumulate in (input-channel, kernel-row, kernel-col) order starting from
// the bias, matching the canonical accumulation order of the library.
template <typename T>
ege::Tensor<T> conv2d_naive(const ege::Tensor<T>& x, const ege::Tensor<T>& w,
                            const std::optional<ege::Tensor<T>>& b, const ege::Conv2dSpec& sp) {
    const int64_t n_batch = x.dim(0), h = x.dim(2), wd = x.dim(3);
    const int64_t oh_n = sp.out_h(h), ow_n = sp.out_w(wd);
    const int64_t cg = sp.in_channels / sp.groups;
    const int64_t ocg = sp.out_channels / sp.groups;
    ege::Tensor<T> out = ege::Tensor<T>::zeros({n_batch, sp.out_channels, oh_n, ow_n});
    auto xv = x.data();
    auto wv = w.data();
    auto ov = out.data_mut();
    for (int64_t n = 0; n < n_batch; ++n)
        for (int64_t oc = 0; oc < sp.out_channels; ++oc)
            for (int64_t oh = 0; oh < oh_n; ++oh)
                for (int64_t ow = 0; ow < ow_n; ++ow) {
                    T acc = b ? b->data()[oc] : T(0);
                    const int64_t g = oc / ocg;
                    for (int64_t icg = 0; icg < cg; ++icg)
                        for (int kh = 0; kh < sp.kh; ++kh)
                            for (int kw = 0; kw < sp.kw; ++kw) {
                                const int64_t ih = oh * sp.sh - sp.ph + kh * sp.dh;
                                const int64_t iw = ow * sp.sw - sp.pw + kw * sp.dw;
                                if (ih < 0 || ih >= h || iw < 0 || iw >= wd) continue;
                                acc += wv[((oc * cg + icg) * sp.kh + kh) * sp.kw + kw] *
                                       xv[((n * sp.in_channels + g * cg + icg) * h + ih) * wd + iw];
                            }
                    ov[((n * sp.out_channels + oc) * oh_n + oh) * ow_n + ow] = acc;
                }
    return out;
}

template <typename T>
ege::Tensor<T> conv1d_naive(const ege::Tensor<T>& x, const ege::Tensor<T>& w,
                            const std::optional<ege::Tensor<T>>& b, const ege::Conv1dSpec& sp) {
    const int64_t n_batch = x.dim(0), l = x.dim(2);
    const int64_t ol = (l + 2 * sp.pad - sp.dilation * (sp.k - 1) - 1) / sp.stride + 1;
    const int64_t cg = sp.in_channels / sp.groups;
    const int64_t ocg = sp.out_channels / sp.groups;
    ege::Tensor<T> out = ege::Tensor<T>::zeros({n_batch, sp.out_channels, ol});
    auto xv = x.data();
    auto wv = w.data();
    auto ov = out.data_mut();
    for (int64_t n = 0; n < n_batch; ++n)
        for (int64_t oc = 0; oc < sp.out_channels; ++oc)
            for (int64_t o = 0; o < ol; ++o) {
                T acc = b ? b->data()[oc] : T(0);
                const int64_t g = oc / ocg;
                for (int64_t icg = 0; icg < cg; ++icg)
                    for (int k = 0; k < sp.k; ++k) {
                        const int64_t i = o * sp.stride - sp.pad + k * sp.dilation;
                        if (i < 0 || i >= l) continue;
                        acc += wv[(oc * cg + icg) * sp.k + k] *
                               xv[(n * sp.in_channels + g * cg + icg) * l + i];
                    }
                ov[(n * sp.out_channels + oc) * ol + o] = acc;
            }
    return out;
}

template <typename T>
ege::Tensor<T> bilinear_naive(const ege::Tensor<T>& x, int64_t oh, int64_t ow) {
    const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    ege::Tensor<T> out = ege::Tensor<T>::zeros({n, c, oh, ow});
    auto xv = x.data();
    auto ov = out.data_mut();
    const double sy = oh > 1 ? double(h - 1) / double(oh - 1) : 0.0;
    const double sx = ow > 1 ? double(w - 1) / double(ow - 1) : 0.0;
    for (int64_t nc = 0; nc < n * c; ++nc)
        for (int64_t i = 0; i < oh; ++i)
            for (int64_t j = 0; j < ow; ++j) {
                const double fy = i * sy, fx = j * sx;
                const int64_t y0 = int64_t(fy), x0 = int64_t(fx);
                const int64_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
                const T wy = T(fy - double(y0)), wx = T(fx - double(x0));
                const T a = xv[nc * h * w + y0 * w + x0], b2 = xv[nc * h * w + y0 * w + x1];
                const T c2 = xv[nc * h * w + y1 * w + x0], d = xv[nc * h * w + y1 * w + x1];
                ov[nc * oh * ow + i * ow + j] =
                    (T(1) - wy) * ((T(1) - wx) * a + wx * b2) + wy * ((T(1) - wx) * c2 + wx * d);
            }
    return out;
}

template <typename T>
ege::Tensor<T> maxpool_naive(const ege::Tensor<T>& x) {
    const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    ege::Tensor<T> out = ege::Tensor<T>::zeros({n, c, h / 2, w / 2});
    auto xv = x.data();
    auto ov = out.data_mut();
    for (int64_t nc = 0; nc < n * c; ++nc)
        for (int64_t i = 0; i < h / 2; ++i)
            for (int64_t j = 0; j < w / 2; ++j) {
                T best = xv[nc * h * w + 2 * i * w + 2 * j];
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx)
                        best = std::max(best, xv[nc * h * w + (2 * i + dy) * w + 2 * j + dx]);
                ov[nc * (h / 2) * (w / 2) + i * (w / 2) + j] = best;
            }
    return out;
}

// Two-pass mean/variance normalization over the channel axis.
template <typename T>
ege::Tensor<T> channel_norm_naive(const ege::Tensor<T>& x, const ege::Tensor<T>& gamma,
                                  const ege::Tensor<T>& beta, T eps = T(1e-6)) {
    const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    ege::Tensor<T> out = ege::Tensor<T>::zeros(x.shape());
    auto xv = x.data();
    auto ov = out.data_mut();
    for (int64_t b = 0; b < n; ++b)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t z = 0; z < w; ++z) {
                T mean = 0;
                for (int64_t ch = 0; ch < c; ++ch) mean += xv[((b * c + ch) * h + y) * w + z];
                mean /= T(c);
                T var = 0;
                for (int64_t ch = 0; ch < c; ++ch) {
                    T d = xv[((b * c + ch) * h + y) * w + z] - mean;
                    var += d * d;
                }
                var /= T(c);
                for (int64_t ch = 0; ch < c; ++ch) {
                    T xhat = (xv[((b * c + ch) * h + y) * w + z] - mean) / std::sqrt(var + eps);
                    ov[((b * c + ch) * h + y) * w + z] =
                        xhat * gamma.data()[ch] + beta.data()[ch];
                }
            }
    return out;
}

// Per-pixel confusion counting against a 0.5 probability threshold.
template <typename T>
ege::ConfusionCounts confusion_naive(const ege::Tensor<T>& logits, const ege::Tensor<T>& target) {
    ege::ConfusionCounts c;
    for (int64_t i = 0; i < logits.numel(); ++i) {
        const double p = 1.0 / (1.0 + std::exp(-double(logits.data()[i])));
        const bool pred = p >= 0.5;
        const bool truth = target.data()[i] == T(1);
        if (pred && truth) c.tp++;
        else if (pred) c.fp++;
        else if (truth) c.fn++;
        else c.tn++;
    }
    return c;
}

}  // namespace oracle
