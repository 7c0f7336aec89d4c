#pragma once

// BCE + Dice stage loss, the weighted deep-supervision total, and the
// mIoU/DSC evaluation metrics.
//
// Both losses take logits and apply the sigmoid internally in a numerically
// stable form. Metrics accumulate pixel confusion counts over the whole
// evaluation set before taking any ratio (dataset-level, not per-image), and
// mIoU is the mean of the foreground and background IoU.

#include "ege/ops.hpp"

#include <array>
#include <span>

namespace ege {

struct LossWeights {
    // index 0 weights the final head, index 5 the deepest
    std::array<double, 6> lambdas{1.0, 0.5, 0.4, 0.3, 0.2, 0.1};
};

template <typename T>
void validate_binary_target(const Tensor<T>& target) {
    for (T v : target.data())
        if (v != T(0) && v != T(1))
            throw ValueError("loss: target must be strictly binary");
}

// Mean over all elements of the logits-form binary cross entropy:
//   max(z,0) - z*y + log(1 + exp(-|z|))
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& logits, const Tensor<T>& target, Tape<T>* tape = nullptr) {
    if (logits.shape() != target.shape())
        throw ShapeError("bce: shape mismatch " + shape_str(logits.shape()) + " vs " +
                         shape_str(target.shape()));
    validate_binary_target(target);
    auto zv = logits.data();
    auto yv = target.data();
    const int64_t n = logits.numel();
    T acc = 0;
    for (int64_t i = 0; i < n; ++i) {
        T z = zv[i];
        acc += std::max(z, T(0)) - z * yv[i] + std::log1p(std::exp(-std::abs(z)));
    }
    Tensor<T> out = Tensor<T>::from_data({1}, {acc / static_cast<T>(n)});
    if (taped(tape, {&logits})) {
        out.set_requires_grad(true);
        Tensor<T> zc = logits, yc = target, oc = out;
        tape->record([zc, yc, oc]() mutable {
            const T g = oc.grad()[0];
            auto gz = zc.grad();
            auto zv2 = zc.data();
            auto yv2 = yc.data();
            const T inv_n = T(1) / static_cast<T>(zc.numel());
            for (int64_t i = 0; i < zc.numel(); ++i)
                gz[i] += g * inv_n * (detail::sigmoid_scalar(zv2[i]) - yv2[i]);
        });
    }
    return out;
}

// 1 - (2*sum(p*y) + s) / (sum(p) + sum(y) + s) with p = sigmoid(logits).
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& logits, const Tensor<T>& target, Tape<T>* tape = nullptr,
                    T smooth = T(1)) {
    if (logits.shape() != target.shape())
        throw ShapeError("dice: shape mismatch " + shape_str(logits.shape()) + " vs " +
                         shape_str(target.shape()));
    validate_binary_target(target);
    auto zv = logits.data();
    auto yv = target.data();
    const int64_t n = logits.numel();
    T inter = 0, psum = 0, ysum = 0;
    for (int64_t i = 0; i < n; ++i) {
        T p = detail::sigmoid_scalar(zv[i]);
        inter += p * yv[i];
        psum += p;
        ysum += yv[i];
    }
    const T denom = psum + ysum + smooth;
    const T value = T(1) - (T(2) * inter + smooth) / denom;
    Tensor<T> out = Tensor<T>::from_data({1}, {value});
    if (taped(tape, {&logits})) {
        out.set_requires_grad(true);
        Tensor<T> zc = logits, yc = target, oc = out;
        tape->record([zc, yc, oc, inter, denom, smooth]() mutable {
            const T g = oc.grad()[0];
            auto gz = zc.grad();
            auto zv2 = zc.data();
            auto yv2 = yc.data();
            const T num = T(2) * inter + smooth;
            for (int64_t i = 0; i < zc.numel(); ++i) {
                T p = detail::sigmoid_scalar(zv2[i]);
                // d value / d p_i = -(2*y_i*denom - num) / denom^2
                T dv = -(T(2) * yv2[i] * denom - num) / (denom * denom);
                gz[i] += g * dv * p * (T(1) - p);
            }
        });
    }
    return out;
}

// Sum over heads of lambda_i * (bce_i + dice_i), each head bilinearly
// upsampled to the target resolution first. Head 0 is the final output.
template <typename T>
Tensor<T> deep_supervision_loss(std::span<const Tensor<T>> logits, const Tensor<T>& target,
                                const LossWeights& w, Tape<T>* tape = nullptr) {
    if (logits.size() != 6)
        throw ValueError("deep supervision: expected 6 heads, got " + std::to_string(logits.size()));
    Tensor<T> total;
    for (size_t i = 0; i < 6; ++i) {
        Tensor<T> up = bilinear_resize(logits[i], ResizeSpec{target.dim(2), target.dim(3), true}, tape);
        Tensor<T> li = add(bce_loss(up, target, tape), dice_loss(up, target, tape), tape);
        Tensor<T> weighted = scale(li, static_cast<T>(w.lambdas[i]), tape);
        total = i == 0 ? weighted : add(total, weighted, tape);
    }
    return total;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct ConfusionCounts {
    int64_t tp = 0, fp = 0, fn = 0, tn = 0;
    int64_t total() const { return tp + fp + fn + tn; }

    void add(const ConfusionCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        tn += o.tn;
    }
};

template <typename T>
void accumulate_confusion(const Tensor<T>& logits, const Tensor<T>& target, ConfusionCounts& cc,
                          double threshold = 0.5) {
    if (logits.shape() != target.shape())
        throw ShapeError("metrics: shape mismatch " + shape_str(logits.shape()) + " vs " +
                         shape_str(target.shape()));
    validate_binary_target(target);
    auto zv = logits.data();
    auto yv = target.data();
    for (int64_t i = 0; i < logits.numel(); ++i) {
        const bool pred = detail::sigmoid_scalar(zv[i]) >= static_cast<T>(threshold);
        const bool truth = yv[i] == T(1);
        if (pred && truth) cc.tp++;
        else if (pred && !truth) cc.fp++;
        else if (!pred && truth) cc.fn++;
        else cc.tn++;
    }
}

inline double foreground_iou(const ConfusionCounts& c) {
    const int64_t d = c.tp + c.fp + c.fn;
    return d == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(d);
}

inline double background_iou(const ConfusionCounts& c) {
    const int64_t d = c.tn + c.fp + c.fn;
    return d == 0 ? 1.0 : static_cast<double>(c.tn) / static_cast<double>(d);
}

// Mean of foreground and background IoU over accumulated counts.
inline double mean_iou(const ConfusionCounts& c) {
    if (c.total() == 0) throw ValueError("metrics: empty evaluation set");
    return 0.5 * (foreground_iou(c) + background_iou(c));
}

// 2*TP / (2*TP + FP + FN) over accumulated counts.
inline double dice_score(const ConfusionCounts& c) {
    if (c.total() == 0) throw ValueError("metrics: empty evaluation set");
    const int64_t d = 2 * c.tp + c.fp + c.fn;
    return d == 0 ? 1.0 : static_cast<double>(2 * c.tp) / static_cast<double>(d);
}

}  // namespace ege
