#pragma once

// Dense N-dimensional tensors (row-major, NCHW for activations) with
// reverse-mode automatic differentiation over an explicit tape.
//
// Tensors are values: copies share the underlying block, and no op mutates
// its inputs. Gradients live on the block and are accumulated additively by
// tape replay. The tape is owned by the caller; passing a null tape runs the
// op without recording (inference mode).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace ege {

// Activation tensors at full resolution run to tens of megabytes and are
// reallocated every step; keeping them on the heap free list instead of the
// mmap/munmap path avoids repeated kernel page zeroing. Called once by
// long-running drivers.
inline void tune_allocator_for_training() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

using Shape = std::vector<int64_t>;

class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ValueError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '(';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ')';
    return os.str();
}

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline Shape row_major_strides(const Shape& s) {
    Shape st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
    return st;
}

namespace detail {

// Allocator whose default construction leaves trivial elements
// uninitialized, so buffers that are fully overwritten skip the zeroing
// pass. Value-initialization (e.g. assign) behaves as usual.
template <typename T, typename A = std::allocator<T>>
struct DefaultInitAlloc : public A {
    template <typename U>
    struct rebind {
        using other =
            DefaultInitAlloc<U, typename std::allocator_traits<A>::template rebind_alloc<U>>;
    };
    using A::A;

    template <typename U>
    void construct(U* ptr) noexcept(std::is_nothrow_default_constructible_v<U>) {
        ::new (static_cast<void*>(ptr)) U;
    }
    template <typename U, typename... Args>
    void construct(U* ptr, Args&&... args) {
        std::allocator_traits<A>::construct(static_cast<A&>(*this), ptr,
                                            std::forward<Args>(args)...);
    }
};

template <typename T>
using RawBuffer = std::vector<T, DefaultInitAlloc<T>>;

}  // namespace detail

template <typename T>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape) {
        Tensor t(std::move(shape), true);
        return t;
    }

    // Contents unspecified; for op internals that overwrite every element.
    static Tensor uninit(Shape shape) { return Tensor(std::move(shape), false); }

    static Tensor full(Shape shape, T value) {
        Tensor t(std::move(shape), false);
        std::fill(t.b_->data.begin(), t.b_->data.end(), value);
        return t;
    }

    static Tensor ones(Shape shape) { return full(std::move(shape), T(1)); }

    static Tensor from_data(Shape shape, std::vector<T> values) {
        if (shape_numel(shape) != static_cast<int64_t>(values.size()))
            throw ShapeError("from_data: " + shape_str(shape) + " does not hold " +
                             std::to_string(values.size()) + " values");
        Tensor t(std::move(shape), false);
        std::copy(values.begin(), values.end(), t.b_->data.begin());
        return t;
    }

    bool defined() const { return static_cast<bool>(b_); }
    const Shape& shape() const { return b_->shape; }
    int rank() const { return static_cast<int>(b_->shape.size()); }
    int64_t dim(int i) const { return b_->shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(b_->data.size()); }

    std::span<const T> data() const { return {b_->data.data(), b_->data.size()}; }
    // Mutable access is reserved for initialization and optimizer updates;
    // ops never write through it.
    std::span<T> data_mut() { return {b_->data.data(), b_->data.size()}; }

    bool requires_grad() const { return b_->requires_grad; }
    void set_requires_grad(bool rg) { b_->requires_grad = rg; }

    bool has_grad() const { return !b_->grad.empty(); }
    std::span<T> grad() {
        if (b_->grad.empty()) b_->grad.assign(b_->data.size(), T(0));
        return {b_->grad.data(), b_->grad.size()};
    }
    std::span<const T> grad() const {
        const_cast<Tensor*>(this)->grad();
        return {b_->grad.data(), b_->grad.size()};
    }
    void zero_grad() { std::fill(b_->grad.begin(), b_->grad.end(), T(0)); }

    bool shares_block(const Tensor& other) const { return b_ == other.b_; }

    Tensor clone_values() const {
        Tensor t(b_->shape, false);
        std::copy(b_->data.begin(), b_->data.end(), t.b_->data.begin());
        return t;
    }

    T item() const {
        if (numel() != 1) throw ShapeError("item: tensor has " + std::to_string(numel()) + " elements");
        return b_->data[0];
    }

    bool all_finite() const {
        for (T v : b_->data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

private:
    struct Block {
        Shape shape;
        detail::RawBuffer<T> data;
        detail::RawBuffer<T> grad;  // allocated lazily, same length as data
        bool requires_grad = false;
    };

    Tensor(Shape shape, bool zeroed) {
        b_ = std::make_shared<Block>();
        b_->shape = std::move(shape);
        const auto n = static_cast<size_t>(shape_numel(b_->shape));
        if (zeroed) b_->data.assign(n, T(0));
        else b_->data.resize(n);
    }

    std::shared_ptr<Block> b_;
};

// Ordered list of recorded operations. Replaying in reverse recording order
// accumulates gradients additively into every participating tensor.
template <typename T>
class Tape {
public:
    void record(std::function<void()> backward_fn) { records_.push_back(std::move(backward_fn)); }
    size_t size() const { return records_.size(); }
    void clear() { records_.clear(); }

    void replay_backward() {
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
    }

private:
    std::vector<std::function<void()>> records_;
};

template <typename T>
inline bool taped(Tape<T>* tape, std::initializer_list<const Tensor<T>*> inputs) {
    if (!tape) return false;
    for (const Tensor<T>* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

// ---------------------------------------------------------------------------
// Broadcasting (trailing-aligned, size-1 expansion only)
// ---------------------------------------------------------------------------

// Strides indexing `b` from coordinates of `a`; 0 where b broadcasts.
inline Shape broadcast_strides_into(const Shape& a, const Shape& b) {
    if (b.size() > a.size())
        throw ShapeError("broadcast: " + shape_str(b) + " has higher rank than " + shape_str(a));
    Shape bst = row_major_strides(b);
    Shape out(a.size(), 0);
    size_t off = a.size() - b.size();
    for (size_t i = 0; i < b.size(); ++i) {
        if (b[i] == a[off + i]) out[off + i] = bst[i];
        else if (b[i] == 1) out[off + i] = 0;
        else
            throw ShapeError("broadcast: cannot map " + shape_str(b) + " onto " + shape_str(a));
    }
    return out;
}

// Walks every element of `a` in row-major order, exposing the matching offset
// into a broadcast `b`. Avoids per-element div/mod.
template <typename Fn>
inline void for_each_broadcast(const Shape& a, const Shape& b_strides, Fn&& fn) {
    const size_t r = a.size();
    Shape idx(r, 0);
    int64_t n = shape_numel(a);
    int64_t boff = 0;
    for (int64_t i = 0; i < n; ++i) {
        fn(i, boff);
        for (int ax = static_cast<int>(r) - 1; ax >= 0; --ax) {
            idx[ax]++;
            boff += b_strides[ax];
            if (idx[ax] < a[ax]) break;
            boff -= b_strides[ax] * a[ax];
            idx[ax] = 0;
        }
    }
}

// ---------------------------------------------------------------------------
// Elementwise and structural ops
// ---------------------------------------------------------------------------

// out[i] = a[i] * broadcast(b)[i]. Gradients flow to both inputs; the grad of
// b is sum-reduced over its broadcast axes.
template <typename T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
    Tensor<T> out = Tensor<T>::uninit(a.shape());
    auto av = a.data();
    auto ov = out.data_mut();
    if (a.shape() == b.shape()) {
        auto bv = b.data();
        for (int64_t i = 0; i < a.numel(); ++i) ov[i] = av[i] * bv[i];
    } else {
        Shape bst = broadcast_strides_into(a.shape(), b.shape());
        auto bv = b.data();
        for_each_broadcast(a.shape(), bst, [&](int64_t i, int64_t j) { ov[i] = av[i] * bv[j]; });
    }
    if (taped(tape, {&a, &b})) {
        out.set_requires_grad(true);
        Tensor<T> ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc]() mutable {
            auto go = oc.grad();
            if (ac.shape() == bc.shape()) {
                if (ac.requires_grad()) {
                    auto ga = ac.grad();
                    auto bv = bc.data();
                    for (int64_t i = 0; i < ac.numel(); ++i) ga[i] += go[i] * bv[i];
                }
                if (bc.requires_grad()) {
                    auto gb = bc.grad();
                    auto av = ac.data();
                    for (int64_t i = 0; i < ac.numel(); ++i) gb[i] += go[i] * av[i];
                }
            } else {
                Shape bst = broadcast_strides_into(ac.shape(), bc.shape());
                if (ac.requires_grad()) {
                    auto ga = ac.grad();
                    auto bv = bc.data();
                    for_each_broadcast(ac.shape(), bst,
                                       [&](int64_t i, int64_t j) { ga[i] += go[i] * bv[j]; });
                }
                if (bc.requires_grad()) {
                    auto gb = bc.grad();
                    auto av = ac.data();
                    for_each_broadcast(ac.shape(), bst,
                                       [&](int64_t i, int64_t j) { gb[j] += go[i] * av[i]; });
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
    if (a.shape() != b.shape())
        throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> out = Tensor<T>::uninit(a.shape());
    auto av = a.data();
    auto bv = b.data();
    auto ov = out.data_mut();
    for (int64_t i = 0; i < a.numel(); ++i) ov[i] = av[i] + bv[i];
    if (taped(tape, {&a, &b})) {
        out.set_requires_grad(true);
        Tensor<T> ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc]() mutable {
            auto go = oc.grad();
            if (ac.requires_grad()) {
                auto ga = ac.grad();
                for (int64_t i = 0; i < ac.numel(); ++i) ga[i] += go[i];
            }
            if (bc.requires_grad()) {
                auto gb = bc.grad();
                for (int64_t i = 0; i < bc.numel(); ++i) gb[i] += go[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor, Tape<T>* tape = nullptr) {
    Tensor<T> out = Tensor<T>::uninit(a.shape());
    auto av = a.data();
    auto ov = out.data_mut();
    for (int64_t i = 0; i < a.numel(); ++i) ov[i] = av[i] * factor;
    if (taped(tape, {&a})) {
        out.set_requires_grad(true);
        Tensor<T> ac = a, oc = out;
        tape->record([ac, oc, factor]() mutable {
            auto go = oc.grad();
            auto ga = ac.grad();
            for (int64_t i = 0; i < ac.numel(); ++i) ga[i] += go[i] * factor;
        });
    }
    return out;
}

// Full reduction to a one-element tensor.
template <typename T>
Tensor<T> sum_all(const Tensor<T>& a, Tape<T>* tape = nullptr) {
    T acc = 0;
    for (T v : a.data()) acc += v;
    Tensor<T> out = Tensor<T>::from_data({1}, {acc});
    if (taped(tape, {&a})) {
        out.set_requires_grad(true);
        Tensor<T> ac = a, oc = out;
        tape->record([ac, oc]() mutable {
            T g = oc.grad()[0];
            auto ga = ac.grad();
            for (int64_t i = 0; i < ac.numel(); ++i) ga[i] += g;
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Channel chunk / concat (axis 1)
// ---------------------------------------------------------------------------

template <typename T>
std::vector<Tensor<T>> chunk_channels(const Tensor<T>& t, int k, Tape<T>* tape = nullptr) {
    if (t.rank() < 2) throw ShapeError("chunk_channels: rank must be >= 2, got " + shape_str(t.shape()));
    int64_t c = t.dim(1);
    if (k <= 0 || c % k != 0)
        throw ShapeError("chunk_channels: " + std::to_string(c) + " channels not divisible by " +
                         std::to_string(k));
    int64_t ck = c / k;
    int64_t outer = t.dim(0);
    int64_t inner = t.numel() / (outer * c);
    std::vector<Tensor<T>> parts;
    parts.reserve(static_cast<size_t>(k));
    auto tv = t.data();
    for (int j = 0; j < k; ++j) {
        Shape s = t.shape();
        s[1] = ck;
        Tensor<T> p = Tensor<T>::uninit(s);
        auto pv = p.data_mut();
        for (int64_t n = 0; n < outer; ++n) {
            const T* src = tv.data() + (n * c + j * ck) * inner;
            std::copy(src, src + ck * inner, pv.data() + n * ck * inner);
        }
        parts.push_back(std::move(p));
    }
    if (taped(tape, {&t})) {
        for (auto& p : parts) p.set_requires_grad(true);
        Tensor<T> tc = t;
        std::vector<Tensor<T>> pc = parts;
        tape->record([tc, pc, k, ck, outer, inner, c]() mutable {
            auto gt = tc.grad();
            for (int j = 0; j < k; ++j) {
                auto gp = pc[static_cast<size_t>(j)].grad();
                for (int64_t n = 0; n < outer; ++n) {
                    T* dst = gt.data() + (n * c + j * ck) * inner;
                    const T* src = gp.data() + n * ck * inner;
                    for (int64_t i = 0; i < ck * inner; ++i) dst[i] += src[i];
                }
            }
        });
    }
    return parts;
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts, Tape<T>* tape = nullptr) {
    if (parts.empty()) throw ShapeError("concat_channels: no parts");
    const Shape& s0 = parts[0].shape();
    int64_t c_total = 0;
    for (const auto& p : parts) {
        if (p.rank() != static_cast<int>(s0.size()))
            throw ShapeError("concat_channels: rank mismatch");
        for (size_t ax = 0; ax < s0.size(); ++ax)
            if (ax != 1 && p.shape()[ax] != s0[ax])
                throw ShapeError("concat_channels: incompatible shapes " + shape_str(s0) + " vs " +
                                 shape_str(p.shape()));
        c_total += p.dim(1);
    }
    Shape os = s0;
    os[1] = c_total;
    int64_t outer = s0[0];
    int64_t inner = parts[0].numel() / (outer * s0[1]);
    Tensor<T> out = Tensor<T>::uninit(os);
    auto ov = out.data_mut();
    int64_t coff = 0;
    for (const auto& p : parts) {
        int64_t pc = p.dim(1);
        auto pv = p.data();
        for (int64_t n = 0; n < outer; ++n) {
            const T* src = pv.data() + n * pc * inner;
            std::copy(src, src + pc * inner, ov.data() + (n * c_total + coff) * inner);
        }
        coff += pc;
    }
    bool any_rg = false;
    if (tape)
        for (const auto& p : parts) any_rg = any_rg || p.requires_grad();
    if (any_rg) {
        out.set_requires_grad(true);
        std::vector<Tensor<T>> pc = parts;
        Tensor<T> oc = out;
        tape->record([pc, oc, outer, inner, c_total]() mutable {
            auto go = oc.grad();
            int64_t coff2 = 0;
            for (auto& p : pc) {
                int64_t cp = p.dim(1);
                if (p.requires_grad()) {
                    auto gp = p.grad();
                    for (int64_t n = 0; n < outer; ++n) {
                        const T* src = go.data() + (n * c_total + coff2) * inner;
                        T* dst = gp.data() + n * cp * inner;
                        for (int64_t i = 0; i < cp * inner; ++i) dst[i] += src[i];
                    }
                }
                coff2 += cp;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Axis permutation
// ---------------------------------------------------------------------------

inline void validate_permutation(const std::vector<int>& order, int rank) {
    if (static_cast<int>(order.size()) != rank)
        throw ShapeError("permute: order has " + std::to_string(order.size()) + " axes for rank " +
                         std::to_string(rank));
    std::vector<bool> seen(static_cast<size_t>(rank), false);
    for (int ax : order) {
        if (ax < 0 || ax >= rank || seen[static_cast<size_t>(ax)])
            throw ShapeError("permute: invalid permutation");
        seen[static_cast<size_t>(ax)] = true;
    }
}

inline std::vector<int> inverse_permutation(const std::vector<int>& order) {
    std::vector<int> inv(order.size());
    for (size_t i = 0; i < order.size(); ++i) inv[static_cast<size_t>(order[i])] = static_cast<int>(i);
    return inv;
}

namespace detail {

template <typename T>
void permute_copy(std::span<const T> src, const Shape& src_shape, const std::vector<int>& order,
                  std::span<T> dst, bool accumulate) {
    const int r = static_cast<int>(src_shape.size());
    Shape src_strides = row_major_strides(src_shape);
    Shape out_shape(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) out_shape[i] = src_shape[static_cast<size_t>(order[i])];
    // stride walk over the output index space, reading from src
    Shape walk(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) walk[i] = src_strides[static_cast<size_t>(order[i])];
    Shape idx(static_cast<size_t>(r), 0);
    int64_t soff = 0;
    int64_t n = shape_numel(out_shape);
    for (int64_t i = 0; i < n; ++i) {
        if (accumulate) dst[soff] += src[i];
        else dst[i] = src[soff];
        for (int ax = r - 1; ax >= 0; --ax) {
            idx[ax]++;
            soff += walk[ax];
            if (idx[ax] < out_shape[ax]) break;
            soff -= walk[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
}

}  // namespace detail

template <typename T>
Tensor<T> permute(const Tensor<T>& t, const std::vector<int>& order, Tape<T>* tape = nullptr) {
    validate_permutation(order, t.rank());
    Shape os(order.size());
    for (size_t i = 0; i < order.size(); ++i) os[i] = t.dim(order[i]);
    Tensor<T> out = Tensor<T>::uninit(os);
    detail::permute_copy<T>(t.data(), t.shape(), order, out.data_mut(), false);
    if (taped(tape, {&t})) {
        out.set_requires_grad(true);
        Tensor<T> tc = t, oc = out;
        std::vector<int> ord = order;
        tape->record([tc, oc, ord]() mutable {
            // walk the output grad and scatter-add into source positions
            detail::permute_copy<T>(oc.grad(), tc.shape(), ord, tc.grad(), true);
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Backward driver
// ---------------------------------------------------------------------------

template <typename T>
void backward(Tensor<T>& loss, Tape<T>& tape) {
    if (loss.numel() != 1)
        throw ValueError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    loss.grad()[0] += T(1);
    tape.replay_backward();
}

}  // namespace ege
