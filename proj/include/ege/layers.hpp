#pragma once

// Named learnable parameters and the small layer blocks the model is
// assembled from. Parameter names are assigned at construction time and are
// stable across runs for a given configuration.

#include "ege/ops.hpp"
#include "ege/rng.hpp"

#include <memory>
#include <unordered_map>

namespace ege {

template <typename T>
struct Param {
    std::string name;
    Tensor<T> value;        // requires_grad is always set
    std::vector<T> m, v;    // optimizer state slots (first/second moments)
};

template <typename T>
using ParamPtr = std::shared_ptr<Param<T>>;

template <typename T>
class ParamStore {
public:
    ParamPtr<T> create(std::string name, Tensor<T> init) {
        if (index_.count(name)) throw ValueError("duplicate parameter name: " + name);
        auto p = std::make_shared<Param<T>>();
        p->name = std::move(name);
        p->value = std::move(init);
        p->value.set_requires_grad(true);
        index_[p->name] = items_.size();
        items_.push_back(p);
        return p;
    }

    const std::vector<ParamPtr<T>>& all() const { return items_; }

    ParamPtr<T> find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : items_[it->second];
    }

    int64_t total_elems() const {
        int64_t n = 0;
        for (const auto& p : items_) n += p->value.numel();
        return n;
    }

    // Sum of parameter element counts whose name starts with `prefix`.
    int64_t elems_with_prefix(const std::string& prefix) const {
        int64_t n = 0;
        for (const auto& p : items_)
            if (p->name.rfind(prefix, 0) == 0) n += p->value.numel();
        return n;
    }

    void zero_grad() {
        for (auto& p : items_) p->value.zero_grad();
    }

private:
    std::vector<ParamPtr<T>> items_;
    std::unordered_map<std::string, size_t> index_;
};

// Kaiming-uniform (fan-in, gain 1): bound = sqrt(3 / fan_in).
template <typename T>
Tensor<T> kaiming_uniform(const Shape& shape, int64_t fan_in, Rng& rng) {
    const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
    std::vector<T> v(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
    return Tensor<T>::from_data(shape, std::move(v));
}

template <typename T>
Tensor<T> uniform_init(const Shape& shape, double lo, double hi, Rng& rng) {
    std::vector<T> v(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
    return Tensor<T>::from_data(shape, std::move(v));
}

enum class DwStyle { separable, depthwise_only };

inline std::string to_string(DwStyle s) {
    return s == DwStyle::separable ? "separable" : "depthwise_only";
}

// ---------------------------------------------------------------------------
// Conv layers
// ---------------------------------------------------------------------------

template <typename T>
struct Conv2dLayer {
    Conv2dSpec spec;
    ParamPtr<T> w;
    ParamPtr<T> b;  // null when has_bias is false

    static Conv2dLayer make(ParamStore<T>& store, const std::string& prefix, Conv2dSpec spec,
                            Rng& rng) {
        spec.validate();
        Conv2dLayer l;
        l.spec = spec;
        Shape ws = {spec.out_channels, spec.in_channels / spec.groups, spec.kh, spec.kw};
        int64_t fan_in = static_cast<int64_t>(spec.in_channels / spec.groups) * spec.kh * spec.kw;
        l.w = store.create(prefix + ".w", kaiming_uniform<T>(ws, fan_in, rng));
        if (spec.has_bias) l.b = store.create(prefix + ".b", Tensor<T>::zeros({spec.out_channels}));
        return l;
    }

    Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape) const {
        std::optional<Tensor<T>> bias;
        if (b) bias = b->value;
        return conv2d(x, w->value, bias, spec, tape);
    }

    int64_t param_count() const { return w->value.numel() + (b ? b->value.numel() : 0); }

    int64_t macs(int64_t out_elems) const {
        return out_elems * static_cast<int64_t>(spec.in_channels / spec.groups) * spec.kh * spec.kw;
    }
};

template <typename T>
struct Conv1dLayer {
    Conv1dSpec spec;
    ParamPtr<T> w;
    ParamPtr<T> b;

    static Conv1dLayer make(ParamStore<T>& store, const std::string& prefix, Conv1dSpec spec,
                            Rng& rng) {
        Conv1dLayer l;
        l.spec = spec;
        Shape ws = {spec.out_channels, spec.in_channels / spec.groups, spec.k};
        int64_t fan_in = static_cast<int64_t>(spec.in_channels / spec.groups) * spec.k;
        l.w = store.create(prefix + ".w", kaiming_uniform<T>(ws, fan_in, rng));
        if (spec.has_bias) l.b = store.create(prefix + ".b", Tensor<T>::zeros({spec.out_channels}));
        return l;
    }

    Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape) const {
        std::optional<Tensor<T>> bias;
        if (b) bias = b->value;
        return conv1d(x, w->value, bias, spec, tape);
    }

    int64_t param_count() const { return w->value.numel() + (b ? b->value.numel() : 0); }

    int64_t macs(int64_t out_elems) const {
        return out_elems * static_cast<int64_t>(spec.in_channels / spec.groups) * spec.k;
    }
};

// ---------------------------------------------------------------------------
// Depthwise-separable block (the paper-cited "DW"): depthwise 3x3, GELU, then
// a pointwise 1x1 that mixes channels. Under DwStyle::depthwise_only the
// pointwise conv is dropped wherever the block does not need to change its
// channel count.
// ---------------------------------------------------------------------------

template <typename T>
struct DwBlock2d {
    Conv2dLayer<T> dw;
    std::optional<Conv2dLayer<T>> pw;

    static DwBlock2d make(ParamStore<T>& store, const std::string& prefix, int c_in, int c_out,
                          DwStyle style, Rng& rng) {
        DwBlock2d blk;
        Conv2dSpec d;
        d.in_channels = c_in;
        d.out_channels = c_in;
        d.kh = d.kw = 3;
        d.ph = d.pw = 1;
        d.groups = c_in;
        blk.dw = Conv2dLayer<T>::make(store, prefix + ".dw", d, rng);
        if (style == DwStyle::separable || c_in != c_out) {
            Conv2dSpec p;
            p.in_channels = c_in;
            p.out_channels = c_out;
            p.kh = p.kw = 1;
            blk.pw = Conv2dLayer<T>::make(store, prefix + ".pw", p, rng);
        }
        return blk;
    }

    Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape) const {
        Tensor<T> y = gelu(dw.forward(x, tape), tape);
        if (pw) y = pw->forward(y, tape);
        return y;
    }

    int64_t param_count() const { return dw.param_count() + (pw ? pw->param_count() : 0); }
};

template <typename T>
struct DwBlock1d {
    Conv1dLayer<T> dw;
    std::optional<Conv1dLayer<T>> pw;

    static DwBlock1d make(ParamStore<T>& store, const std::string& prefix, int c_in, int c_out,
                          DwStyle style, Rng& rng) {
        DwBlock1d blk;
        Conv1dSpec d;
        d.in_channels = c_in;
        d.out_channels = c_in;
        d.k = 3;
        d.pad = 1;
        d.groups = c_in;
        blk.dw = Conv1dLayer<T>::make(store, prefix + ".dw", d, rng);
        if (style == DwStyle::separable || c_in != c_out) {
            Conv1dSpec p;
            p.in_channels = c_in;
            p.out_channels = c_out;
            p.k = 1;
            blk.pw = Conv1dLayer<T>::make(store, prefix + ".pw", p, rng);
        }
        return blk;
    }

    Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape) const {
        Tensor<T> y = gelu(dw.forward(x, tape), tape);
        if (pw) y = pw->forward(y, tape);
        return y;
    }

    int64_t param_count() const { return dw.param_count() + (pw ? pw->param_count() : 0); }
};

template <typename T>
struct ChannelNormLayer {
    ParamPtr<T> gamma;
    ParamPtr<T> beta;

    static ChannelNormLayer make(ParamStore<T>& store, const std::string& prefix, int channels) {
        ChannelNormLayer l;
        l.gamma = store.create(prefix + ".gamma", Tensor<T>::ones({channels}));
        l.beta = store.create(prefix + ".beta", Tensor<T>::zeros({channels}));
        return l;
    }

    Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape) const {
        return channel_norm(x, gamma->value, beta->value, tape);
    }

    int64_t param_count() const { return gamma->value.numel() + beta->value.numel(); }
};

}  // namespace ege
