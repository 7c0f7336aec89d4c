#pragma once

// Group multi-axis Hadamard Product Attention (GHPA).
//
// The input is split into four equal channel groups. Each of the first three
// groups is attended over a different axis pair by HPA: a learnable tensor p,
// stored at a fixed base resolution, is resized to the live feature size,
// optionally refined by a DW block, and multiplied into the features. The
// axis pairs are height-width, channel-height, and channel-width; the latter
// two are reached by permuting the group so the attended axes trail. The
// fourth group passes through a DW block only. Groups are re-concatenated,
// normalized, and fused by a final DW mapping dim_in to dim_out.
//
// Cost is linear in N*C*H*W; there is no pairwise position interaction.

#include "ege/layers.hpp"

#include <array>

namespace ege {

struct GhpaConfig {
    int dim_in = 0;
    int dim_out = 0;
    int p_base = 8;           // stored resolution of p along each spatial axis
    bool multi_axis = true;   // false: all four groups use height-width HPA
    bool dw_on_p = true;      // false: p is used raw after interpolation
    bool residual = false;    // optional skip, only valid when dim_in == dim_out
    DwStyle dw_style = DwStyle::separable;

    void validate() const {
        if (dim_in <= 0 || dim_out <= 0) throw ValueError("ghpa: channel counts must be positive");
        if (dim_in % 4 != 0)
            throw ValueError("ghpa: dim_in " + std::to_string(dim_in) + " not divisible by 4");
        if (residual && dim_in != dim_out)
            throw ValueError("ghpa: residual requires dim_in == dim_out");
    }
};

template <typename T>
class Ghpa {
public:
    enum class Axes { height_width, channel_height, channel_width, feature_dw };

    static Ghpa make(ParamStore<T>& store, const std::string& prefix, const GhpaConfig& cfg,
                     Rng& rng) {
        cfg.validate();
        Ghpa m;
        m.cfg_ = cfg;
        m.prefix_ = prefix;
        const int c = cfg.dim_in / 4;
        // No normalization before the split: the four groups must stay a
        // clean partition of the input channels (a cross-channel norm would
        // couple them). Normalization happens once, after re-concatenation.
        std::array<Axes, 4> plan = cfg.multi_axis
                                       ? std::array<Axes, 4>{Axes::height_width, Axes::channel_height,
                                                             Axes::channel_width, Axes::feature_dw}
                                       : std::array<Axes, 4>{Axes::height_width, Axes::height_width,
                                                             Axes::height_width, Axes::height_width};
        for (int g = 0; g < 4; ++g) {
            Branch& br = m.groups_[g];
            br.axes = plan[g];
            const std::string gp = prefix + ".g" + std::to_string(g + 1);
            switch (br.axes) {
                case Axes::height_width:
                    // p spans both attended spatial axes at base resolution.
                    br.p = store.create(gp + ".p",
                                        uniform_init<T>({1, c, cfg.p_base, cfg.p_base}, 0.8, 1.2, rng));
                    if (cfg.dw_on_p)
                        br.dw2 = DwBlock2d<T>::make(store, gp + ".dw", c, c, cfg.dw_style, rng);
                    break;
                case Axes::channel_height:
                case Axes::channel_width:
                    // The channel axis of p is stored at its exact size and is
                    // never interpolated; only the spatial axis gets resized.
                    br.p = store.create(gp + ".p", uniform_init<T>({1, c, cfg.p_base}, 0.8, 1.2, rng));
                    if (cfg.dw_on_p)
                        br.dw1 = DwBlock1d<T>::make(store, gp + ".dw", c, c, cfg.dw_style, rng);
                    break;
                case Axes::feature_dw:
                    br.dw2 = DwBlock2d<T>::make(store, gp + ".dw", c, c, cfg.dw_style, rng);
                    break;
            }
        }
        m.norm_fuse_ = ChannelNormLayer<T>::make(store, prefix + ".norm_fuse", cfg.dim_in);
        m.fuse_ = DwBlock2d<T>::make(store, prefix + ".fuse", cfg.dim_in, cfg.dim_out,
                                     cfg.dw_style, rng);
        return m;
    }

    const GhpaConfig& config() const { return cfg_; }
    const std::string& prefix() const { return prefix_; }

    Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape) const {
        if (x.rank() != 4 || x.dim(1) != cfg_.dim_in)
            throw ShapeError("ghpa: expected (N," + std::to_string(cfg_.dim_in) + ",H,W), got " +
                             shape_str(x.shape()));
        auto parts = chunk_channels(x, 4, tape);
        std::vector<Tensor<T>> outs;
        outs.reserve(4);
        for (int g = 0; g < 4; ++g) outs.push_back(branch_forward(groups_[g], parts[g], tape));
        Tensor<T> cat = concat_channels(outs, tape);
        Tensor<T> fused = fuse_.forward(norm_fuse_.forward(cat, tape), tape);
        if (cfg_.residual) fused = add(fused, x, tape);
        return fused;
    }

    // Pre-fusion view of one group, used by structural tests.
    Tensor<T> group_output(const Tensor<T>& x, int g, Tape<T>* tape) const {
        auto parts = chunk_channels(x, 4, tape);
        return branch_forward(groups_[g], parts[g], tape);
    }

    int64_t param_count() const {
        int64_t n = norm_fuse_.param_count() + fuse_.param_count();
        for (const auto& br : groups_) {
            if (br.p) n += br.p->value.numel();
            if (br.dw2) n += br.dw2->param_count();
            if (br.dw1) n += br.dw1->param_count();
        }
        return n;
    }

    // Analytic multiply-accumulate count for one forward at the given size.
    // Elementwise work (norms, activations, products) is tallied separately
    // so callers can exclude it.
    void macs(int64_t n, int64_t h, int64_t w, int64_t& conv_macs, int64_t& other_ops) const {
        const int64_t c = cfg_.dim_in / 4;
        const int64_t hw = h * w;
        conv_macs = 0;
        other_ops = 0;
        for (const auto& br : groups_) {
            switch (br.axes) {
                case Axes::height_width:
                    other_ops += 4 * c * hw;  // resize p to (c,H,W)
                    if (br.dw2) {
                        conv_macs += br.dw2->dw.macs(c * hw);
                        other_ops += c * hw;  // gelu
                        if (br.dw2->pw) conv_macs += br.dw2->pw->macs(c * hw);
                    }
                    other_ops += n * c * hw;  // hadamard
                    break;
                case Axes::channel_height:
                case Axes::channel_width: {
                    const int64_t l = br.axes == Axes::channel_height ? h : w;
                    other_ops += 4 * c * l;  // resize p along the attended axis
                    if (br.dw1) {
                        conv_macs += br.dw1->dw.macs(c * l);
                        other_ops += c * l;
                        if (br.dw1->pw) conv_macs += br.dw1->pw->macs(c * l);
                    }
                    other_ops += n * c * hw;  // hadamard (broadcast over the leading axis)
                    break;
                }
                case Axes::feature_dw:
                    if (br.dw2) {
                        conv_macs += br.dw2->dw.macs(n * c * hw);
                        other_ops += n * c * hw;
                        if (br.dw2->pw) conv_macs += br.dw2->pw->macs(n * c * hw);
                    }
                    break;
            }
        }
        other_ops += 5 * n * cfg_.dim_in * hw;  // pre-fusion norm
        conv_macs += fuse_.dw.macs(n * cfg_.dim_in * hw);
        other_ops += n * cfg_.dim_in * hw;  // gelu in fusion DW
        if (fuse_.pw) conv_macs += fuse_.pw->macs(n * cfg_.dim_out * hw);
        if (cfg_.residual) other_ops += n * cfg_.dim_out * hw;
    }

    int64_t total_macs(int64_t n, int64_t h, int64_t w, bool include_elementwise = true) const {
        int64_t conv = 0, other = 0;
        macs(n, h, w, conv, other);
        return include_elementwise ? conv + other : conv;
    }

private:
    struct Branch {
        Axes axes = Axes::feature_dw;
        ParamPtr<T> p;
        std::optional<DwBlock2d<T>> dw2;
        std::optional<DwBlock1d<T>> dw1;
    };

    Tensor<T> branch_forward(const Branch& br, const Tensor<T>& xg, Tape<T>* tape) const {
        const int64_t h = xg.dim(2), w = xg.dim(3);
        switch (br.axes) {
            case Axes::height_width: {
                Tensor<T> p = bilinear_resize(br.p->value, ResizeSpec{h, w, true}, tape);
                if (br.dw2) p = br.dw2->forward(p, tape);
                return hadamard(xg, p, tape);
            }
            case Axes::channel_height: {
                // trailing axes become (C/4, H); p broadcasts over (N, W)
                Tensor<T> xp = permute(xg, {0, 3, 1, 2}, tape);
                Tensor<T> p = linear_resize1d(br.p->value, h, tape);
                if (br.dw1) p = br.dw1->forward(p, tape);
                Tensor<T> y = hadamard(xp, p, tape);
                return permute(y, {0, 2, 3, 1}, tape);
            }
            case Axes::channel_width: {
                Tensor<T> xp = permute(xg, {0, 2, 1, 3}, tape);
                Tensor<T> p = linear_resize1d(br.p->value, w, tape);
                if (br.dw1) p = br.dw1->forward(p, tape);
                Tensor<T> y = hadamard(xp, p, tape);
                return permute(y, {0, 2, 1, 3}, tape);
            }
            case Axes::feature_dw:
                return br.dw2->forward(xg, tape);
        }
        throw ValueError("ghpa: unreachable branch");
    }

    GhpaConfig cfg_;
    std::string prefix_;
    ChannelNormLayer<T> norm_fuse_;
    std::array<Branch, 4> groups_;
    DwBlock2d<T> fuse_;
};

}  // namespace ege
