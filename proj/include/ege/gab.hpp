#pragma once

// Group Aggregation Bridge (GAB).
//
// Fuses a low-level feature map, a channel-adjusted and upsampled high-level
// feature map, and a stage mask. Both feature maps are partitioned into four
// channel groups; each fused group (low group + high group + mask) goes
// through a dilated 3x3 convolution with a group-specific rate from
// {1, 2, 5, 7} and pad == rate, so spatial size is preserved and the
// receptive-field radius equals the rate. A final 1x1 convolution mixes the
// re-concatenated groups. The per-group dilated convolution is factored as a
// dilated depthwise 3x3 followed by a pointwise map to c_low/4 channels,
// which keeps the channel contract and receptive field while staying inside
// the model's parameter budget.

#include "ege/layers.hpp"

#include <array>

namespace ege {

struct GabConfig {
    int c_low = 0;
    int c_high = 0;
    std::array<int, 4> dilation_rates{1, 2, 5, 7};
    bool use_mask = true;      // false: groups fuse only low+high features
    bool use_dilation = true;  // false: every group uses rate 1
    DwStyle dw_style = DwStyle::separable;

    void validate() const {
        if (c_low <= 0 || c_high <= 0) throw ValueError("gab: channel counts must be positive");
        if (c_low % 4 != 0 || c_high % 4 != 0)
            throw ValueError("gab: channels must be divisible by 4, got c_low=" +
                             std::to_string(c_low) + " c_high=" + std::to_string(c_high));
    }

    int rate(int g) const { return use_dilation ? dilation_rates[static_cast<size_t>(g)] : 1; }
    int group_in_channels() const { return c_low / 4 + c_low / 4 + (use_mask ? 1 : 0); }
};

template <typename T>
class Gab {
public:
    static Gab make(ParamStore<T>& store, const std::string& prefix, const GabConfig& cfg,
                    Rng& rng) {
        cfg.validate();
        Gab m;
        m.cfg_ = cfg;
        m.prefix_ = prefix;
        m.pre_ = DwBlock2d<T>::make(store, prefix + ".pre", cfg.c_high, cfg.c_low, cfg.dw_style, rng);
        const int cin = cfg.group_in_channels();
        const int cout = cfg.c_low / 4;
        for (int g = 0; g < 4; ++g) {
            const std::string gp = prefix + ".g" + std::to_string(g);
            const int r = cfg.rate(g);
            Conv2dSpec d;
            d.in_channels = cin;
            d.out_channels = cin;
            d.kh = d.kw = 3;
            d.ph = d.pw = r;
            d.dh = d.dw = r;
            d.groups = cin;
            m.groups_[g].dilated = Conv2dLayer<T>::make(store, gp + ".dw", d, rng);
            Conv2dSpec p;
            p.in_channels = cin;
            p.out_channels = cout;
            p.kh = p.kw = 1;
            m.groups_[g].project = Conv2dLayer<T>::make(store, gp + ".pw", p, rng);
        }
        Conv2dSpec f;
        f.in_channels = cfg.c_low;
        f.out_channels = cfg.c_low;
        f.kh = f.kw = 1;
        m.fuse_ = Conv2dLayer<T>::make(store, prefix + ".fuse", f, rng);
        return m;
    }

    const GabConfig& config() const { return cfg_; }
    const std::string& prefix() const { return prefix_; }

    // low: (N, c_low, H, W); high: (N, c_high, H/2, W/2); mask: (N, 1, Hm, Wm)
    // probabilities. Returns (N, c_low, H, W).
    Tensor<T> forward(const Tensor<T>& low, const Tensor<T>& high, const Tensor<T>& mask,
                      Tape<T>* tape) const {
        if (low.rank() != 4 || low.dim(1) != cfg_.c_low)
            throw ShapeError("gab: low must be (N," + std::to_string(cfg_.c_low) + ",H,W), got " +
                             shape_str(low.shape()));
        if (high.rank() != 4 || high.dim(1) != cfg_.c_high)
            throw ShapeError("gab: high must have " + std::to_string(cfg_.c_high) + " channels, got " +
                             shape_str(high.shape()));
        if (cfg_.use_mask && (mask.rank() != 4 || mask.dim(1) != 1))
            throw ShapeError("gab: mask must be (N,1,Hm,Wm), got " + shape_str(mask.shape()));
        const int64_t h = low.dim(2), w = low.dim(3);
        Tensor<T> xh = pre_.forward(high, tape);
        xh = bilinear_resize(xh, ResizeSpec{h, w, true}, tape);
        Tensor<T> m;
        if (cfg_.use_mask) m = bilinear_resize(mask, ResizeSpec{h, w, true}, tape);
        auto lows = chunk_channels(low, 4, tape);
        auto highs = chunk_channels(xh, 4, tape);
        std::vector<Tensor<T>> outs;
        outs.reserve(4);
        for (int g = 0; g < 4; ++g) {
            std::vector<Tensor<T>> pieces{lows[g], highs[g]};
            if (cfg_.use_mask) pieces.push_back(m);
            Tensor<T> fused = concat_channels(pieces, tape);
            fused = groups_[g].dilated.forward(fused, tape);
            outs.push_back(groups_[g].project.forward(fused, tape));
        }
        return fuse_.forward(concat_channels(outs, tape), tape);
    }

    // Pre-fusion output of one group, used by structural tests.
    Tensor<T> group_output(const Tensor<T>& low, const Tensor<T>& high, const Tensor<T>& mask,
                           int g, Tape<T>* tape) const {
        const int64_t h = low.dim(2), w = low.dim(3);
        Tensor<T> xh = pre_.forward(high, tape);
        xh = bilinear_resize(xh, ResizeSpec{h, w, true}, tape);
        auto lows = chunk_channels(low, 4, tape);
        auto highs = chunk_channels(xh, 4, tape);
        std::vector<Tensor<T>> pieces{lows[g], highs[g]};
        if (cfg_.use_mask) pieces.push_back(bilinear_resize(mask, ResizeSpec{h, w, true}, tape));
        Tensor<T> fused = concat_channels(pieces, tape);
        fused = groups_[g].dilated.forward(fused, tape);
        return groups_[g].project.forward(fused, tape);
    }

    int64_t param_count() const {
        int64_t n = pre_.param_count() + fuse_.param_count();
        for (const auto& g : groups_) n += g.dilated.param_count() + g.project.param_count();
        return n;
    }

    void macs(int64_t n, int64_t h, int64_t w, int64_t& conv_macs, int64_t& other_ops) const {
        conv_macs = 0;
        other_ops = 0;
        const int64_t hh = h / 2, hw2 = w / 2;
        conv_macs += pre_.dw.macs(n * cfg_.c_high * hh * hw2);
        other_ops += n * cfg_.c_high * hh * hw2;  // gelu
        if (pre_.pw) conv_macs += pre_.pw->macs(n * cfg_.c_low * hh * hw2);
        other_ops += 4 * n * cfg_.c_low * h * w;  // upsample high to (H, W)
        if (cfg_.use_mask) other_ops += 4 * n * h * w;  // mask resize
        const int64_t cin = cfg_.group_in_channels();
        const int64_t cout = cfg_.c_low / 4;
        for (int g = 0; g < 4; ++g) {
            conv_macs += groups_[g].dilated.macs(n * cin * h * w);
            conv_macs += groups_[g].project.macs(n * cout * h * w);
        }
        conv_macs += fuse_.macs(n * cfg_.c_low * h * w);
    }

private:
    struct Group {
        Conv2dLayer<T> dilated;
        Conv2dLayer<T> project;
    };

    GabConfig cfg_;
    std::string prefix_;
    DwBlock2d<T> pre_;
    std::array<Group, 4> groups_;
    Conv2dLayer<T> fuse_;
};

}  // namespace ege
