#pragma once

// The six-stage U-shaped segmentation network.
//
// Encoder stages 1-3 are plain 3x3 convolutions with GELU; stages 4-6 are
// GHPA. A 2x2 max pool sits between consecutive encoder stages. The decoder
// mirrors the encoder (GHPA for the three deep mirrors, plain convs for the
// shallow ones) with bilinear x2 upsampling. Five GABs bridge encoder stage i
// to the decoder; the mask fed to each bridge is the sigmoid of the head one
// level deeper. Six 1x1 heads emit mask logits: head 0 at full resolution on
// the final fused feature, heads 1-5 on the decoder block outputs.

#include "ege/gab.hpp"
#include "ege/ghpa.hpp"

#include <array>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace ege {

struct ModelConfig {
    std::array<int, 6> channels{8, 16, 24, 32, 48, 64};
    int input_channels = 3;
    int input_size = 256;
    DwStyle dw_style = DwStyle::separable;
    bool ghpa_multi_axis = true;
    bool ghpa_dw_on_p = true;
    bool ghpa_residual = false;
    bool gab_use_mask = true;
    bool gab_use_dilation = true;
    uint64_t seed = 0;

    void validate() const {
        for (int i = 1; i < 6; ++i)
            if (channels[i] <= channels[i - 1])
                throw ValueError("model: stage channels must be strictly increasing");
        if (input_channels <= 0) throw ValueError("model: input_channels must be positive");
        if (input_size <= 0 || input_size % 32 != 0)
            throw ValueError("model: input_size must be a positive multiple of 32, got " +
                             std::to_string(input_size));
        for (int i = 2; i < 6; ++i)
            if (channels[i] % 4 != 0 || channels[i - 1] % 4 != 0)
                throw ValueError("model: GHPA/GAB stages need channel counts divisible by 4");
        if (channels[0] % 4 != 0 || channels[1] % 4 != 0)
            throw ValueError("model: bridge channels must be divisible by 4");
    }
};

template <typename T>
struct ForwardResult {
    // logits[0] is the final full-resolution head; logits[5] the deepest.
    std::array<Tensor<T>, 6> logits;
};

template <typename T>
class EgeUnet {
public:
    static EgeUnet build(const ModelConfig& cfg, Rng rng) {
        cfg.validate();
        EgeUnet m;
        m.cfg_ = cfg;
        const auto& ch = cfg.channels;

        auto conv3 = [&](const std::string& name, int cin, int cout) {
            Conv2dSpec s;
            s.in_channels = cin;
            s.out_channels = cout;
            s.kh = s.kw = 3;
            s.ph = s.pw = 1;
            return Conv2dLayer<T>::make(m.params_, name, s, rng);
        };
        auto ghpa = [&](const std::string& name, int cin, int cout) {
            GhpaConfig g;
            g.dim_in = cin;
            g.dim_out = cout;
            g.multi_axis = cfg.ghpa_multi_axis;
            g.dw_on_p = cfg.ghpa_dw_on_p;
            g.residual = cfg.ghpa_residual && cin == cout;
            g.dw_style = cfg.dw_style;
            return Ghpa<T>::make(m.params_, name, g, rng);
        };
        auto head1x1 = [&](const std::string& name, int cin) {
            Conv2dSpec s;
            s.in_channels = cin;
            s.out_channels = 1;
            s.kh = s.kw = 1;
            return Conv2dLayer<T>::make(m.params_, name, s, rng);
        };

        m.enc_conv_[0] = conv3("enc1.conv", cfg.input_channels, ch[0]);
        m.enc_conv_[1] = conv3("enc2.conv", ch[0], ch[1]);
        m.enc_conv_[2] = conv3("enc3.conv", ch[1], ch[2]);
        m.enc_ghpa_[0] = ghpa("enc4", ch[2], ch[3]);
        m.enc_ghpa_[1] = ghpa("enc5", ch[3], ch[4]);
        m.enc_ghpa_[2] = ghpa("enc6", ch[4], ch[5]);

        m.dec_ghpa_[0] = ghpa("dec5", ch[5], ch[4]);
        m.dec_ghpa_[1] = ghpa("dec4", ch[4], ch[3]);
        m.dec_ghpa_[2] = ghpa("dec3", ch[3], ch[2]);
        m.dec_conv_[0] = conv3("dec2.conv", ch[2], ch[1]);
        m.dec_conv_[1] = conv3("dec1.conv", ch[1], ch[0]);

        for (int k = 1; k <= 5; ++k) {
            GabConfig g;
            g.c_low = ch[k - 1];
            g.c_high = ch[k];
            g.use_mask = cfg.gab_use_mask;
            g.use_dilation = cfg.gab_use_dilation;
            g.dw_style = cfg.dw_style;
            m.gab_[k - 1] = Gab<T>::make(m.params_, "gab" + std::to_string(k), g, rng);
        }

        m.head_[0] = head1x1("head0", ch[0]);
        for (int k = 1; k <= 5; ++k)
            m.head_[k] = head1x1("head" + std::to_string(k), ch[k - 1]);
        return m;
    }

    const ModelConfig& config() const { return cfg_; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }

    ForwardResult<T> forward(const Tensor<T>& x, Tape<T>* tape = nullptr) const {
        if (x.rank() != 4 || x.dim(1) != cfg_.input_channels)
            throw ShapeError("model: expected (N," + std::to_string(cfg_.input_channels) +
                             ",H,W) input, got " + shape_str(x.shape()));
        if (x.dim(2) % 32 != 0 || x.dim(3) % 32 != 0)
            throw ShapeError("model: spatial dims must be divisible by 32, got " +
                             shape_str(x.shape()));

        std::array<Tensor<T>, 6> enc;
        enc[0] = gelu(enc_conv_[0].forward(x, tape), tape);
        enc[1] = gelu(enc_conv_[1].forward(maxpool2d(enc[0], tape), tape), tape);
        enc[2] = gelu(enc_conv_[2].forward(maxpool2d(enc[1], tape), tape), tape);
        enc[3] = enc_ghpa_[0].forward(maxpool2d(enc[2], tape), tape);
        enc[4] = enc_ghpa_[1].forward(maxpool2d(enc[3], tape), tape);
        enc[5] = enc_ghpa_[2].forward(maxpool2d(enc[4], tape), tape);

        ForwardResult<T> out;
        Tensor<T> h = enc[5];
        for (int k = 5; k >= 1; --k) {
            Tensor<T> d = decode_block(k, h, tape);
            out.logits[k] = head_[k].forward(d, tape);
            Tensor<T> mask = sigmoid(out.logits[k], tape);
            Tensor<T> bridged = gab_[k - 1].forward(enc[k - 1], h, mask, tape);
            Tensor<T> up = bilinear_resize(d, ResizeSpec{d.dim(2) * 2, d.dim(3) * 2, true}, tape);
            h = add(up, bridged, tape);
        }
        out.logits[0] = head_[0].forward(h, tape);
        return out;
    }

    const Ghpa<T>& encoder_ghpa(int i) const { return enc_ghpa_[i]; }
    const Gab<T>& bridge(int k) const { return gab_[k - 1]; }

    // Per-module cost walk mirroring forward() at the given input size.
    // The sink receives (module name, params, conv MACs, elementwise ops).
    template <typename Sink>
    void walk_cost(int64_t n, int64_t h, int64_t w, Sink&& sink) const {
        const auto& ch = cfg_.channels;
        int64_t lh = h, lw = w;
        const char* enc_names[3] = {"enc1.conv", "enc2.conv", "enc3.conv"};
        for (int i = 0; i < 3; ++i) {
            sink(enc_names[i], enc_conv_[i].param_count(),
                 enc_conv_[i].macs(n * ch[i] * lh * lw),
                 n * ch[i] * lh * lw          // gelu
                     + n * ch[i] * lh * lw * 3 / 4);  // following 2x2 maxpool (3 compares/output)
            lh /= 2;
            lw /= 2;
        }
        const char* ge_names[3] = {"enc4", "enc5", "enc6"};
        for (int i = 0; i < 3; ++i) {
            int64_t conv = 0, other = 0;
            enc_ghpa_[i].macs(n, lh, lw, conv, other);
            // pools sit after stages 4 and 5 only
            int64_t pool = i < 2 ? n * ch[3 + i] * (lh / 2) * (lw / 2) * 3 : 0;
            sink(ge_names[i], enc_ghpa_[i].param_count(), conv, other + pool);
            if (i < 2) {
                lh /= 2;
                lw /= 2;
            }
        }
        // decoder from the bottleneck up; lh/lw now at the deepest level
        const char* dec_names[5] = {"dec5", "dec4", "dec3", "dec2.conv", "dec1.conv"};
        for (int k = 5; k >= 1; --k) {
            const int idx = 5 - k;
            int64_t conv = 0, other = 0;
            int64_t dparams = 0;
            if (k >= 3) {
                dec_ghpa_[5 - k].macs(n, lh, lw, conv, other);
                dparams = dec_ghpa_[5 - k].param_count();
            } else {
                const auto& c = dec_conv_[k == 2 ? 0 : 1];
                conv = c.macs(n * ch[k - 1] * lh * lw);
                other = n * ch[k - 1] * lh * lw;  // gelu
                dparams = c.param_count();
            }
            sink(dec_names[idx], dparams, conv, other);
            sink(("head" + std::to_string(k)).c_str(), head_[k].param_count(),
                 head_[k].macs(n * lh * lw), n * lh * lw /* sigmoid to mask */);
            int64_t gconv = 0, gother = 0;
            gab_[k - 1].macs(n, lh * 2, lw * 2, gconv, gother);
            sink(("gab" + std::to_string(k)).c_str(), gab_[k - 1].param_count(), gconv, gother);
            // upsample of the block output + fusion add at the level above
            sink(("fuse" + std::to_string(k)).c_str(), 0, 0,
                 4 * n * ch[k - 1] * (lh * 2) * (lw * 2) + n * ch[k - 1] * (lh * 2) * (lw * 2));
            lh *= 2;
            lw *= 2;
        }
        sink("head0", head_[0].param_count(), head_[0].macs(n * lh * lw), 0);
    }

    // ------------------------------------------------------------------
    // Checkpoint serialization: magic "EGEU", u32 version, u32 record count,
    // then per record: u16 name length, name bytes, u8 ndim, u32 dims,
    // little-endian f32 payload.
    // ------------------------------------------------------------------

    void save_checkpoint(const std::string& path) const {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) throw ValueError("checkpoint: cannot open " + path + " for writing");
        f.write("EGEU", 4);
        write_u32(f, 1);
        write_u32(f, static_cast<uint32_t>(params_.all().size()));
        for (const auto& p : params_.all()) {
            if (p->name.size() > 0xffff) throw ValueError("checkpoint: name too long");
            write_u16(f, static_cast<uint16_t>(p->name.size()));
            f.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
            const auto& sh = p->value.shape();
            f.put(static_cast<char>(sh.size()));
            for (int64_t d : sh) write_u32(f, static_cast<uint32_t>(d));
            for (T v : p->value.data()) write_f32(f, static_cast<float>(v));
        }
        if (!f) throw ValueError("checkpoint: write failed for " + path);
    }

    static EgeUnet load_checkpoint(const std::string& path, const ModelConfig& cfg) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw ValueError("checkpoint: cannot open " + path);
        char magic[4];
        if (!f.read(magic, 4) || std::memcmp(magic, "EGEU", 4) != 0)
            throw ValueError("checkpoint: bad magic in " + path);
        uint32_t version = read_u32(f, path);
        if (version != 1)
            throw ValueError("checkpoint: unsupported version " + std::to_string(version));
        uint32_t count = read_u32(f, path);
        EgeUnet m = build(cfg, Rng(cfg.seed));
        if (count != m.params_.all().size())
            throw ValueError("checkpoint: has " + std::to_string(count) + " records, config needs " +
                             std::to_string(m.params_.all().size()));
        for (uint32_t i = 0; i < count; ++i) {
            uint16_t nlen = read_u16(f, path);
            std::string name(nlen, '\0');
            if (!f.read(name.data(), nlen)) throw ValueError("checkpoint: truncated file " + path);
            int c = f.get();
            if (c == EOF) throw ValueError("checkpoint: truncated file " + path);
            Shape sh(static_cast<size_t>(c));
            for (auto& d : sh) d = read_u32(f, path);
            auto p = m.params_.find(name);
            if (!p) throw ValueError("checkpoint: unknown parameter '" + name + "'");
            if (p->value.shape() != sh)
                throw ValueError("checkpoint: shape mismatch for '" + name + "': file has " +
                                 shape_str(sh) + ", config needs " + shape_str(p->value.shape()));
            auto dst = p->value.data_mut();
            for (int64_t j = 0; j < p->value.numel(); ++j)
                dst[j] = static_cast<T>(read_f32(f, path));
        }
        return m;
    }

private:
    static void write_u16(std::ofstream& f, uint16_t v) {
        char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
        f.write(b, 2);
    }
    static void write_u32(std::ofstream& f, uint32_t v) {
        char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
        f.write(b, 4);
    }
    static void write_f32(std::ofstream& f, float v) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        write_u32(f, bits);
    }
    static uint16_t read_u16(std::ifstream& f, const std::string& path) {
        unsigned char b[2];
        if (!f.read(reinterpret_cast<char*>(b), 2)) throw ValueError("checkpoint: truncated file " + path);
        return static_cast<uint16_t>(b[0] | (b[1] << 8));
    }
    static uint32_t read_u32(std::ifstream& f, const std::string& path) {
        unsigned char b[4];
        if (!f.read(reinterpret_cast<char*>(b), 4)) throw ValueError("checkpoint: truncated file " + path);
        return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
               (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
    }
    static float read_f32(std::ifstream& f, const std::string& path) {
        uint32_t bits = read_u32(f, path);
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }

    Tensor<T> decode_block(int k, const Tensor<T>& h, Tape<T>* tape) const {
        if (k >= 3) return dec_ghpa_[5 - k].forward(h, tape);
        return gelu(dec_conv_[k == 2 ? 0 : 1].forward(h, tape), tape);
    }

    ModelConfig cfg_;
    ParamStore<T> params_;
    std::array<Conv2dLayer<T>, 3> enc_conv_;
    std::array<Ghpa<T>, 3> enc_ghpa_;
    std::array<Ghpa<T>, 3> dec_ghpa_;
    std::array<Conv2dLayer<T>, 2> dec_conv_;
    std::array<Gab<T>, 5> gab_;
    std::array<Conv2dLayer<T>, 6> head_;
};

}  // namespace ege
