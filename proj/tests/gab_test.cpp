#include <gtest/gtest.h>

#include "ege/gab.hpp"
#include "ege/loss.hpp"
#include "support/testutil.hpp"

using ege::Gab;
using ege::GabConfig;
using ege::ParamStore;
using ege::Rng;
using ege::Shape;
using ege::Tape;
using ege::Tensor;

namespace {

template <typename T>
Gab<T> make_gab(ParamStore<T>& store, GabConfig cfg, uint64_t seed = 23) {
    Rng rng(seed);
    return Gab<T>::make(store, "gab", cfg, rng);
}

}  // namespace

TEST(Gab, ShapeContract) {
    GabConfig cfg;
    cfg.c_low = 24;
    cfg.c_high = 32;
    ParamStore<float> store;
    auto mod = make_gab(store, cfg);
    ege::Rng rng(1);
    auto low = testutil::random_tensor<float>({1, 24, 64, 64}, rng);
    auto high = testutil::random_tensor<float>({1, 32, 32, 32}, rng);
    auto mask = testutil::random_tensor<float>({1, 1, 32, 32}, rng, 0.0, 1.0);
    auto y = mod.forward(low, high, mask, nullptr);
    EXPECT_EQ(y.shape(), (Shape{1, 24, 64, 64}));
}

TEST(Gab, OutputSizeEqualsLowSizeForEveryRate) {
    // pad == dilation with k=3 stride 1 preserves spatial size in each group
    GabConfig cfg;
    cfg.c_low = 8;
    cfg.c_high = 16;
    ParamStore<float> store;
    auto mod = make_gab(store, cfg);
    ege::Rng rng(2);
    for (auto hw : {std::pair{16, 16}, {8, 24}, {32, 8}}) {
        auto low = testutil::random_tensor<float>({2, 8, hw.first, hw.second}, rng);
        auto high = testutil::random_tensor<float>({2, 16, hw.first / 2, hw.second / 2}, rng);
        auto mask = testutil::random_tensor<float>({2, 1, hw.first / 2, hw.second / 2}, rng, 0.0, 1.0);
        auto y = mod.forward(low, high, mask, nullptr);
        EXPECT_EQ(y.shape(), (Shape{2, 8, hw.first, hw.second}));
    }
}

TEST(Gab, MaskShapeError) {
    GabConfig cfg;
    cfg.c_low = 8;
    cfg.c_high = 16;
    ParamStore<float> store;
    auto mod = make_gab(store, cfg);
    ege::Rng rng(3);
    auto low = testutil::random_tensor<float>({1, 8, 8, 8}, rng);
    auto high = testutil::random_tensor<float>({1, 16, 4, 4}, rng);
    auto bad_mask = testutil::random_tensor<float>({1, 2, 4, 4}, rng);
    EXPECT_THROW(mod.forward(low, high, bad_mask, nullptr), ege::ShapeError);
}

TEST(Gab, GroupIsolationPreFusion) {
    GabConfig cfg;
    cfg.c_low = 16;
    cfg.c_high = 16;
    ParamStore<float> store;
    auto mod = make_gab(store, cfg);
    ege::Rng rng(4);
    auto low = testutil::random_tensor<float>({1, 16, 16, 16}, rng);
    auto high = testutil::random_tensor<float>({1, 16, 8, 8}, rng);
    auto mask = testutil::random_tensor<float>({1, 1, 8, 8}, rng, 0.0, 1.0);
    // zero low group 2 (channels 8..11); the high side mixes through its
    // channel-adjust DW, so only the low-side grouping is probed
    auto low2 = low.clone_values();
    for (int c = 8; c < 12; ++c)
        for (int i = 0; i < 256; ++i) low2.data_mut()[c * 256 + i] = 0.0f;
    for (int g = 0; g < 4; ++g) {
        auto before = mod.group_output(low, high, mask, g, nullptr);
        auto after = mod.group_output(low2, high, mask, g, nullptr);
        if (g == 2) EXPECT_FALSE(testutil::bitwise_equal(before, after));
        else EXPECT_TRUE(testutil::bitwise_equal(before, after)) << "group " << g;
    }
}

TEST(Gab, ReceptiveFieldRadiusEqualsDilationRate) {
    GabConfig cfg;
    cfg.c_low = 8;
    cfg.c_high = 16;
    ParamStore<float> store;
    auto mod = make_gab(store, cfg, 29);
    const int64_t hw = 32;
    auto low = Tensor<float>::full({1, 8, hw, hw}, 0.1f);
    auto high = Tensor<float>::full({1, 16, hw / 2, hw / 2}, 0.1f);
    auto mask = Tensor<float>::full({1, 1, hw / 2, hw / 2}, 0.5f);
    const int rates[4] = {1, 2, 5, 7};
    for (int g = 0; g < 4; ++g) {
        auto base = mod.group_output(low, high, mask, g, nullptr);
        const int64_t cy = hw / 2, cx = hw / 2;
        for (int dist : {rates[g], rates[g] + 1}) {
            auto low2 = low.clone_values();
            // perturb a low-side pixel of group g, `dist` steps along x
            const int64_t ch = g * 2;
            low2.data_mut()[(ch * hw + cy) * hw + cx + dist] += 10.0f;
            auto out = mod.group_output(low2, high, mask, g, nullptr);
            const int64_t co = 0;  // any output channel of the group
            float delta = std::abs(out.data()[(co * hw + cy) * hw + cx] -
                                   base.data()[(co * hw + cy) * hw + cx]);
            if (dist == rates[g]) EXPECT_GT(delta, 0.0f) << "g" << g << " dist " << dist;
            else EXPECT_EQ(delta, 0.0f) << "g" << g << " dist " << dist;
        }
    }
}

TEST(Gab, DilationDisabledCollapsesToRateOne) {
    GabConfig cfg;
    cfg.c_low = 8;
    cfg.c_high = 16;
    cfg.use_dilation = false;
    ParamStore<float> store;
    auto mod = make_gab(store, cfg, 31);
    const int64_t hw = 16;
    auto low = Tensor<float>::full({1, 8, hw, hw}, 0.1f);
    auto high = Tensor<float>::full({1, 16, hw / 2, hw / 2}, 0.1f);
    auto mask = Tensor<float>::full({1, 1, hw / 2, hw / 2}, 0.5f);
    // group 3 would normally have radius 7; with dilation off it is 1
    auto base = mod.group_output(low, high, mask, 3, nullptr);
    for (int dist : {1, 2}) {
        auto low2 = low.clone_values();
        low2.data_mut()[(6 * hw + 8) * hw + 8 + dist] += 10.0f;
        auto out = mod.group_output(low2, high, mask, 3, nullptr);
        float delta = std::abs(out.data()[(0 * hw + 8) * hw + 8] -
                               base.data()[(0 * hw + 8) * hw + 8]);
        if (dist == 1) EXPECT_GT(delta, 0.0f);
        else EXPECT_EQ(delta, 0.0f);
    }
    // parameter count is unchanged by the dilation flag
    ParamStore<float> store2;
    GabConfig cfg2 = cfg;
    cfg2.use_dilation = true;
    auto mod2 = make_gab(store2, cfg2, 31);
    EXPECT_EQ(mod.param_count(), mod2.param_count());
}

TEST(Gab, MaskParticipates) {
    GabConfig cfg;
    cfg.c_low = 8;
    cfg.c_high = 16;
    ParamStore<float> store;
    auto mod = make_gab(store, cfg);
    ege::Rng rng(5);
    auto low = testutil::random_tensor<float>({1, 8, 8, 8}, rng);
    auto high = testutil::random_tensor<float>({1, 16, 4, 4}, rng);
    auto mask = testutil::random_tensor<float>({1, 1, 4, 4}, rng, 0.1, 0.9);
    mask.set_requires_grad(true);
    Tape<float> tape;
    auto y = mod.forward(low, high, mask, &tape);
    auto loss = ege::sum_all(y, &tape);
    ege::backward(loss, tape);
    double gnorm = 0;
    for (float g : mask.grad()) gnorm += std::abs(g);
    EXPECT_GT(gnorm, 0.0);

    // and changing the mask changes the output
    auto mask2 = mask.clone_values();
    for (auto& v : mask2.data_mut()) v = 1.0f - v;
    auto y2 = mod.forward(low, high, mask2, nullptr);
    EXPECT_FALSE(testutil::bitwise_equal(y, y2));
}

TEST(Gab, ParamCountsMatchEnumerationOracle) {
    for (auto dims : {std::pair{8, 16}, {24, 32}, {48, 64}}) {
        GabConfig cfg;
        cfg.c_low = dims.first;
        cfg.c_high = dims.second;
        ParamStore<float> store;
        auto mod = make_gab(store, cfg);
        int64_t enumerated = 0;
        for (const auto& p : store.all()) enumerated += p->value.numel();
        EXPECT_EQ(mod.param_count(), enumerated) << dims.first << "," << dims.second;
        // closed form, m = c_low/4: pre-DW (separable, c_high -> c_low) +
        // 4 groups (dilated depthwise on 2m+1 + pointwise to m) + 1x1 fusion
        const int64_t m = dims.first / 4, cl = dims.first, ch = dims.second;
        const int64_t pre = 9 * ch + ch + ch * cl + cl;
        const int64_t groups = 4 * (9 * (2 * m + 1) + (2 * m + 1) + (2 * m + 1) * m + m);
        const int64_t fuse = cl * cl + cl;
        EXPECT_EQ(enumerated, pre + groups + fuse);
    }
}

TEST(Gab, MaskFlagReducesGroupInputChannelsByOne) {
    GabConfig with_mask;
    with_mask.c_low = 16;
    with_mask.c_high = 24;
    GabConfig no_mask = with_mask;
    no_mask.use_mask = false;
    ParamStore<float> s1, s2;
    auto m1 = make_gab(s1, with_mask);
    auto m2 = make_gab(s2, no_mask);
    EXPECT_EQ(with_mask.group_in_channels(), 9);
    EXPECT_EQ(no_mask.group_in_channels(), 8);
    EXPECT_LT(m2.param_count(), m1.param_count());
    // per group: depthwise loses 9+1, pointwise loses m
    const int64_t m = 4;
    EXPECT_EQ(m1.param_count() - m2.param_count(), 4 * (10 + m));

    // forward works without a mask tensor
    ege::Rng rng(6);
    auto low = testutil::random_tensor<float>({1, 16, 8, 8}, rng);
    auto high = testutil::random_tensor<float>({1, 24, 4, 4}, rng);
    Tensor<float> empty;
    auto y = m2.forward(low, high, empty, nullptr);
    EXPECT_EQ(y.shape(), (Shape{1, 16, 8, 8}));
}

TEST(Gab, FusionConvWeightsScaleQuadraticallyInLowChannels) {
    GabConfig a, b;
    a.c_low = 16;
    a.c_high = 32;
    b.c_low = 32;
    b.c_high = 32;
    ParamStore<float> s1, s2;
    make_gab(s1, a);
    make_gab(s2, b);
    auto fuse_elems = [](const ParamStore<float>& s) {
        return s.find("gab.fuse.w")->value.numel();
    };
    EXPECT_EQ(fuse_elems(s2), 4 * fuse_elems(s1));
}

TEST(Gab, EndToEndDifferentiable) {
    GabConfig cfg;
    cfg.c_low = 8;
    cfg.c_high = 16;
    ParamStore<float> store;
    auto mod = make_gab(store, cfg);
    ege::Rng rng(7);
    auto low = testutil::random_tensor<float>({1, 8, 8, 8}, rng);
    auto high = testutil::random_tensor<float>({1, 16, 4, 4}, rng);
    auto mask = testutil::random_tensor<float>({1, 1, 4, 4}, rng, 0.1, 0.9);
    low.set_requires_grad(true);
    high.set_requires_grad(true);
    mask.set_requires_grad(true);
    Tape<float> tape;
    auto y = mod.forward(low, high, mask, &tape);
    auto loss = ege::sum_all(y, &tape);
    ege::backward(loss, tape);
    for (const auto& p : store.all()) {
        double norm = 0;
        for (float g : p->value.grad()) norm += std::abs(g);
        EXPECT_GT(norm, 0.0) << "dead parameter " << p->name;
    }
    for (auto* t : {&low, &high, &mask}) {
        double norm = 0;
        for (float g : t->grad()) norm += std::abs(g);
        EXPECT_GT(norm, 0.0);
    }
}
