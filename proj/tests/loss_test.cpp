#include <gtest/gtest.h>

#include "ege/loss.hpp"
#include "support/oracles.hpp"
#include "support/testutil.hpp"

using ege::LossWeights;
using ege::Shape;
using ege::Tape;
using ege::Tensor;

TEST(BceLoss, ZeroLogitsGiveLnTwo) {
    auto z = Tensor<double>::zeros({1, 1, 4, 4});
    ege::Rng rng(1);
    auto y = testutil::random_binary<double>({1, 1, 4, 4}, rng);
    EXPECT_NEAR(ege::bce_loss(z, y).item(), std::log(2.0), 1e-10);
}

TEST(BceLoss, SaturatedLogitsVanish) {
    ege::Rng rng(2);
    auto y = testutil::random_binary<float>({1, 1, 4, 4}, rng);
    std::vector<float> zv(16);
    for (int i = 0; i < 16; ++i) zv[i] = y.data()[i] == 1.0f ? 50.0f : -50.0f;
    auto z = Tensor<float>::from_data({1, 1, 4, 4}, std::move(zv));
    EXPECT_LT(ege::bce_loss(z, y).item(), 1e-8);
}

TEST(BceLoss, MatchesDirectFormulaInDouble) {
    ege::Rng rng(3);
    auto z = testutil::random_tensor<double>({1, 1, 4, 4}, rng, -3.0, 3.0);
    auto y = testutil::random_binary<double>({1, 1, 4, 4}, rng);
    double want = 0;
    for (int i = 0; i < 16; ++i) {
        double p = 1.0 / (1.0 + std::exp(-z.data()[i]));
        want += -(y.data()[i] * std::log(p) + (1.0 - y.data()[i]) * std::log(1.0 - p));
    }
    want /= 16;
    EXPECT_NEAR(ege::bce_loss(z, y).item(), want, 1e-10);
}

TEST(BceLoss, RejectsNonBinaryTarget) {
    auto z = Tensor<float>::zeros({4});
    auto y = Tensor<float>::full({4}, 0.5f);
    EXPECT_THROW(ege::bce_loss(z, y), ege::ValueError);
}

TEST(BceLoss, NonNegative) {
    ege::Rng rng(4);
    for (int t = 0; t < 20; ++t) {
        auto z = testutil::random_tensor<float>({2, 1, 3, 3}, rng, -5.0, 5.0);
        auto y = testutil::random_binary<float>({2, 1, 3, 3}, rng);
        EXPECT_GE(ege::bce_loss(z, y).item(), 0.0f);
    }
}

TEST(DiceLoss, PerfectPredictionIsExactlyZero) {
    // p == y == all ones over 16 pixels: 1 - 33/33 == 0 under s = 1
    auto z = Tensor<double>::full({1, 1, 4, 4}, 50.0);
    auto y = Tensor<double>::ones({1, 1, 4, 4});
    EXPECT_EQ(ege::dice_loss(z, y).item(), 0.0);
}

TEST(DiceLoss, AllWrongApproaches1Minus1Over17) {
    auto z = Tensor<double>::full({1, 1, 4, 4}, 50.0);  // p == 1
    auto y = Tensor<double>::zeros({1, 1, 4, 4});
    EXPECT_NEAR(ege::dice_loss(z, y).item(), 1.0 - 1.0 / 17.0, 1e-12);
}

TEST(DiceLoss, EmptyEmptyIsZero) {
    auto z = Tensor<double>::full({1, 1, 4, 4}, -50.0);  // p == 0
    auto y = Tensor<double>::zeros({1, 1, 4, 4});
    EXPECT_NEAR(ege::dice_loss(z, y).item(), 0.0, 1e-12);
}

TEST(DiceLoss, StaysInUnitInterval) {
    ege::Rng rng(5);
    for (int t = 0; t < 30; ++t) {
        auto z = testutil::random_tensor<float>({1, 1, 5, 5}, rng, -6.0, 6.0);
        auto y = testutil::random_binary<float>({1, 1, 5, 5}, rng);
        float v = ege::dice_loss(z, y).item();
        EXPECT_GE(v, 0.0f);
        EXPECT_LT(v, 1.0f);
    }
}

TEST(DeepSupervision, WeightedSumIdentityOnEqualHeads) {
    // all heads identical logits -> loss == (sum lambda) * (bce + dice)
    ege::Rng rng(6);
    auto z = testutil::random_tensor<double>({1, 1, 8, 8}, rng, -2.0, 2.0);
    auto y = testutil::random_binary<double>({1, 1, 8, 8}, rng);
    std::array<Tensor<double>, 6> heads;
    for (auto& h : heads) h = z;
    LossWeights w;
    auto total = ege::deep_supervision_loss<double>(
        std::span<const Tensor<double>>(heads.data(), 6), y, w);
    double single = ege::bce_loss(z, y).item() + ege::dice_loss(z, y).item();
    EXPECT_NEAR(total.item(), 2.5 * single, 1e-12);
}

TEST(DeepSupervision, OneHotLambdaSelectsFinalHead) {
    ege::Rng rng(7);
    std::array<Tensor<double>, 6> heads;
    int64_t hw = 32;
    for (int i = 0; i < 6; ++i) {
        heads[i] = testutil::random_tensor<double>({1, 1, hw, hw}, rng, -2.0, 2.0);
        if (i > 0) hw /= 2;
    }
    auto y = testutil::random_binary<double>({1, 1, 32, 32}, rng);
    LossWeights w;
    w.lambdas = {1, 0, 0, 0, 0, 0};
    auto total = ege::deep_supervision_loss<double>(
        std::span<const Tensor<double>>(heads.data(), 6), y, w);
    double expect = ege::bce_loss(heads[0], y).item() + ege::dice_loss(heads[0], y).item();
    EXPECT_NEAR(total.item(), expect, 1e-12);
}

TEST(DeepSupervision, MatchesHandRolledSum) {
    ege::Rng rng(8);
    std::array<Tensor<double>, 6> heads;
    int64_t hw = 64;
    for (int i = 0; i < 6; ++i) {
        heads[i] = testutil::random_tensor<double>({2, 1, hw, hw}, rng, -2.0, 2.0);
        hw /= 2;
    }
    auto y = testutil::random_binary<double>({2, 1, 64, 64}, rng);
    LossWeights w;  // defaults 1, 0.5, 0.4, 0.3, 0.2, 0.1
    auto total = ege::deep_supervision_loss<double>(
        std::span<const Tensor<double>>(heads.data(), 6), y, w);
    double expect = 0;
    for (int i = 0; i < 6; ++i) {
        auto up = ege::bilinear_resize(heads[i], ege::ResizeSpec{64, 64, true});
        expect += w.lambdas[i] * (ege::bce_loss(up, y).item() + ege::dice_loss(up, y).item());
    }
    EXPECT_NEAR(total.item(), expect, 1e-12);
}

TEST(DeepSupervision, LinearInLambda) {
    ege::Rng rng(9);
    std::array<Tensor<double>, 6> heads;
    int64_t hw = 32;
    for (int i = 0; i < 6; ++i) {
        heads[i] = testutil::random_tensor<double>({1, 1, hw, hw}, rng, -2.0, 2.0);
        if (i > 0) hw /= 2;
    }
    auto y = testutil::random_binary<double>({1, 1, 32, 32}, rng);
    LossWeights w;
    auto base = ege::deep_supervision_loss<double>(
        std::span<const Tensor<double>>(heads.data(), 6), y, w);
    LossWeights w2;
    for (auto& l : w2.lambdas) l *= 3.0;
    for (size_t i = 0; i < 6; ++i) w2.lambdas[i] = 3.0 * w.lambdas[i];
    auto scaled = ege::deep_supervision_loss<double>(
        std::span<const Tensor<double>>(heads.data(), 6), y, w2);
    EXPECT_NEAR(scaled.item(), 3.0 * base.item(), 1e-12);
}

TEST(DeepSupervision, RejectsWrongHeadCount) {
    std::vector<Tensor<double>> heads(5, Tensor<double>::zeros({1, 1, 4, 4}));
    auto y = Tensor<double>::zeros({1, 1, 4, 4});
    EXPECT_THROW(ege::deep_supervision_loss<double>(
                     std::span<const Tensor<double>>(heads.data(), heads.size()), y,
                     LossWeights{}),
                 ege::ValueError);
}

TEST(Metrics, PerfectAndComplement) {
    ege::Rng rng(10);
    auto y = testutil::random_binary<float>({1, 1, 8, 8}, rng);
    std::vector<float> zv(64);
    for (int i = 0; i < 64; ++i) zv[i] = y.data()[i] == 1.0f ? 10.0f : -10.0f;
    auto z = Tensor<float>::from_data({1, 1, 8, 8}, std::move(zv));
    ege::ConfusionCounts cc;
    ege::accumulate_confusion(z, y, cc);
    EXPECT_EQ(ege::mean_iou(cc), 1.0);
    EXPECT_EQ(ege::dice_score(cc), 1.0);
    EXPECT_EQ(cc.total(), 64);

    // complement prediction: foreground IoU is exactly 0
    std::vector<float> inv(64);
    for (int i = 0; i < 64; ++i) inv[i] = y.data()[i] == 1.0f ? -10.0f : 10.0f;
    auto zi = Tensor<float>::from_data({1, 1, 8, 8}, std::move(inv));
    ege::ConfusionCounts cc2;
    ege::accumulate_confusion(zi, y, cc2);
    EXPECT_EQ(ege::foreground_iou(cc2), 0.0);
}

TEST(Metrics, MatchesBruteForceOracle) {
    ege::Rng rng(11);
    auto z = testutil::random_tensor<float>({1, 1, 16, 16}, rng, -2.0, 2.0);
    auto y = testutil::random_binary<float>({1, 1, 16, 16}, rng);
    ege::ConfusionCounts cc;
    ege::accumulate_confusion(z, y, cc);
    auto want = oracle::confusion_naive(z, y);
    EXPECT_EQ(cc.tp, want.tp);
    EXPECT_EQ(cc.fp, want.fp);
    EXPECT_EQ(cc.fn, want.fn);
    EXPECT_EQ(cc.tn, want.tn);
}

TEST(Metrics, DscIouAlgebraicIdentity) {
    // DSC == 2*IoU/(1+IoU) over the same accumulated counts
    ege::Rng rng(12);
    for (int t = 0; t < 10; ++t) {
        auto z = testutil::random_tensor<float>({1, 1, 12, 12}, rng, -2.0, 2.0);
        auto y = testutil::random_binary<float>({1, 1, 12, 12}, rng);
        ege::ConfusionCounts cc;
        ege::accumulate_confusion(z, y, cc);
        const double iou = ege::foreground_iou(cc);
        EXPECT_NEAR(ege::dice_score(cc), 2.0 * iou / (1.0 + iou), 1e-12);
    }
}

TEST(Metrics, EmptyEvaluationSetErrors) {
    ege::ConfusionCounts cc;
    EXPECT_THROW(ege::mean_iou(cc), ege::ValueError);
    EXPECT_THROW(ege::dice_score(cc), ege::ValueError);
}

TEST(Metrics, DatasetLevelAccumulation) {
    // counts add across images before any ratio is taken
    ege::Rng rng(13);
    ege::ConfusionCounts total;
    ege::ConfusionCounts parts[2];
    for (int i = 0; i < 2; ++i) {
        auto z = testutil::random_tensor<float>({1, 1, 6, 6}, rng, -2.0, 2.0);
        auto y = testutil::random_binary<float>({1, 1, 6, 6}, rng);
        ege::accumulate_confusion(z, y, total);
        ege::accumulate_confusion(z, y, parts[i]);
    }
    ege::ConfusionCounts summed = parts[0];
    summed.add(parts[1]);
    EXPECT_EQ(total.tp, summed.tp);
    EXPECT_EQ(total.tn, summed.tn);
    EXPECT_EQ(total.fp, summed.fp);
    EXPECT_EQ(total.fn, summed.fn);
}
