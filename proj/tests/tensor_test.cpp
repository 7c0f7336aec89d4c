#include <gtest/gtest.h>

#include "ege/core.hpp"
#include "support/testutil.hpp"

using ege::Shape;
using ege::Tape;
using ege::Tensor;

TEST(Tensor, ShapeAndDataInvariant) {
    auto t = Tensor<float>::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(t.numel(), 6);
    EXPECT_EQ(t.shape(), (Shape{2, 3}));
    EXPECT_THROW(Tensor<float>::from_data({2, 2}, {1, 2, 3}), ege::ShapeError);
}

TEST(Hadamard, BroadcastAnnihilatorAndIdentity) {
    auto a = Tensor<float>::ones({1, 4, 2, 2});
    auto z = Tensor<float>::zeros({4, 1, 1});
    auto out = ege::hadamard(a, z);
    for (float v : out.data()) EXPECT_EQ(v, 0.0f);

    ege::Rng rng(7);
    auto x = testutil::random_tensor<float>({2, 3, 4, 5}, rng);
    auto ones = Tensor<float>::ones({2, 3, 4, 5});
    EXPECT_TRUE(testutil::bitwise_equal(ege::hadamard(x, ones), x));
}

TEST(Hadamard, ScalarByScalarBroadcast) {
    auto a = Tensor<float>::from_data({1, 2, 1, 1}, {2, 3});
    auto b = Tensor<float>::from_data({2, 1, 1}, {5, 7});
    auto out = ege::hadamard(a, b);
    EXPECT_EQ(out.shape(), (Shape{1, 2, 1, 1}));
    EXPECT_FLOAT_EQ(out.data()[0], 10.0f);
    EXPECT_FLOAT_EQ(out.data()[1], 21.0f);
}

TEST(Hadamard, IncompatibleShapesNameBothShapes) {
    auto a = Tensor<float>::ones({1, 4, 2, 2});
    auto b = Tensor<float>::ones({3, 1, 1});
    try {
        ege::hadamard(a, b);
        FAIL() << "expected broadcast error";
    } catch (const ege::ShapeError& e) {
        std::string msg = e.what();
        EXPECT_NE(msg.find("(3,1,1)"), std::string::npos) << msg;
        EXPECT_NE(msg.find("(1,4,2,2)"), std::string::npos) << msg;
    }
}

TEST(ChunkChannels, SplitsEvenlyAndErrorsOnIndivisible) {
    ege::Rng rng(1);
    auto t = testutil::random_tensor<float>({1, 8, 4, 4}, rng);
    auto parts = ege::chunk_channels(t, 4);
    ASSERT_EQ(parts.size(), 4u);
    for (const auto& p : parts) EXPECT_EQ(p.shape(), (Shape{1, 2, 4, 4}));
    EXPECT_THROW(ege::chunk_channels(t, 3), ege::ShapeError);
}

TEST(ChunkChannels, IndexArithmetic) {
    // channel c holds the constant value c; chunk j of 3 must hold {2j, 2j+1}
    std::vector<float> v(6 * 4);
    for (int c = 0; c < 6; ++c)
        for (int i = 0; i < 4; ++i) v[c * 4 + i] = static_cast<float>(c);
    auto t = Tensor<float>::from_data({1, 6, 2, 2}, std::move(v));
    auto parts = ege::chunk_channels(t, 3);
    for (int j = 0; j < 3; ++j) {
        EXPECT_EQ(parts[j].data()[0], 2.0f * j);
        EXPECT_EQ(parts[j].data()[4], 2.0f * j + 1);
    }
}

TEST(ChunkConcat, RoundTripIsBitwiseIdentity) {
    ege::Rng rng(3);
    for (int k : {1, 2, 4, 8}) {
        auto t = testutil::random_tensor<float>({2, 8, 3, 5}, rng);
        auto parts = ege::chunk_channels(t, k);
        EXPECT_TRUE(testutil::bitwise_equal(ege::concat_channels(parts), t));
    }
}

TEST(ConcatChannels, SinglePartIdentityAndShapeErrors) {
    ege::Rng rng(4);
    auto t = testutil::random_tensor<float>({1, 3, 2, 2}, rng);
    EXPECT_TRUE(testutil::bitwise_equal(ege::concat_channels<float>({t}), t));

    auto a = Tensor<float>::ones({1, 2, 4, 4});
    auto b = Tensor<float>::ones({1, 2, 4, 4});
    EXPECT_EQ(ege::concat_channels<float>({a, b}).shape(), (Shape{1, 4, 4, 4}));
    auto bad = Tensor<float>::ones({1, 2, 4, 5});
    EXPECT_THROW(ege::concat_channels<float>({a, bad}), ege::ShapeError);
}

TEST(Permute, IdentityAndInvolution) {
    ege::Rng rng(5);
    auto t = testutil::random_tensor<float>({2, 3, 4, 5}, rng);
    EXPECT_TRUE(testutil::bitwise_equal(ege::permute(t, {0, 1, 2, 3}), t));

    std::vector<int> order{0, 3, 1, 2};
    auto p = ege::permute(t, order);
    auto back = ege::permute(p, ege::inverse_permutation(order));
    EXPECT_TRUE(testutil::bitwise_equal(back, t));
}

TEST(Permute, IndexMapOracle) {
    ege::Rng rng(6);
    auto t = testutil::random_tensor<float>({1, 2, 3, 4}, rng);
    auto p = ege::permute(t, {0, 3, 1, 2});
    EXPECT_EQ(p.shape(), (Shape{1, 4, 2, 3}));
    for (int n = 0; n < 1; ++n)
        for (int c = 0; c < 2; ++c)
            for (int h = 0; h < 3; ++h)
                for (int w = 0; w < 4; ++w) {
                    float src = t.data()[((n * 2 + c) * 3 + h) * 4 + w];
                    float dst = p.data()[((n * 4 + w) * 2 + c) * 3 + h];
                    EXPECT_EQ(src, dst);
                }
    EXPECT_THROW(ege::permute(t, {0, 1, 1, 2}), ege::ShapeError);
    EXPECT_THROW(ege::permute(t, {0, 1, 2}), ege::ShapeError);
}

TEST(Backward, LinearCases) {
    ege::Rng rng(8);
    auto x = testutil::random_tensor<float>({3, 4}, rng);
    auto w = testutil::random_tensor<float>({3, 4}, rng);
    w.set_requires_grad(true);

    Tape<float> tape;
    auto loss = ege::sum_all(ege::hadamard(w, x, &tape), &tape);
    ege::backward(loss, tape);
    for (int64_t i = 0; i < w.numel(); ++i) EXPECT_FLOAT_EQ(w.grad()[i], x.data()[i]);

    auto w2 = testutil::random_tensor<float>({5}, rng);
    w2.set_requires_grad(true);
    Tape<float> tape2;
    auto loss2 = ege::sum_all(w2, &tape2);
    ege::backward(loss2, tape2);
    for (int64_t i = 0; i < w2.numel(); ++i) EXPECT_FLOAT_EQ(w2.grad()[i], 1.0f);
}

TEST(Backward, NonScalarLossRejected) {
    auto x = Tensor<float>::ones({2, 2});
    x.set_requires_grad(true);
    Tape<float> tape;
    auto y = ege::scale(x, 2.0f, &tape);
    EXPECT_THROW(ege::backward(y, tape), ege::ValueError);
}

TEST(Backward, EmptyTapeYieldsZeroGradients) {
    auto w = Tensor<float>::ones({3});
    w.set_requires_grad(true);
    auto loss = Tensor<float>::ones({1});
    Tape<float> tape;
    ege::backward(loss, tape);
    for (float g : w.grad()) EXPECT_EQ(g, 0.0f);
}

TEST(Backward, AccumulationIsAdditiveAcrossPaths) {
    // loss = sum(x*a) + sum(x*b) => dloss/dx = a + b
    ege::Rng rng(9);
    auto x = testutil::random_tensor<float>({4}, rng);
    x.set_requires_grad(true);
    auto a = testutil::random_tensor<float>({4}, rng);
    auto b = testutil::random_tensor<float>({4}, rng);
    Tape<float> tape;
    auto loss = ege::add(ege::sum_all(ege::hadamard(x, a, &tape), &tape),
                         ege::sum_all(ege::hadamard(x, b, &tape), &tape), &tape);
    ege::backward(loss, tape);
    for (int64_t i = 0; i < 4; ++i)
        EXPECT_NEAR(x.grad()[i], a.data()[i] + b.data()[i], 1e-6);
}

TEST(Backward, UnreachableParamStaysZero) {
    auto used = Tensor<float>::ones({2});
    auto unused = Tensor<float>::ones({2});
    used.set_requires_grad(true);
    unused.set_requires_grad(true);
    Tape<float> tape;
    auto loss = ege::sum_all(used, &tape);
    ege::backward(loss, tape);
    for (float g : unused.grad()) EXPECT_EQ(g, 0.0f);
    for (float g : used.grad()) EXPECT_EQ(g, 1.0f);
}

TEST(Backward, BroadcastGradReducesOverBroadcastAxes) {
    // out = a (.) b with b shaped (C,1,1): db = sum over N,H,W of a
    ege::Rng rng(10);
    auto a = testutil::random_tensor<float>({2, 3, 2, 2}, rng);
    auto b = testutil::random_tensor<float>({3, 1, 1}, rng);
    b.set_requires_grad(true);
    Tape<float> tape;
    auto loss = ege::sum_all(ege::hadamard(a, b, &tape), &tape);
    ege::backward(loss, tape);
    for (int c = 0; c < 3; ++c) {
        float expect = 0;
        for (int n = 0; n < 2; ++n)
            for (int i = 0; i < 4; ++i) expect += a.data()[(n * 3 + c) * 4 + i];
        EXPECT_NEAR(b.grad()[c], expect, 1e-5);
    }
}

TEST(Forward, FiniteOnBoundedInputs) {
    ege::Rng rng(11);
    auto a = testutil::random_tensor<float>({2, 4, 3, 3}, rng, -1e3, 1e3);
    auto b = testutil::random_tensor<float>({4, 1, 1}, rng, -1e3, 1e3);
    EXPECT_TRUE(ege::hadamard(a, b).all_finite());
    EXPECT_TRUE(ege::add(a, a).all_finite());
    EXPECT_TRUE(ege::sum_all(a).all_finite());
    auto parts = ege::chunk_channels(a, 2);
    EXPECT_TRUE(ege::concat_channels(parts).all_finite());
    EXPECT_TRUE(ege::permute(a, {3, 2, 1, 0}).all_finite());
}

TEST(Tape, RecordsCountAndClear) {
    auto x = Tensor<float>::ones({2});
    x.set_requires_grad(true);
    Tape<float> tape;
    EXPECT_EQ(tape.size(), 0u);
    auto y = ege::scale(x, 3.0f, &tape);
    auto z = ege::sum_all(y, &tape);
    (void)z;
    EXPECT_EQ(tape.size(), 2u);
    tape.clear();
    EXPECT_EQ(tape.size(), 0u);
}

TEST(Tape, NoRecordingWithoutTape) {
    auto x = Tensor<float>::ones({2});
    x.set_requires_grad(true);
    auto y = ege::scale(x, 3.0f, static_cast<Tape<float>*>(nullptr));
    EXPECT_FALSE(y.requires_grad());
}
