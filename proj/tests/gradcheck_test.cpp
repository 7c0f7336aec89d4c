#include <gtest/gtest.h>

#include "ege/analysis.hpp"

using ege::GradCheckResult;
using ege::Tape;
using ege::Tensor;

TEST(GradCheck, EveryOpAndBothModulesPass) {
    auto results = ege::run_all_gradchecks();
    ASSERT_FALSE(results.empty());
    for (const auto& r : results) {
        EXPECT_TRUE(r.pass) << r.op << " max rel err " << r.max_rel_err;
        EXPECT_GT(r.checked, 0) << r.op;
    }
}

TEST(GradCheck, RegistryListsEveryOpExactlyOnce) {
    auto results = ege::run_all_gradchecks();
    std::vector<std::string> names;
    for (const auto& r : results) names.push_back(r.op);
    auto sorted = names;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_TRUE(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end())
        << "duplicate op entry";
    for (const char* expected :
         {"hadamard", "add", "scale", "sum", "chunk_channels", "concat_channels", "permute",
          "conv2d", "conv1d", "bilinear_resize", "linear_resize1d", "maxpool2d", "gelu", "sigmoid",
          "channel_norm", "bce_loss", "dice_loss", "ghpa", "gab"}) {
        EXPECT_NE(std::find(names.begin(), names.end(), expected), names.end())
            << "missing op " << expected;
    }
}

TEST(GradCheck, HadamardIsNearlyExact) {
    auto results = ege::run_all_gradchecks();
    for (const auto& r : results) {
        if (r.op == "hadamard") {
            EXPECT_LT(r.max_rel_err, 1e-9);
        }
    }
}

// Harness sanity: a deliberately wrong backward must be caught loudly.
TEST(GradCheck, DetectsInjectedFault) {
    auto broken_mul = [](std::vector<Tensor<double>>& in, Tape<double>* tape) {
        const auto& a = in[0];
        const auto& b = in[1];
        Tensor<double> out = Tensor<double>::zeros(a.shape());
        for (int64_t i = 0; i < a.numel(); ++i)
            out.data_mut()[i] = a.data()[i] * b.data()[i];
        if (tape) {
            out.set_requires_grad(true);
            Tensor<double> ac = a, bc = b, oc = out;
            tape->record([ac, bc, oc]() mutable {
                auto go = oc.grad();
                auto ga = ac.grad();
                auto gb = bc.grad();
                for (int64_t i = 0; i < ac.numel(); ++i) {
                    ga[i] += go[i] * ac.data()[i];  // wrong: should be b
                    gb[i] += go[i] * bc.data()[i];  // wrong: should be a
                }
            });
        }
        return ege::project_to_scalar(out, tape, 55);
    };
    ege::Rng rng(40);
    std::vector<Tensor<double>> inputs;
    for (int k = 0; k < 2; ++k) {
        std::vector<double> v(12);
        for (auto& x : v) x = rng.uniform(0.5, 2.0);
        auto t = Tensor<double>::from_data({3, 4}, std::move(v));
        t.set_requires_grad(true);
        inputs.push_back(t);
    }
    auto res = ege::gradcheck("broken_mul", inputs, broken_mul);
    EXPECT_FALSE(res.pass);
    EXPECT_GT(res.max_rel_err, 1e-2);
}
