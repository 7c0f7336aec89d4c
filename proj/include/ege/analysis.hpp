#pragma once

// Parameter/FLOP accounting and the finite-difference gradient-check harness.
//
// Cost accounting: analytic multiply-accumulate counts per layer (conv MACs
// are out_elems * in_ch/groups * kh * kw; resize 4 MACs per output; norms 5
// ops per element; activations and products 1 per element). A convention
// multiplies MACs by 1 or 2 when printing FLOPs; elementwise work can be
// excluded for conv-only comparisons.
//
// Gradient checking runs in double precision with central differences
// (step 1e-3): pass iff relative error < 1e-4, with a 1e-6 absolute floor.

#include "ege/gab.hpp"
#include "ege/ghpa.hpp"
#include "ege/loss.hpp"
#include "ege/model.hpp"

#include <functional>
#include <iomanip>

namespace ege {

// ---------------------------------------------------------------------------
// Cost report
// ---------------------------------------------------------------------------

enum class FlopConvention { mac_as_1_flop, mac_as_2_flops };

struct CostRow {
    std::string name;
    int64_t params = 0;
    int64_t conv_macs = 0;
    int64_t other_ops = 0;  // elementwise / resize / pooling work
};

struct CostReport {
    std::vector<CostRow> rows;
    Shape input_shape;
    int64_t total_params = 0;
    int64_t total_conv_macs = 0;
    int64_t total_other_ops = 0;

    int64_t total_macs(bool include_elementwise = true) const {
        return total_conv_macs + (include_elementwise ? total_other_ops : 0);
    }
    int64_t flops(FlopConvention conv, bool include_elementwise = true) const {
        return total_macs(include_elementwise) * (conv == FlopConvention::mac_as_1_flop ? 1 : 2);
    }
};

template <typename T>
int64_t count_params(const EgeUnet<T>& model) {
    return model.params().total_elems();
}

template <typename T>
CostReport cost_report(const EgeUnet<T>& model, int64_t n, int64_t h, int64_t w) {
    CostReport rep;
    rep.input_shape = {n, model.config().input_channels, h, w};
    model.walk_cost(n, h, w, [&](const char* name, int64_t params, int64_t conv, int64_t other) {
        rep.rows.push_back(CostRow{name, params, conv, other});
        rep.total_params += params;
        rep.total_conv_macs += conv;
        rep.total_other_ops += other;
    });
    return rep;
}

inline std::string format_cost_table(const CostReport& rep) {
    std::ostringstream os;
    os << std::left << std::setw(14) << "layer" << std::right << std::setw(10) << "params"
       << std::setw(14) << "conv MACs" << std::setw(14) << "other ops" << '\n';
    os << std::string(52, '-') << '\n';
    for (const auto& r : rep.rows) {
        if (r.params == 0 && r.conv_macs == 0 && r.other_ops == 0) continue;
        os << std::left << std::setw(14) << r.name << std::right << std::setw(10) << r.params
           << std::setw(14) << r.conv_macs << std::setw(14) << r.other_ops << '\n';
    }
    os << std::string(52, '-') << '\n';
    os << std::left << std::setw(14) << "total" << std::right << std::setw(10) << rep.total_params
       << std::setw(14) << rep.total_conv_macs << std::setw(14) << rep.total_other_ops << '\n';
    return os.str();
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

struct GradCheckResult {
    std::string op;
    double max_rel_err = 0.0;
    int64_t checked = 0;
    bool pass = true;
};

struct GradCheckSettings {
    double eps = 1e-3;
    double tol = 1e-4;
    double abs_floor = 1e-6;
};

// fn maps (inputs, tape) to a scalar loss tensor. Each input marked
// requires_grad is probed element by element.
inline GradCheckResult gradcheck(
    const std::string& name, std::vector<Tensor<double>> inputs,
    const std::function<Tensor<double>(std::vector<Tensor<double>>&, Tape<double>*)>& fn,
    GradCheckSettings s = {}) {
    GradCheckResult res;
    res.op = name;

    Tape<double> tape;
    Tensor<double> loss = fn(inputs, &tape);
    backward(loss, tape);

    for (auto& input : inputs) {
        if (!input.requires_grad()) continue;
        auto g = input.grad();
        auto vals = input.data_mut();
        for (int64_t i = 0; i < input.numel(); ++i) {
            const double keep = vals[i];
            vals[i] = keep + s.eps;
            double lp = fn(inputs, nullptr).item();
            vals[i] = keep - s.eps;
            double lm = fn(inputs, nullptr).item();
            vals[i] = keep;
            const double numeric = (lp - lm) / (2.0 * s.eps);
            const double analytic = g[i];
            const double diff = std::abs(analytic - numeric);
            double rel = 0.0;
            if (diff > s.abs_floor)
                rel = diff / std::max(std::max(std::abs(analytic), std::abs(numeric)), s.abs_floor);
            res.max_rel_err = std::max(res.max_rel_err, rel);
            res.checked++;
        }
    }
    res.pass = res.max_rel_err < s.tol;
    return res;
}

// Scalarizes a tensor-valued op through a fixed random projection so every
// output element influences the loss.
inline Tensor<double> project_to_scalar(const Tensor<double>& out, Tape<double>* tape, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> rv(static_cast<size_t>(out.numel()));
    for (auto& v : rv) v = rng.uniform(0.25, 1.0);
    Tensor<double> r = Tensor<double>::from_data(out.shape(), std::move(rv));
    return sum_all(hadamard(out, r, tape), tape);
}

namespace detail {

inline Tensor<double> rand_input(const Shape& shape, uint64_t seed, bool rg = true, double lo = -1.0,
                                 double hi = 1.0) {
    Rng rng(seed);
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : v) x = rng.uniform(lo, hi);
    Tensor<double> t = Tensor<double>::from_data(shape, std::move(v));
    t.set_requires_grad(rg);
    return t;
}

inline Tensor<double> rand_binary(const Shape& shape, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : v) x = rng.bernoulli(0.5) ? 1.0 : 0.0;
    return Tensor<double>::from_data(shape, std::move(v));
}

// Spread values so finite-difference probes cannot flip a pooling argmax.
inline Tensor<double> rand_separated(const Shape& shape, uint64_t seed) {
    Rng rng(seed);
    const int64_t n = shape_numel(shape);
    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order.begin(), order.end());
    std::vector<double> v(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) v[order[i]] = 0.05 * static_cast<double>(i);
    Tensor<double> t = Tensor<double>::from_data(shape, std::move(v));
    t.set_requires_grad(true);
    return t;
}

}  // namespace detail

// The full registry: one entry per differentiable op plus the two composite
// modules at reduced size. Used by both the test suite and the CLI.
inline std::vector<GradCheckResult> run_all_gradchecks() {
    std::vector<GradCheckResult> all;
    auto run = [&](const std::string& name, std::vector<Tensor<double>> inputs, auto&& fn) {
        all.push_back(gradcheck(name, std::move(inputs), fn));
    };

    run("hadamard", {detail::rand_input({2, 4, 3, 3}, 1), detail::rand_input({4, 1, 1}, 2)},
        [](auto& in, Tape<double>* t) { return project_to_scalar(hadamard(in[0], in[1], t), t, 90); });
    run("add", {detail::rand_input({3, 5}, 3), detail::rand_input({3, 5}, 4)},
        [](auto& in, Tape<double>* t) { return project_to_scalar(add(in[0], in[1], t), t, 91); });
    run("scale", {detail::rand_input({7}, 5)},
        [](auto& in, Tape<double>* t) { return project_to_scalar(scale(in[0], 1.7, t), t, 92); });
    run("sum", {detail::rand_input({2, 3, 2}, 6)},
        [](auto& in, Tape<double>* t) { return sum_all(in[0], t); });
    run("chunk_channels", {detail::rand_input({2, 8, 3, 3}, 7)}, [](auto& in, Tape<double>* t) {
        auto parts = chunk_channels(in[0], 4, t);
        Tensor<double> acc = project_to_scalar(parts[0], t, 93);
        for (int i = 1; i < 4; ++i)
            acc = add(acc, project_to_scalar(parts[static_cast<size_t>(i)], t, 93 + i), t);
        return acc;
    });
    run("concat_channels",
        {detail::rand_input({1, 3, 2, 2}, 8), detail::rand_input({1, 5, 2, 2}, 9)},
        [](auto& in, Tape<double>* t) {
            return project_to_scalar(concat_channels<double>({in[0], in[1]}, t), t, 97);
        });
    run("permute", {detail::rand_input({2, 3, 4, 5}, 10)}, [](auto& in, Tape<double>* t) {
        return project_to_scalar(permute(in[0], {0, 3, 1, 2}, t), t, 98);
    });

    {
        Conv2dSpec sp;
        sp.in_channels = 4;
        sp.out_channels = 4;
        sp.kh = sp.kw = 3;
        sp.ph = sp.pw = 2;
        sp.dh = sp.dw = 2;
        sp.groups = 2;
        run("conv2d",
            {detail::rand_input({2, 4, 5, 5}, 11), detail::rand_input({4, 2, 3, 3}, 12),
             detail::rand_input({4}, 13)},
            [sp](auto& in, Tape<double>* t) {
                return project_to_scalar(conv2d(in[0], in[1], std::optional(in[2]), sp, t), t, 99);
            });
    }
    {
        Conv1dSpec sp;
        sp.in_channels = 4;
        sp.out_channels = 4;
        sp.k = 3;
        sp.pad = 1;
        sp.groups = 4;
        run("conv1d",
            {detail::rand_input({2, 4, 6}, 14), detail::rand_input({4, 1, 3}, 15),
             detail::rand_input({4}, 16)},
            [sp](auto& in, Tape<double>* t) {
                return project_to_scalar(conv1d(in[0], in[1], std::optional(in[2]), sp, t), t, 100);
            });
    }
    run("bilinear_resize", {detail::rand_input({1, 3, 4, 5}, 17)}, [](auto& in, Tape<double>* t) {
        return project_to_scalar(bilinear_resize(in[0], ResizeSpec{7, 3, true}, t), t, 101);
    });
    run("linear_resize1d", {detail::rand_input({1, 3, 5}, 18)}, [](auto& in, Tape<double>* t) {
        return project_to_scalar(linear_resize1d(in[0], 9, t), t, 102);
    });
    run("maxpool2d", {detail::rand_separated({1, 2, 6, 6}, 19)}, [](auto& in, Tape<double>* t) {
        return project_to_scalar(maxpool2d(in[0], t), t, 103);
    });
    run("gelu", {detail::rand_input({3, 7}, 20, true, -2.0, 2.0)},
        [](auto& in, Tape<double>* t) { return project_to_scalar(gelu(in[0], t), t, 104); });
    run("sigmoid", {detail::rand_input({3, 7}, 21, true, -3.0, 3.0)},
        [](auto& in, Tape<double>* t) { return project_to_scalar(sigmoid(in[0], t), t, 105); });
    run("channel_norm",
        {detail::rand_input({2, 6, 3, 3}, 22), detail::rand_input({6}, 23, true, 0.5, 1.5),
         detail::rand_input({6}, 24)},
        [](auto& in, Tape<double>* t) {
            return project_to_scalar(channel_norm(in[0], in[1], in[2], t), t, 106);
        });
    {
        Tensor<double> target = detail::rand_binary({2, 1, 4, 4}, 25);
        run("bce_loss", {detail::rand_input({2, 1, 4, 4}, 26, true, -2.0, 2.0)},
            [target](auto& in, Tape<double>* t) { return bce_loss(in[0], target, t); });
        run("dice_loss", {detail::rand_input({2, 1, 4, 4}, 27, true, -2.0, 2.0)},
            [target](auto& in, Tape<double>* t) { return dice_loss(in[0], target, t); });
    }

    // composite modules at reduced size
    {
        GhpaConfig gcfg;
        gcfg.dim_in = 8;
        gcfg.dim_out = 8;
        ParamStore<double> store;
        Rng rng(31);
        Ghpa<double> mod = Ghpa<double>::make(store, "ghpa", gcfg, rng);
        std::vector<Tensor<double>> inputs;
        // a wider input range keeps the channel variance away from zero,
        // where the finite-difference truncation error of the norm blows up
        inputs.push_back(detail::rand_input({1, 8, 8, 8}, 32, true, -2.0, 2.0));
        for (const auto& p : store.all()) inputs.push_back(p->value);
        run("ghpa", std::move(inputs), [mod](auto& in, Tape<double>* t) {
            return project_to_scalar(mod.forward(in[0], t), t, 107);
        });
    }
    {
        GabConfig gcfg;
        gcfg.c_low = 8;
        gcfg.c_high = 16;
        ParamStore<double> store;
        Rng rng(33);
        Gab<double> mod = Gab<double>::make(store, "gab", gcfg, rng);
        std::vector<Tensor<double>> inputs;
        inputs.push_back(detail::rand_input({1, 8, 8, 8}, 34));
        inputs.push_back(detail::rand_input({1, 16, 4, 4}, 35));
        inputs.push_back(detail::rand_input({1, 1, 4, 4}, 36, true, 0.05, 0.95));
        for (const auto& p : store.all()) inputs.push_back(p->value);
        run("gab", std::move(inputs), [mod](auto& in, Tape<double>* t) {
            return project_to_scalar(mod.forward(in[0], in[1], in[2], t), t, 108);
        });
    }
    return all;
}

}  // namespace ege
