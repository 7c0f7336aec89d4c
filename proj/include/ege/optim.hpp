#pragma once

// AdamW with decoupled weight decay, plus the cosine-annealing learning-rate
// schedule (eta clamps at eta_min beyond t_max; no restarts).

#include "ege/layers.hpp"

namespace ege {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-2;
};

template <typename T>
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

    int64_t step_count() const { return step_; }
    const AdamWConfig& config() const { return cfg_; }

    // Applies one update from the gradients currently stored on the params.
    // Decay first (param -= lr*wd*param), then the bias-corrected Adam step.
    void step(ParamStore<T>& params, double lr) {
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (auto& p : params.all()) {
            auto val = p->value.data_mut();
            auto g = p->value.grad();
            if (p->m.empty()) {
                p->m.assign(val.size(), T(0));
                p->v.assign(val.size(), T(0));
            }
            if (p->m.size() != val.size())
                throw ShapeError("adamw: state size mismatch for " + p->name);
            for (size_t i = 0; i < val.size(); ++i) {
                double w = static_cast<double>(val[i]);
                const double gi = static_cast<double>(g[i]);
                w -= lr * cfg_.weight_decay * w;
                double m = cfg_.beta1 * static_cast<double>(p->m[i]) + (1.0 - cfg_.beta1) * gi;
                double v = cfg_.beta2 * static_cast<double>(p->v[i]) + (1.0 - cfg_.beta2) * gi * gi;
                p->m[i] = static_cast<T>(m);
                p->v[i] = static_cast<T>(v);
                w -= lr * (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps);
                val[i] = static_cast<T>(w);
            }
        }
    }

private:
    AdamWConfig cfg_;
    int64_t step_ = 0;
};

struct CosineSchedule {
    double eta_max = 1e-3;
    double eta_min = 1e-5;
    int t_max = 50;

    // Blend form so both endpoints are exact: eta_max at t=0, eta_min at
    // t >= t_max.
    double lr_at(int epoch) const {
        if (epoch < 0) throw ValueError("schedule: epoch must be >= 0");
        const int t = std::min(epoch, t_max);
        const double w = 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(t) / t_max));
        return eta_max * w + eta_min * (1.0 - w);
    }
};

}  // namespace ege
