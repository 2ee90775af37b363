#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "topoland/network.hpp"

namespace topoland {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-2;  // applied only to entries flagged for decay
};

// Decoupled-weight-decay adaptive update. Decay multiplies the parameter by
// (1 - lr*wd) before the moment update; sigma parameters, biases and norm
// scales are excluded via their ParamEntry flag.
class AdamW {
public:
    explicit AdamW(const ParamStore& params, AdamWConfig cfg = {}) : cfg_(cfg) {
        state_.resize(params.entries().size());
        for (std::size_t i = 0; i < state_.size(); ++i) {
            const std::size_t n = params.entries()[i].tensor.numel();
            state_[i].m.assign(n, 0.0);
            state_[i].v.assign(n, 0.0);
        }
    }

    void step(ParamStore& params, double lr) {
        ++step_count_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
        auto& entries = params.entries();
        if (entries.size() != state_.size())
            throw ConfigError("optimizer state does not match parameter store");
        for (std::size_t e = 0; e < entries.size(); ++e) {
            auto& entry = entries[e];
            auto& st = state_[e];
            const double lr_eff = lr * entry.lr_scale;
            const auto& grad = entry.tensor.grad();
            auto& value = entry.tensor.data();
            const double decay_mult = entry.decay ? 1.0 - lr_eff * cfg_.weight_decay : 1.0;
            for (std::size_t i = 0; i < value.size(); ++i) {
                const double g = grad[i];
                if (!std::isfinite(g))
                    throw NumericError("non-finite gradient in parameter '" + entry.name + "'");
                value[i] *= decay_mult;
                st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * g;
                st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * g * g;
                const double mhat = st.m[i] / bc1;
                const double vhat = st.v[i] / bc2;
                value[i] -= lr_eff * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

    std::uint64_t steps() const { return step_count_; }

private:
    struct MomentState {
        std::vector<double> m, v;
    };
    AdamWConfig cfg_;
    std::vector<MomentState> state_;
    std::uint64_t step_count_ = 0;
};

// Triangular wave between lr_base and lr_max; half_cycle iterations per ramp.
inline double cyclic_lr(std::uint64_t iter, double lr_base, double lr_max,
                        std::uint64_t half_cycle) {
    if (half_cycle == 0) return lr_base;
    const std::uint64_t phase = iter % (2 * half_cycle);
    const double t = phase <= half_cycle
                         ? static_cast<double>(phase) / static_cast<double>(half_cycle)
                         : 2.0 - static_cast<double>(phase) / static_cast<double>(half_cycle);
    return lr_base + (lr_max - lr_base) * t;
}

// Erasure probability ramps linearly from 0 to p_final over the run.
inline double erasure_schedule(std::uint64_t iter, std::uint64_t total_iters, double p_final) {
    if (total_iters == 0) return 0.0;
    return p_final * static_cast<double>(iter) / static_cast<double>(total_iters);
}

}  // namespace topoland
