#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "hlm/errors.hpp"
#include "hlm/tensor.hpp"

namespace hlm {

struct AdamWParams {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.01;
    double clip_norm = 1.0;  // <= 0 disables clipping
};

enum class ScheduleKind { Triangular, Cosine, Constant };

inline ScheduleKind schedule_from_string(const std::string& s) {
    if (s == "triangular") return ScheduleKind::Triangular;
    if (s == "cosine") return ScheduleKind::Cosine;
    if (s == "constant") return ScheduleKind::Constant;
    throw ConfigError("unknown schedule '" + s + "' (triangular|cosine|constant)");
}

struct Schedule {
    ScheduleKind kind = ScheduleKind::Triangular;
    double peak = 1e-4;
    long long warmup_steps = 0;
    long long total_steps = 1;
};

// Linear warmup 0 -> peak, then decay per schedule kind down to 0 at
// total_steps (constant stays at peak).
inline double lr_at(const Schedule& s, long long step) {
    if (step < 0 || step > s.total_steps) throw ContractError("lr_at step out of range");
    if (s.warmup_steps > 0 && step < s.warmup_steps)
        return s.peak * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
    if (s.kind == ScheduleKind::Constant) return s.peak;
    const double denom = static_cast<double>(s.total_steps - s.warmup_steps);
    const double progress = denom > 0 ? static_cast<double>(step - s.warmup_steps) / denom : 1.0;
    if (s.kind == ScheduleKind::Triangular) return s.peak * (1.0 - progress);
    return s.peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// Per-parameter-tensor moment buffers; step counter advances once per
// successful adamw_step call.
template <class T>
struct OptimizerState {
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
    long long step = 0;

    static OptimizerState for_params(const std::vector<Tensor<T>>& params) {
        OptimizerState st;
        st.m.reserve(params.size());
        st.v.reserve(params.size());
        for (const auto& p : params) {
            st.m.emplace_back(p->numel(), T(0));
            st.v.emplace_back(p->numel(), T(0));
        }
        return st;
    }
};

// AdamW with bias correction and decoupled weight decay; global grad-norm
// clipping applied first. Non-finite gradients abort the step (counter not
// advanced, parameters untouched).
template <class T>
void adamw_step(const std::vector<Tensor<T>>& params, OptimizerState<T>& state,
                const AdamWParams& hp, double lr) {
    if (params.size() != state.m.size())
        throw ContractError("optimizer state does not match parameter list");
    if (lr < 0) throw ContractError("negative learning rate");

    double sq_norm = 0;
    for (const auto& p : params) {
        const T* g = p->grad_data();
        for (std::size_t i = 0; i < p->numel(); ++i) {
            const double gi = static_cast<double>(g[i]);
            if (!std::isfinite(gi)) throw NumericError("non-finite gradient; step aborted");
            sq_norm += gi * gi;
        }
    }
    if (hp.clip_norm > 0) {
        const double norm = std::sqrt(sq_norm);
        if (norm > hp.clip_norm) {
            const T s = static_cast<T>(hp.clip_norm / norm);
            for (const auto& p : params) {
                T* g = p->grad_data();
                for (std::size_t i = 0; i < p->numel(); ++i) g[i] *= s;
            }
        }
    }

    state.step += 1;
    const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.step));

    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = *params[pi];
        T* w = p.data();
        const T* g = p.grad_data();
        auto& m = state.m[pi];
        auto& v = state.v[pi];
        for (std::size_t i = 0; i < p.numel(); ++i) {
            const double gi = static_cast<double>(g[i]);
            const double mi = hp.beta1 * static_cast<double>(m[i]) + (1.0 - hp.beta1) * gi;
            const double vi = hp.beta2 * static_cast<double>(v[i]) + (1.0 - hp.beta2) * gi * gi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double update = (mi / bc1) / (std::sqrt(vi / bc2) + hp.eps);
            // decoupled decay, applied separately from the moment update
            double wi = static_cast<double>(w[i]);
            wi -= lr * hp.weight_decay * wi;
            wi -= lr * update;
            w[i] = static_cast<T>(wi);
        }
    }
}

// Post-clip global gradient norm, for the clipping invariant test.
template <class T>
double global_grad_norm(const std::vector<Tensor<T>>& params) {
    double sq = 0;
    for (const auto& p : params) {
        const T* g = p->grad_data();
        for (std::size_t i = 0; i < p->numel(); ++i)
            sq += static_cast<double>(g[i]) * static_cast<double>(g[i]);
    }
    return std::sqrt(sq);
}

}  // namespace hlm
