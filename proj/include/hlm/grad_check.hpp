#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "hlm/ops.hpp"
#include "hlm/tensor.hpp"

namespace hlm {

// Central-difference gradient verification. `forward` must rebuild the scalar
// loss from the current parameter values on the given tape, deterministically.
// Returns max over all parameter coordinates of
//   |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
inline double grad_check(const std::function<Tensor<double>(Tape<double>&)>& forward,
                         const std::vector<Tensor<double>>& params, double h = 1e-5) {
    if (h <= 0) throw ContractError("grad_check step must be positive");

    Tape<double> tape;
    auto root = forward(tape);
    tape.backward(root);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) analytic.push_back(p->grad());

    auto eval = [&]() {
        Tape<double> t;
        double v = forward(t)->at(0);
        if (!std::isfinite(v)) throw NumericError("grad_check objective returned non-finite value");
        return v;
    };

    double max_rel = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = *params[pi];
        for (std::size_t i = 0; i < p.numel(); ++i) {
            const double orig = p.at(i);
            p.at(i) = orig + h;
            const double fp = eval();
            p.at(i) = orig - h;
            const double fm = eval();
            p.at(i) = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[pi][i];
            const double rel = std::abs(a - numeric) /
                               std::max(1e-8, std::abs(a) + std::abs(numeric));
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace hlm
