#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "hlm/optimizer.hpp"
#include "hlm/rng.hpp"

using namespace hlm;

namespace {

// Independent scalar AdamW reference, written directly from the update rule.
struct ScalarAdamWRef {
    double m = 0, v = 0;
    long long t = 0;
    double step(double w, double g, const AdamWParams& hp, double lr) {
        ++t;
        m = hp.beta1 * m + (1 - hp.beta1) * g;
        v = hp.beta2 * v + (1 - hp.beta2) * g * g;
        const double mhat = m / (1 - std::pow(hp.beta1, static_cast<double>(t)));
        const double vhat = v / (1 - std::pow(hp.beta2, static_cast<double>(t)));
        w -= lr * hp.weight_decay * w;
        w -= lr * mhat / (std::sqrt(vhat) + hp.eps);
        return w;
    }
};

}  // namespace

TEST_CASE("adamw decay-only path with zero grads", "[optimizer]") {
    auto p = make_tensor<double>({3}, true);
    p->at(0) = 1.0;
    p->at(1) = -2.0;
    p->at(2) = 0.5;
    p->zero_grad();
    auto state = OptimizerState<double>::for_params({p});
    AdamWParams hp;
    hp.weight_decay = 0.01;
    hp.clip_norm = 0;
    adamw_step<double>({p}, state, hp, 0.1);
    CHECK(p->at(0) == 1.0 * (1.0 - 0.001));
    CHECK(p->at(1) == -2.0 * (1.0 - 0.001));
    CHECK(state.m[0] == std::vector<double>{0, 0, 0});
    CHECK(state.v[0] == std::vector<double>{0, 0, 0});
}

TEST_CASE("adamw first step approximates -lr * sign(g)", "[optimizer]") {
    auto p = make_tensor<double>({2}, true);
    p->zero_grad();
    p->grad_data()[0] = 0.37;
    p->grad_data()[1] = -5.1;
    auto state = OptimizerState<double>::for_params({p});
    AdamWParams hp;
    hp.weight_decay = 0;
    hp.clip_norm = 0;
    hp.eps = 1e-8;
    adamw_step<double>({p}, state, hp, 0.01);
    CHECK(std::abs(p->at(0) - (-0.01)) < 1e-6);
    CHECK(std::abs(p->at(1) - 0.01) < 1e-6);
    CHECK(state.step == 1);
}

TEST_CASE("adamw matches scalar reference over 100 steps", "[optimizer]") {
    auto p = make_tensor<double>({1}, true);
    p->at(0) = 0.8;
    auto state = OptimizerState<double>::for_params({p});
    AdamWParams hp;
    hp.lr = 3e-3;
    hp.weight_decay = 0.02;
    hp.clip_norm = 0;
    ScalarAdamWRef ref;
    double w_ref = 0.8;
    RngStream rng(5, "opt");
    for (int t = 0; t < 100; ++t) {
        const double g = rng.normal(static_cast<std::uint64_t>(t));
        p->zero_grad();
        p->grad_data()[0] = g;
        const double lr = 3e-3;
        adamw_step<double>({p}, state, hp, lr);
        w_ref = ref.step(w_ref, g, hp, lr);
        REQUIRE(std::abs(p->at(0) - w_ref) < 1e-12);
    }
}

TEST_CASE("gradient clipping bounds the post-clip global norm", "[optimizer]") {
    auto a = make_tensor<double>({4}, true);
    auto b = make_tensor<double>({3}, true);
    a->zero_grad();
    b->zero_grad();
    for (int i = 0; i < 4; ++i) a->grad_data()[i] = 10.0;
    for (int i = 0; i < 3; ++i) b->grad_data()[i] = -7.0;
    auto state = OptimizerState<double>::for_params({a, b});
    AdamWParams hp;
    hp.clip_norm = 1.0;
    adamw_step<double>({a, b}, state, hp, 1e-3);
    CHECK(global_grad_norm<double>({a, b}) <= 1.0 + 1e-6);
}

TEST_CASE("non-finite grads abort the step without advancing", "[optimizer]") {
    auto p = make_tensor<double>({2}, true);
    p->at(0) = 1.5;
    p->zero_grad();
    p->grad_data()[0] = std::numeric_limits<double>::quiet_NaN();
    auto state = OptimizerState<double>::for_params({p});
    AdamWParams hp;
    CHECK_THROWS_AS(adamw_step<double>({p}, state, hp, 1e-3), NumericError);
    CHECK(state.step == 0);
    CHECK(p->at(0) == 1.5);
}

TEST_CASE("lr schedules", "[optimizer]") {
    Schedule s;
    s.peak = 2e-4;
    s.warmup_steps = 100;
    s.total_steps = 1100;

    s.kind = ScheduleKind::Triangular;
    CHECK(lr_at(s, 0) == 0.0);
    CHECK(lr_at(s, 100) == 2e-4);
    CHECK(lr_at(s, 1100) == 0.0);
    CHECK(std::abs(lr_at(s, 50) - 1e-4) < 1e-18);

    s.kind = ScheduleKind::Cosine;
    CHECK(lr_at(s, 100) == 2e-4);
    CHECK(std::abs(lr_at(s, 600) - 1e-4) < 1e-16);  // post-warmup midpoint
    CHECK(std::abs(lr_at(s, 1100)) < 1e-19);

    s.kind = ScheduleKind::Constant;
    CHECK(lr_at(s, 100) == 2e-4);
    CHECK(lr_at(s, 1100) == 2e-4);
    CHECK(std::abs(lr_at(s, 17) - 2e-4 * 0.17) < 1e-18);

    CHECK_THROWS_AS(lr_at(s, -1), ContractError);
    CHECK_THROWS_AS(schedule_from_string("linear"), ConfigError);
}
