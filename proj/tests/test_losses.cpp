#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hlm/grad_check.hpp"
#include "hlm/losses.hpp"
#include "hlm/rng.hpp"

using namespace hlm;

namespace {

Tensor<double> randn(Shape shape, std::uint64_t seed, bool rg = false) {
    auto t = make_tensor<double>(std::move(shape), rg);
    RngStream rng(seed, "loss_test");
    for (std::size_t i = 0; i < t->numel(); ++i) t->at(i) = rng.normal(i);
    return t;
}

Batch single_seq_batch(std::size_t K, int vocab, std::uint64_t seed) {
    Batch b;
    b.N = 1;
    b.L = K;
    RngStream rng(seed, "batch");
    for (std::size_t j = 0; j < K; ++j) {
        int tok = 4 + static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab - 4), j));
        b.X.push_back(tok);
        b.S.emplace_back(0, static_cast<int>(j));
        b.targets.push_back(tok);
    }
    b.X_tilde = b.X;
    return b;
}

// Brute-force oracle: per-position softmax in double, direct -log p(target).
double ce_oracle(const Tensor<double>& logits, const std::vector<int>& rows,
                 const std::vector<int>& targets) {
    const std::size_t V = logits->cols();
    double acc = 0;
    for (std::size_t a = 0; a < rows.size(); ++a) {
        const double* x = logits->data() + static_cast<std::size_t>(rows[a]) * V;
        double z = 0;
        for (std::size_t v = 0; v < V; ++v) z += std::exp(x[v]);
        acc -= std::log(std::exp(x[static_cast<std::size_t>(targets[a])]) / z);
    }
    return acc / static_cast<double>(rows.size());
}

// Brute-force oracle: explicit double loop building the K x K score matrix,
// then row-wise -log softmax at the diagonal, averaged.
double cwt_oracle(const Tensor<double>& o_rows, const Tensor<double>& t_rows) {
    const std::size_t K = o_rows->rows(), D = o_rows->cols();
    std::vector<double> M(K * K, 0.0);
    for (std::size_t a = 0; a < K; ++a)
        for (std::size_t b = 0; b < K; ++b)
            for (std::size_t d = 0; d < D; ++d) M[a * K + b] += o_rows->at2(a, d) * t_rows->at2(b, d);
    double acc = 0;
    for (std::size_t a = 0; a < K; ++a) {
        double z = 0;
        for (std::size_t b = 0; b < K; ++b) z += std::exp(M[a * K + b]);
        acc -= std::log(std::exp(M[a * K + a]) / z);
    }
    return acc / static_cast<double>(K);
}

}  // namespace

TEST_CASE("ce loss at uniform logits equals ln V", "[losses]") {
    const int V = 11;
    auto batch = single_seq_batch(5, V, 1);
    auto logits = make_tensor<double>({5, static_cast<std::size_t>(V)});
    Tape<double> tape;
    auto out = ce_weight_tying_loss(tape, logits, batch);
    CHECK(std::abs(out.loss->at(0) - std::log(static_cast<double>(V))) < 1e-9);
    CHECK(out.n_supervised == 5);
}

TEST_CASE("ce loss saturates to zero for confident correct logits", "[losses]") {
    auto batch = single_seq_batch(3, 20, 2);
    auto logits = make_tensor<double>({3, 20});
    for (std::size_t a = 0; a < 3; ++a)
        logits->at2(a, static_cast<std::size_t>(batch.targets[a])) = 30.0;
    Tape<double> tape;
    auto out = ce_weight_tying_loss(tape, logits, batch);
    CHECK(out.loss->at(0) < 1e-9);
    CHECK(out.aux_accuracy == 1.0);
}

TEST_CASE("ce loss matches per-position softmax oracle", "[losses]") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Batch b;
        b.N = 2;
        b.L = 5;
        RngStream rng(seed, "ce_rand");
        b.X.assign(10, 4);
        b.X_tilde = b.X;
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 5; ++j)
                if (rng.uniform(static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(j)) < 0.6) {
                    b.S.emplace_back(i, j);
                    b.targets.push_back(static_cast<int>(rng.below(11, 100 + static_cast<std::uint64_t>(i * 5 + j))));
                }
        if (b.S.empty()) continue;
        auto logits = randn({10, 11}, 500 + seed);
        Tape<double> tape;
        auto out = ce_weight_tying_loss(tape, logits, b);
        CHECK(std::abs(out.loss->at(0) - ce_oracle(logits, b.flat_positions(), b.targets)) <
              1e-10);
    }
}

TEST_CASE("ce loss is invariant to constant logit shifts per position", "[losses]") {
    auto batch = single_seq_batch(6, 15, 3);
    auto logits = randn({6, 15}, 77);
    Tape<double> t1;
    const double base = ce_weight_tying_loss(t1, logits, batch).loss->at(0);
    for (std::size_t a = 0; a < 6; ++a)
        for (std::size_t v = 0; v < 15; ++v) logits->at2(a, v) += 3.25 * (1.0 + static_cast<double>(a));
    Tape<double> t2;
    CHECK(std::abs(ce_weight_tying_loss(t2, logits, batch).loss->at(0) - base) < 1e-10);
}

TEST_CASE("ce loss rejects empty selection", "[losses]") {
    Batch b;
    b.N = 1;
    b.L = 4;
    b.X.assign(4, 4);
    b.X_tilde = b.X;
    auto logits = make_tensor<double>({4, 8});
    Tape<double> tape;
    CHECK_THROWS_AS(ce_weight_tying_loss(tape, logits, b), ContractError);
}

TEST_CASE("cwt loss with identical embeddings equals ln K", "[losses]") {
    const std::size_t K = 9, D = 6;
    auto o = make_tensor<double>({K, D});
    auto t = make_tensor<double>({K, D});
    for (std::size_t i = 0; i < K * D; ++i) {
        o->at(i) = 0.3;
        t->at(i) = -0.7;
    }
    Tape<double> tape;
    auto out = cwt_loss_rows(tape, o, t);
    CHECK(std::abs(out.loss->at(0) - std::log(static_cast<double>(K))) < 1e-9);
}

TEST_CASE("cwt loss with a single candidate is exactly zero", "[losses]") {
    auto o = randn({1, 8}, 5);
    auto t = randn({1, 8}, 6);
    Tape<double> tape;
    auto out = cwt_loss_rows(tape, o, t);
    CHECK(out.loss->at(0) == 0.0);
}

TEST_CASE("cwt loss matches brute-force double-loop oracle", "[losses]") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const std::size_t K = 12, D = 16;
        auto o = randn({K, D}, 1000 + seed);
        auto t = randn({K, D}, 2000 + seed);
        Tape<double> tape;
        auto out = cwt_loss_rows(tape, o, t);
        CHECK(std::abs(out.loss->at(0) - cwt_oracle(o, t)) < 1e-10);
        CHECK(out.loss->at(0) >= 0.0);
    }
}

TEST_CASE("cwt equals cross-entropy on the in-batch score matrix", "[losses]") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const std::size_t K = 8, D = 12;
        auto o = randn({K, D}, 3000 + seed);
        auto t = randn({K, D}, 4000 + seed);
        Tape<double> t1;
        const double cwt = cwt_loss_rows(t1, o, t).loss->at(0);
        // same quantity as CE over the K x K score matrix with diagonal labels
        Tape<double> t2;
        auto scores = matmul_nt(t2, o, t);
        std::vector<int> diag(K);
        std::iota(diag.begin(), diag.end(), 0);
        const double ce = ce_loss_rows(t2, scores, diag).loss->at(0);
        CHECK(std::abs(cwt - ce) < 1e-10);
    }
}

TEST_CASE("cwt loss is invariant to permutations of S", "[losses]") {
    const std::size_t K = 10, D = 8;
    auto o = randn({K, D}, 51);
    auto t = randn({K, D}, 52);
    Tape<double> t1;
    const double base = cwt_loss_rows(t1, o, t).loss->at(0);

    std::vector<std::size_t> perm(K);
    std::iota(perm.begin(), perm.end(), 0);
    std::reverse(perm.begin(), perm.begin() + 7);
    auto op = make_tensor<double>({K, D});
    auto tp = make_tensor<double>({K, D});
    for (std::size_t i = 0; i < K; ++i)
        for (std::size_t d = 0; d < D; ++d) {
            op->at2(i, d) = o->at2(perm[i], d);
            tp->at2(i, d) = t->at2(perm[i], d);
        }
    Tape<double> t2;
    CHECK(std::abs(cwt_loss_rows(t2, op, tp).loss->at(0) - base) < 1e-12);
}

TEST_CASE("cwt gradients pass grad_check on a random micro-batch", "[losses]") {
    const std::size_t K = 12, D = 16;
    auto o = randn({K, D}, 61, true);
    auto e = randn({20, D}, 62, true);
    Batch b;
    b.N = 1;
    b.L = K;
    RngStream rng(63, "targets");
    for (std::size_t j = 0; j < K; ++j) {
        b.X.push_back(0);
        b.S.emplace_back(0, static_cast<int>(j));
        b.targets.push_back(static_cast<int>(rng.below(20, j)));
    }
    b.X_tilde = b.X;
    auto f = [&](Tape<double>& tape) { return cwt_loss(tape, o, e, b).loss; };
    CHECK(grad_check(f, {o, e}, 1e-5) < 1e-4);
}

TEST_CASE("cwt literal (log-free) form at uniform scores", "[losses]") {
    const std::size_t K = 5, D = 4;
    auto O = make_tensor<double>({K, D});
    auto e = make_tensor<double>({8, D});
    Batch b;
    b.N = 1;
    b.L = K;
    for (std::size_t j = 0; j < K; ++j) {
        b.X.push_back(0);
        b.S.emplace_back(0, static_cast<int>(j));
        b.targets.push_back(static_cast<int>(j % 8));
    }
    b.X_tilde = b.X;
    // all scores zero -> each diagonal softmax entry is 1/K, value -1/K
    CHECK(std::abs(cwt_literal_value(O, e, b) + 1.0 / static_cast<double>(K)) < 1e-12);
}

TEST_CASE("balanced ce: closed form and absent classes", "[losses]") {
    SECTION("balanced 2-class batch with uniform logits") {
        const std::size_t n = 8;
        auto logits = make_tensor<double>({n, 2});
        std::vector<int> labels;
        for (std::size_t i = 0; i < n; ++i) labels.push_back(static_cast<int>(i % 2));
        Tape<double> tape;
        auto out = balanced_ce_loss(tape, logits, labels);
        CHECK(std::abs(out.loss->at(0) - 2.0 * static_cast<double>(n) * std::log(2.0)) < 1e-9);
    }
    SECTION("class absent from the batch contributes zero") {
        auto logits = randn({4, 6}, 81);
        std::vector<int> labels = {0, 0, 2, 2};  // classes 1,3,4,5 absent
        Tape<double> t1;
        const double full = balanced_ce_loss(t1, logits, labels).loss->at(0);
        // reweighting oracle: sum over present classes of L_c / w_c
        double ref = 0;
        for (std::size_t a = 0; a < 4; ++a) {
            double z = 0;
            for (std::size_t c = 0; c < 6; ++c) z += std::exp(logits->at2(a, c));
            const double nll = -std::log(std::exp(logits->at2(a, static_cast<std::size_t>(labels[a]))) / z);
            ref += nll * (4.0 / 2.0);
        }
        CHECK(std::abs(full - ref) < 1e-10);
    }
}

TEST_CASE("balanced ce matches reweighting oracle on imbalanced batches", "[losses]") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const std::size_t n = 13, C = 5;
        auto logits = randn({n, C}, 900 + seed);
        RngStream rng(seed, "labels");
        std::vector<int> labels;
        std::vector<std::size_t> count(C, 0);
        for (std::size_t i = 0; i < n; ++i) {
            labels.push_back(static_cast<int>(rng.below(C, i) % 3));  // imbalanced
            ++count[static_cast<std::size_t>(labels.back())];
        }
        double ref = 0;
        for (std::size_t a = 0; a < n; ++a) {
            double z = 0;
            for (std::size_t c = 0; c < C; ++c) z += std::exp(logits->at2(a, c));
            const double nll =
                -std::log(std::exp(logits->at2(a, static_cast<std::size_t>(labels[a]))) / z);
            ref += nll * static_cast<double>(n) /
                   static_cast<double>(count[static_cast<std::size_t>(labels[a])]);
        }
        Tape<double> tape;
        CHECK(std::abs(balanced_ce_loss(tape, logits, labels).loss->at(0) - ref) < 1e-10);
    }
}

TEST_CASE("balanced ce rejects invalid labels", "[losses]") {
    auto logits = make_tensor<double>({2, 3});
    Tape<double> tape;
    CHECK_THROWS_AS(balanced_ce_loss(tape, logits, {0, 5}), IndexError);
    CHECK_THROWS_AS(balanced_ce_loss(tape, logits, {}), ContractError);
}
