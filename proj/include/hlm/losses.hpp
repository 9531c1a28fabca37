#pragma once

#include <cmath>
#include <vector>

#include "hlm/batch.hpp"
#include "hlm/model.hpp"
#include "hlm/ops.hpp"

namespace hlm {

template <class T>
struct LossOutput {
    Tensor<T> loss;             // scalar, on the tape
    std::size_t n_supervised = 0;
    double aux_accuracy = 0.0;  // in-batch (CWT) or full-vocab (CE) top-1 rate
};

namespace loss_detail {

template <class T>
double fraction_argmax_at(const Tensor<T>& scores, const std::vector<int>& cols) {
    const std::size_t R = scores->rows(), C = scores->cols();
    std::size_t hits = 0;
    for (std::size_t r = 0; r < R; ++r) {
        const T* row = scores->data() + r * C;
        std::size_t argmax = 0;
        for (std::size_t c = 1; c < C; ++c)
            if (row[c] > row[argmax]) argmax = c;
        hits += argmax == static_cast<std::size_t>(cols[r]);
    }
    return static_cast<double>(hits) / static_cast<double>(R);
}

}  // namespace loss_detail

// Mean NLL of the targets over already-gathered logit rows [K x V]. This is
// the fast path used in training, where logits are only ever materialized at
// the supervised positions.
template <class T>
LossOutput<T> ce_loss_rows(Tape<T>& tape, const Tensor<T>& logit_rows,
                           const std::vector<int>& targets) {
    if (targets.empty()) throw ContractError("no supervised positions");
    if (logit_rows->rows() != targets.size())
        throw ShapeError("one logit row per target required");
    const std::size_t K = targets.size();
    auto ls = log_softmax(tape, logit_rows);
    const std::vector<T> w(K, T(1) / static_cast<T>(K));
    LossOutput<T> out;
    out.loss = neg_weighted_take(tape, ls, targets, w);
    out.n_supervised = K;
    out.aux_accuracy = loss_detail::fraction_argmax_at(ls, targets);
    if (!std::isfinite(static_cast<double>(out.loss->at(0))))
        throw NumericError("cross-entropy loss is not finite");
    return out;
}

// Classical weight-tied cross-entropy over full logits [(N*L) x V] at the
// batch's supervised positions.
template <class T>
LossOutput<T> ce_weight_tying_loss(Tape<T>& tape, const Tensor<T>& logits, const Batch& batch) {
    if (batch.S.empty()) throw ContractError("no supervised positions");
    if (logits->rows() != batch.N * batch.L)
        throw ShapeError("logits rows must cover all N*L positions");
    auto rows = take_rows(tape, logits, batch.flat_positions());
    return ce_loss_rows(tape, rows, batch.targets);
}

// Contrastive Weight Tying over gathered output rows [K x D] and target
// embedding rows [K x D]: InfoNCE over the K x K in-batch score matrix of raw
// dot products (no temperature, no normalization), diagonal as the positive.
// Never materializes a V-wide activation.
template <class T>
LossOutput<T> cwt_loss_rows(Tape<T>& tape, const Tensor<T>& o_rows, const Tensor<T>& t_rows) {
    if (o_rows->rows() == 0) throw ContractError("no supervised positions");
    if (o_rows->shape() != t_rows->shape())
        throw ShapeError("output and target rows must both be K x D");
    const std::size_t K = o_rows->rows();
    auto scores = matmul_nt(tape, o_rows, t_rows);
    auto ls = log_softmax(tape, scores);
    std::vector<int> diag(K);
    for (std::size_t i = 0; i < K; ++i) diag[i] = static_cast<int>(i);
    const std::vector<T> w(K, T(1) / static_cast<T>(K));
    LossOutput<T> out;
    out.loss = neg_weighted_take(tape, ls, diag, w);
    out.n_supervised = K;
    out.aux_accuracy = loss_detail::fraction_argmax_at(ls, diag);
    if (!std::isfinite(static_cast<double>(out.loss->at(0))))
        throw NumericError("contrastive loss is not finite");
    return out;
}

template <class T>
LossOutput<T> cwt_loss(Tape<T>& tape, const Tensor<T>& O, const Tensor<T>& e_theta,
                       const Batch& batch) {
    if (batch.S.empty()) throw ContractError("no supervised positions");
    auto o_rows = take_rows(tape, O, batch.flat_positions());
    auto t_rows = take_rows(tape, e_theta, batch.targets);
    return cwt_loss_rows(tape, o_rows, t_rows);
}

// Literal form of the contrastive objective as displayed without the log:
// -(1/K) sum_a softmax(M[a])[a]. Evaluation only; not used for training.
template <class T>
double cwt_literal_value(const Tensor<T>& O, const Tensor<T>& e_theta, const Batch& batch) {
    if (batch.S.empty()) throw ContractError("no supervised positions");
    Tape<T> tape;
    auto o_rows = take_rows(tape, O, batch.flat_positions());
    auto t_rows = take_rows(tape, e_theta, batch.targets);
    auto ls = log_softmax(tape, matmul_nt(tape, o_rows, t_rows));
    const std::size_t K = batch.S.size();
    double acc = 0;
    for (std::size_t a = 0; a < K; ++a)
        acc -= std::exp(static_cast<double>(ls->at2(a, a)));
    return acc / static_cast<double>(K);
}

// Balanced cross-entropy for classification fine-tuning: per-class loss sums
// reweighted by inverse in-batch class frequency. The magnitude is
// batch-size dependent (sum form); classes absent from the batch contribute
// zero.
template <class T>
LossOutput<T> balanced_ce_loss(Tape<T>& tape, const Tensor<T>& logits,
                               const std::vector<int>& labels) {
    if (labels.empty()) throw ContractError("balanced_ce_loss needs at least one sample");
    const std::size_t n = logits->rows();
    const std::size_t C = logits->cols();
    if (labels.size() != n) throw ShapeError("one label per logit row required");
    std::vector<std::size_t> count(C, 0);
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= C)
            throw IndexError("label " + std::to_string(y) + " out of range [0, " +
                             std::to_string(C) + ")");
        ++count[static_cast<std::size_t>(y)];
    }
    // weight per sample: 1 / w_c = n / count_c
    std::vector<T> w(n);
    for (std::size_t i = 0; i < n; ++i)
        w[i] = static_cast<T>(n) / static_cast<T>(count[static_cast<std::size_t>(labels[i])]);
    auto ls = log_softmax(tape, logits);
    LossOutput<T> out;
    out.loss = neg_weighted_take(tape, ls, labels, w);
    out.n_supervised = n;
    out.aux_accuracy = loss_detail::fraction_argmax_at(ls, labels);
    return out;
}

}  // namespace hlm
