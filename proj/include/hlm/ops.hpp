#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "hlm/blas.hpp"
#include "hlm/tensor.hpp"

namespace hlm {

// GELU tanh approximation constants.
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

namespace detail {

template <class T>
void check_2d(const Tensor<T>& t, const char* name) {
    if (t->ndim() != 2) throw ShapeError(std::string(name) + " must be 2-d, got " +
                                         shape_str(t->shape()));
}

template <class T>
bool any_grad(std::initializer_list<Tensor<T>> ts) {
    for (auto& t : ts)
        if (t->requires_grad()) return true;
    return false;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// C = A * B
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& A, const Tensor<T>& B) {
    detail::check_2d(A, "matmul A");
    detail::check_2d(B, "matmul B");
    if (A->cols() != B->rows())
        throw ShapeError("matmul inner dimensions disagree: " + shape_str(A->shape()) + " vs " +
                         shape_str(B->shape()));
    const int m = static_cast<int>(A->rows());
    const int k = static_cast<int>(A->cols());
    const int n = static_cast<int>(B->cols());
    auto C = make_tensor<T>({A->rows(), B->cols()});
    gemm(false, false, m, n, k, T(1), A->data(), k, B->data(), n, T(0), C->data(), n);
    if (detail::any_grad<T>({A, B})) {
        C->set_requires_grad(true);
        tape.record(C, {A, B}, [A, B, C, m, n, k] {
            if (A->requires_grad())
                gemm(false, true, m, k, n, T(1), C->grad_data(), n, B->data(), n, T(1),
                     A->grad_data(), k);
            if (B->requires_grad())
                gemm(true, false, k, n, m, T(1), A->data(), k, C->grad_data(), n, T(1),
                     B->grad_data(), n);
        });
    }
    return C;
}

// C = A * B^T with A [m x k], B [n x k]. This is the projection shape used for
// tied logits (O * e^T) and for the in-batch score matrix.
template <class T>
Tensor<T> matmul_nt(Tape<T>& tape, const Tensor<T>& A, const Tensor<T>& B) {
    detail::check_2d(A, "matmul_nt A");
    detail::check_2d(B, "matmul_nt B");
    if (A->cols() != B->cols())
        throw ShapeError("matmul_nt inner dimensions disagree: " + shape_str(A->shape()) +
                         " vs " + shape_str(B->shape()));
    const int m = static_cast<int>(A->rows());
    const int k = static_cast<int>(A->cols());
    const int n = static_cast<int>(B->rows());
    auto C = make_tensor<T>({A->rows(), B->rows()});
    gemm(false, true, m, n, k, T(1), A->data(), k, B->data(), k, T(0), C->data(), n);
    if (detail::any_grad<T>({A, B})) {
        C->set_requires_grad(true);
        tape.record(C, {A, B}, [A, B, C, m, n, k] {
            if (A->requires_grad())
                gemm(false, false, m, k, n, T(1), C->grad_data(), n, B->data(), k, T(1),
                     A->grad_data(), k);
            if (B->requires_grad())
                gemm(true, false, n, k, m, T(1), C->grad_data(), n, A->data(), k, T(1),
                     B->grad_data(), k);
        });
    }
    return C;
}

// ---------------------------------------------------------------------------
// Elementwise / broadcast
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& A, const Tensor<T>& B) {
    if (A->shape() != B->shape())
        throw ShapeError("add shapes differ: " + shape_str(A->shape()) + " vs " +
                         shape_str(B->shape()));
    auto C = make_tensor<T>(A->shape());
    for (std::size_t i = 0; i < C->numel(); ++i) C->at(i) = A->at(i) + B->at(i);
    if (detail::any_grad<T>({A, B})) {
        C->set_requires_grad(true);
        tape.record(C, {A, B}, [A, B, C] {
            const T* g = C->grad_data();
            if (A->requires_grad()) {
                T* ga = A->grad_data();
                for (std::size_t i = 0; i < C->numel(); ++i) ga[i] += g[i];
            }
            if (B->requires_grad()) {
                T* gb = B->grad_data();
                for (std::size_t i = 0; i < C->numel(); ++i) gb[i] += g[i];
            }
        });
    }
    return C;
}

// Row-wise bias add: X [R x D] + b [D].
template <class T>
Tensor<T> add_bias(Tape<T>& tape, const Tensor<T>& X, const Tensor<T>& b) {
    detail::check_2d(X, "add_bias X");
    if (b->ndim() != 1 || b->dim(0) != X->cols())
        throw ShapeError("add_bias bias " + shape_str(b->shape()) + " does not match " +
                         shape_str(X->shape()));
    const std::size_t R = X->rows(), D = X->cols();
    auto Y = make_tensor<T>(X->shape());
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t d = 0; d < D; ++d) Y->at(r * D + d) = X->at(r * D + d) + b->at(d);
    if (detail::any_grad<T>({X, b})) {
        Y->set_requires_grad(true);
        tape.record(Y, {X, b}, [X, b, Y, R, D] {
            const T* g = Y->grad_data();
            if (X->requires_grad()) {
                T* gx = X->grad_data();
                for (std::size_t i = 0; i < R * D; ++i) gx[i] += g[i];
            }
            if (b->requires_grad()) {
                T* gb = b->grad_data();
                for (std::size_t r = 0; r < R; ++r)
                    for (std::size_t d = 0; d < D; ++d) gb[d] += g[r * D + d];
            }
        });
    }
    return Y;
}

template <class T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& A, T s) {
    auto C = make_tensor<T>(A->shape());
    for (std::size_t i = 0; i < C->numel(); ++i) C->at(i) = s * A->at(i);
    if (A->requires_grad()) {
        C->set_requires_grad(true);
        tape.record(C, {A}, [A, C, s] {
            const T* g = C->grad_data();
            T* ga = A->grad_data();
            for (std::size_t i = 0; i < C->numel(); ++i) ga[i] += s * g[i];
        });
    }
    return C;
}

template <class T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& A, const Tensor<T>& B) {
    if (A->shape() != B->shape())
        throw ShapeError("mul shapes differ: " + shape_str(A->shape()) + " vs " +
                         shape_str(B->shape()));
    auto C = make_tensor<T>(A->shape());
    for (std::size_t i = 0; i < C->numel(); ++i) C->at(i) = A->at(i) * B->at(i);
    if (detail::any_grad<T>({A, B})) {
        C->set_requires_grad(true);
        tape.record(C, {A, B}, [A, B, C] {
            const T* g = C->grad_data();
            if (A->requires_grad()) {
                T* ga = A->grad_data();
                for (std::size_t i = 0; i < C->numel(); ++i) ga[i] += g[i] * B->at(i);
            }
            if (B->requires_grad()) {
                T* gb = B->grad_data();
                for (std::size_t i = 0; i < C->numel(); ++i) gb[i] += g[i] * A->at(i);
            }
        });
    }
    return C;
}

template <class T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& A) {
    auto C = make_tensor<T>({1});
    T acc = 0;
    for (std::size_t i = 0; i < A->numel(); ++i) acc += A->at(i);
    C->at(0) = acc;
    if (A->requires_grad()) {
        C->set_requires_grad(true);
        tape.record(C, {A}, [A, C] {
            const T g = C->grad_data()[0];
            T* ga = A->grad_data();
            for (std::size_t i = 0; i < A->numel(); ++i) ga[i] += g;
        });
    }
    return C;
}

// ---------------------------------------------------------------------------
// Row gather. embedding_lookup is the same op with an id-range contract on V.
// Backward accumulates upstream gradients into the source rows (summing over
// repeated indices).
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> take_rows(Tape<T>& tape, const Tensor<T>& X, const std::vector<int>& ids) {
    detail::check_2d(X, "take_rows X");
    const std::size_t R = X->rows(), D = X->cols();
    for (int id : ids)
        if (id < 0 || static_cast<std::size_t>(id) >= R)
            throw IndexError("row id " + std::to_string(id) + " out of range [0, " +
                             std::to_string(R) + ")");
    auto Y = make_tensor<T>({ids.size(), D});
    for (std::size_t t = 0; t < ids.size(); ++t)
        std::copy_n(X->data() + static_cast<std::size_t>(ids[t]) * D, D, Y->data() + t * D);
    if (X->requires_grad()) {
        Y->set_requires_grad(true);
        tape.record(Y, {X}, [X, Y, ids, D] {
            const T* g = Y->grad_data();
            T* gx = X->grad_data();
            for (std::size_t t = 0; t < ids.size(); ++t) {
                T* row = gx + static_cast<std::size_t>(ids[t]) * D;
                const T* grow = g + t * D;
                for (std::size_t d = 0; d < D; ++d) row[d] += grow[d];
            }
        });
    }
    return Y;
}

template <class T>
Tensor<T> embedding_lookup(Tape<T>& tape, const Tensor<T>& E, const std::vector<int>& ids) {
    return take_rows(tape, E, ids);
}

// ---------------------------------------------------------------------------
// layer_norm: per-row zero mean / unit variance (with eps), then gamma/beta.
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> layer_norm(Tape<T>& tape, const Tensor<T>& X, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps) {
    detail::check_2d(X, "layer_norm X");
    const std::size_t R = X->rows(), D = X->cols();
    if (gamma->numel() != D || beta->numel() != D)
        throw ShapeError("layer_norm gamma/beta must have length " + std::to_string(D));
    if (eps <= T(0)) throw ContractError("layer_norm eps must be positive");

    auto Y = make_tensor<T>(X->shape());
    auto xhat = make_tensor<T>(X->shape());  // saved for backward
    auto inv = make_tensor<T>(Shape{R});
    for (std::size_t r = 0; r < R; ++r) {
        const T* x = X->data() + r * D;
        T mean = 0;
        for (std::size_t d = 0; d < D; ++d) mean += x[d];
        mean /= static_cast<T>(D);
        T var = 0;
        for (std::size_t d = 0; d < D; ++d) var += (x[d] - mean) * (x[d] - mean);
        var /= static_cast<T>(D);
        const T rstd = T(1) / std::sqrt(var + eps);
        inv->at(r) = rstd;
        for (std::size_t d = 0; d < D; ++d) {
            const T xh = (x[d] - mean) * rstd;
            xhat->at(r * D + d) = xh;
            Y->at(r * D + d) = gamma->at(d) * xh + beta->at(d);
        }
    }
    if (detail::any_grad<T>({X, gamma, beta})) {
        Y->set_requires_grad(true);
        tape.record(Y, {X, gamma, beta}, [X, gamma, beta, Y, xhat, inv, R, D] {
            const T* g = Y->grad_data();
            for (std::size_t r = 0; r < R; ++r) {
                const T* grow = g + r * D;
                const T* xh = xhat->data() + r * D;
                if (gamma->requires_grad()) {
                    T* gg = gamma->grad_data();
                    for (std::size_t d = 0; d < D; ++d) gg[d] += grow[d] * xh[d];
                }
                if (beta->requires_grad()) {
                    T* gb = beta->grad_data();
                    for (std::size_t d = 0; d < D; ++d) gb[d] += grow[d];
                }
                if (X->requires_grad()) {
                    T m1 = 0, m2 = 0;  // mean(dxhat), mean(dxhat * xhat)
                    for (std::size_t d = 0; d < D; ++d) {
                        const T dxh = grow[d] * gamma->at(d);
                        m1 += dxh;
                        m2 += dxh * xh[d];
                    }
                    m1 /= static_cast<T>(D);
                    m2 /= static_cast<T>(D);
                    T* gx = X->grad_data() + r * D;
                    const T rstd = inv->at(r);
                    for (std::size_t d = 0; d < D; ++d) {
                        const T dxh = grow[d] * gamma->at(d);
                        gx[d] += rstd * (dxh - m1 - xh[d] * m2);
                    }
                }
            }
        });
    }
    return Y;
}

// ---------------------------------------------------------------------------
// GELU, tanh approximation: 0.5 x (1 + tanh(c (x + a x^3))).
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> gelu(Tape<T>& tape, const Tensor<T>& X) {
    auto Y = make_tensor<T>(X->shape());
    for (std::size_t i = 0; i < X->numel(); ++i) {
        const T x = X->at(i);
        const T t = std::tanh(static_cast<T>(kGeluC) * (x + static_cast<T>(kGeluA) * x * x * x));
        Y->at(i) = T(0.5) * x * (T(1) + t);
    }
    if (X->requires_grad()) {
        Y->set_requires_grad(true);
        tape.record(Y, {X}, [X, Y] {
            const T* g = Y->grad_data();
            T* gx = X->grad_data();
            for (std::size_t i = 0; i < X->numel(); ++i) {
                const T x = X->at(i);
                const T u = static_cast<T>(kGeluC) * (x + static_cast<T>(kGeluA) * x * x * x);
                const T t = std::tanh(u);
                const T du = static_cast<T>(kGeluC) *
                             (T(1) + T(3) * static_cast<T>(kGeluA) * x * x);
                const T dy = T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
                gx[i] += g[i] * dy;
            }
        });
    }
    return Y;
}

// ---------------------------------------------------------------------------
// Row-wise log-softmax with max subtraction.
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> log_softmax(Tape<T>& tape, const Tensor<T>& X) {
    detail::check_2d(X, "log_softmax X");
    const std::size_t R = X->rows(), C = X->cols();
    if (C < 1) throw ShapeError("log_softmax needs at least one column");
    auto Y = make_tensor<T>(X->shape());
    for (std::size_t r = 0; r < R; ++r) {
        const T* x = X->data() + r * C;
        T* y = Y->data() + r * C;
        T mx = x[0];
        for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, x[c]);
        T lse = 0;
        for (std::size_t c = 0; c < C; ++c) lse += std::exp(x[c] - mx);
        lse = mx + std::log(lse);
        for (std::size_t c = 0; c < C; ++c) y[c] = x[c] - lse;
    }
    if (X->requires_grad()) {
        Y->set_requires_grad(true);
        tape.record(Y, {X}, [X, Y, R, C] {
            const T* g = Y->grad_data();
            T* gx = X->grad_data();
            for (std::size_t r = 0; r < R; ++r) {
                const T* grow = g + r * C;
                const T* y = Y->data() + r * C;
                T gsum = 0;
                for (std::size_t c = 0; c < C; ++c) gsum += grow[c];
                T* gxr = gx + r * C;
                for (std::size_t c = 0; c < C; ++c)
                    gxr[c] += grow[c] - std::exp(y[c]) * gsum;
            }
        });
    }
    return Y;
}

// ---------------------------------------------------------------------------
// Weighted negative gather over rows of a log-probability matrix:
//   out = sum_r weights[r] * (-LS[r][cols[r]])
// With weights = 1/K and cols = targets this is mean NLL; with cols = diag it
// is the InfoNCE loss over an in-batch score matrix.
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> neg_weighted_take(Tape<T>& tape, const Tensor<T>& LS, const std::vector<int>& cols,
                            const std::vector<T>& weights) {
    detail::check_2d(LS, "neg_weighted_take LS");
    const std::size_t R = LS->rows(), C = LS->cols();
    if (cols.size() != R || weights.size() != R)
        throw ShapeError("neg_weighted_take needs one column index and weight per row");
    for (int c : cols)
        if (c < 0 || static_cast<std::size_t>(c) >= C)
            throw IndexError("column " + std::to_string(c) + " out of range [0, " +
                             std::to_string(C) + ")");
    auto out = make_tensor<T>({1});
    T acc = 0;
    for (std::size_t r = 0; r < R; ++r)
        acc -= weights[r] * LS->at(r * C + static_cast<std::size_t>(cols[r]));
    out->at(0) = acc;
    if (LS->requires_grad()) {
        out->set_requires_grad(true);
        tape.record(out, {LS}, [LS, out, cols, weights, C] {
            const T g = out->grad_data()[0];
            T* gl = LS->grad_data();
            for (std::size_t r = 0; r < cols.size(); ++r)
                gl[r * C + static_cast<std::size_t>(cols[r])] -= g * weights[r];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Multi-head softmax self-attention over already-projected Q, K, V.
// Inputs are [(n_seq * seq_len) x D]; head h lives in columns [h*dh, (h+1)*dh).
// With causal=true position j attends to positions <= j only.
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> attention(Tape<T>& tape, const Tensor<T>& Q, const Tensor<T>& K, const Tensor<T>& V,
                    std::size_t n_heads, std::size_t n_seq, std::size_t seq_len, bool causal) {
    detail::check_2d(Q, "attention Q");
    const std::size_t D = Q->cols();
    if (K->shape() != Q->shape() || V->shape() != Q->shape())
        throw ShapeError("attention Q/K/V shapes must match");
    if (Q->rows() != n_seq * seq_len)
        throw ShapeError("attention rows " + std::to_string(Q->rows()) + " != n_seq*seq_len");
    if (D % n_heads != 0) throw ShapeError("attention D not divisible by n_heads");
    const std::size_t dh = D / n_heads;
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
    const std::size_t L = seq_len;

    auto O = make_tensor<T>(Q->shape());
    // softmax probabilities saved for backward: [n_seq * n_heads, L, L]
    auto probs = make_tensor<T>({n_seq * n_heads, L, L});

    std::vector<T> qh(L * dh), kh(L * dh), vh(L * dh), sc(L * L), oh(L * dh);
    for (std::size_t s = 0; s < n_seq; ++s) {
        for (std::size_t h = 0; h < n_heads; ++h) {
            for (std::size_t j = 0; j < L; ++j) {
                const std::size_t row = (s * L + j) * D + h * dh;
                std::copy_n(Q->data() + row, dh, qh.data() + j * dh);
                std::copy_n(K->data() + row, dh, kh.data() + j * dh);
                std::copy_n(V->data() + row, dh, vh.data() + j * dh);
            }
            gemm(false, true, static_cast<int>(L), static_cast<int>(L), static_cast<int>(dh),
                 inv_sqrt, qh.data(), static_cast<int>(dh), kh.data(), static_cast<int>(dh),
                 T(0), sc.data(), static_cast<int>(L));
            T* P = probs->data() + (s * n_heads + h) * L * L;
            for (std::size_t i = 0; i < L; ++i) {
                const std::size_t lim = causal ? i + 1 : L;
                T* srow = sc.data() + i * L;
                T mx = srow[0];
                for (std::size_t j = 1; j < lim; ++j) mx = std::max(mx, srow[j]);
                T z = 0;
                for (std::size_t j = 0; j < lim; ++j) {
                    srow[j] = std::exp(srow[j] - mx);
                    z += srow[j];
                }
                T* prow = P + i * L;
                for (std::size_t j = 0; j < lim; ++j) prow[j] = srow[j] / z;
                for (std::size_t j = lim; j < L; ++j) prow[j] = T(0);
            }
            gemm(false, false, static_cast<int>(L), static_cast<int>(dh), static_cast<int>(L),
                 T(1), P, static_cast<int>(L), vh.data(), static_cast<int>(dh), T(0), oh.data(),
                 static_cast<int>(dh));
            for (std::size_t j = 0; j < L; ++j)
                std::copy_n(oh.data() + j * dh, dh, O->data() + (s * L + j) * D + h * dh);
        }
    }

    if (detail::any_grad<T>({Q, K, V})) {
        O->set_requires_grad(true);
        tape.record(O, {Q, K, V},
                    [Q, K, V, O, probs, n_heads, n_seq, L, D, dh, inv_sqrt] {
            std::vector<T> qh(L * dh), kh(L * dh), vh(L * dh), goh(L * dh);
            std::vector<T> dP(L * L), dS(L * L), dqh(L * dh), dkh(L * dh), dvh(L * dh);
            for (std::size_t s = 0; s < n_seq; ++s) {
                for (std::size_t h = 0; h < n_heads; ++h) {
                    for (std::size_t j = 0; j < L; ++j) {
                        const std::size_t row = (s * L + j) * D + h * dh;
                        std::copy_n(Q->data() + row, dh, qh.data() + j * dh);
                        std::copy_n(K->data() + row, dh, kh.data() + j * dh);
                        std::copy_n(V->data() + row, dh, vh.data() + j * dh);
                        std::copy_n(O->grad_data() + row, dh, goh.data() + j * dh);
                    }
                    const T* P = probs->data() + (s * n_heads + h) * L * L;
                    // dV = P^T * dO ; dP = dO * V^T
                    gemm(true, false, static_cast<int>(L), static_cast<int>(dh),
                         static_cast<int>(L), T(1), P, static_cast<int>(L), goh.data(),
                         static_cast<int>(dh), T(0), dvh.data(), static_cast<int>(dh));
                    gemm(false, true, static_cast<int>(L), static_cast<int>(L),
                         static_cast<int>(dh), T(1), goh.data(), static_cast<int>(dh), vh.data(),
                         static_cast<int>(dh), T(0), dP.data(), static_cast<int>(L));
                    // dS = P o (dP - rowsum(dP o P)); masked entries have P = 0.
                    for (std::size_t i = 0; i < L; ++i) {
                        T dot = 0;
                        for (std::size_t j = 0; j < L; ++j)
                            dot += dP[i * L + j] * P[i * L + j];
                        for (std::size_t j = 0; j < L; ++j)
                            dS[i * L + j] = P[i * L + j] * (dP[i * L + j] - dot);
                    }
                    // dQ = dS * K * inv_sqrt ; dK = dS^T * Q * inv_sqrt
                    gemm(false, false, static_cast<int>(L), static_cast<int>(dh),
                         static_cast<int>(L), inv_sqrt, dS.data(), static_cast<int>(L),
                         kh.data(), static_cast<int>(dh), T(0), dqh.data(),
                         static_cast<int>(dh));
                    gemm(true, false, static_cast<int>(L), static_cast<int>(dh),
                         static_cast<int>(L), inv_sqrt, dS.data(), static_cast<int>(L),
                         qh.data(), static_cast<int>(dh), T(0), dkh.data(),
                         static_cast<int>(dh));
                    for (std::size_t j = 0; j < L; ++j) {
                        const std::size_t row = (s * L + j) * D + h * dh;
                        if (Q->requires_grad())
                            for (std::size_t d = 0; d < dh; ++d)
                                Q->grad_data()[row + d] += dqh[j * dh + d];
                        if (K->requires_grad())
                            for (std::size_t d = 0; d < dh; ++d)
                                K->grad_data()[row + d] += dkh[j * dh + d];
                        if (V->requires_grad())
                            for (std::size_t d = 0; d < dh; ++d)
                                V->grad_data()[row + d] += dvh[j * dh + d];
                    }
                }
            }
        });
    }
    return O;
}

}  // namespace hlm
