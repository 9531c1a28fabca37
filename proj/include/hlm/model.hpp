#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hlm/errors.hpp"
#include "hlm/ops.hpp"
#include "hlm/rng.hpp"
#include "hlm/tensor.hpp"

namespace hlm {

struct ModelConfig {
    int vocab_size = 2000;
    int hidden = 128;       // D
    int max_seq_len = 64;   // learned absolute positions
    int n_layers = 4;
    int n_heads = 4;
    int d_ff = 512;
    bool causal = false;
    double init_std = 0.02;
    double ln_eps = 1e-5;
    bool final_ln = true;  // final layer-norm before the contrastive readout

    void validate() const {
        if (vocab_size <= 4) throw ConfigError("vocab_size must exceed the special tokens");
        if (hidden <= 0 || max_seq_len <= 0 || n_layers <= 0 || n_heads <= 0 || d_ff <= 0)
            throw ConfigError("model dimensions must be positive");
        if (hidden % n_heads != 0) throw ConfigError("hidden must be divisible by n_heads");
    }
};

// Backbone parameters plus the optional untied LM head (absent for headless
// pretraining and vanilla weight tying; present after head recovery).
template <class T>
struct Parameters {
    ModelConfig cfg;

    Tensor<T> token_emb;  // V x D, e_theta
    Tensor<T> pos_emb;    // L_max x D

    struct Layer {
        Tensor<T> ln1_g, ln1_b;
        Tensor<T> wq, wk, wv, wo;  // D x D
        // No key bias: softmax scores are invariant to a constant shift along
        // keys, so a bk would carry an identically-zero gradient forever.
        Tensor<T> bq, bv, bo;
        Tensor<T> ln2_g, ln2_b;
        Tensor<T> w1, b1;  // D x d_ff
        Tensor<T> w2, b2;  // d_ff x D
    };
    std::vector<Layer> layers;

    Tensor<T> lnf_g, lnf_b;
    Tensor<T> untied_head;  // V x D or null

    bool has_untied_head() const { return untied_head != nullptr; }

    void for_each(const std::function<void(const std::string&, const Tensor<T>&)>& fn) const {
        fn("token_emb", token_emb);
        fn("pos_emb", pos_emb);
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const auto& L = layers[l];
            const std::string p = "layer" + std::to_string(l) + ".";
            fn(p + "ln1_g", L.ln1_g);
            fn(p + "ln1_b", L.ln1_b);
            fn(p + "wq", L.wq);
            fn(p + "wk", L.wk);
            fn(p + "wv", L.wv);
            fn(p + "wo", L.wo);
            fn(p + "bq", L.bq);
            fn(p + "bv", L.bv);
            fn(p + "bo", L.bo);
            fn(p + "ln2_g", L.ln2_g);
            fn(p + "ln2_b", L.ln2_b);
            fn(p + "w1", L.w1);
            fn(p + "b1", L.b1);
            fn(p + "w2", L.w2);
            fn(p + "b2", L.b2);
        }
        fn("lnf_g", lnf_g);
        fn("lnf_b", lnf_b);
        if (untied_head) fn("untied_head", untied_head);
    }

    std::vector<Tensor<T>> all() const {
        std::vector<Tensor<T>> out;
        for_each([&](const std::string&, const Tensor<T>& t) { out.push_back(t); });
        return out;
    }

    std::size_t count() const {
        std::size_t n = 0;
        for_each([&](const std::string&, const Tensor<T>& t) { n += t->numel(); });
        return n;
    }
};

// All weights ~ normal(0, init_std^2); biases and layer-norm betas zero,
// layer-norm gammas one. Deterministic given seed.
template <class T>
Parameters<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const auto V = static_cast<std::size_t>(cfg.vocab_size);
    const auto D = static_cast<std::size_t>(cfg.hidden);
    const auto F = static_cast<std::size_t>(cfg.d_ff);

    Parameters<T> p;
    p.cfg = cfg;
    std::size_t tensor_index = 0;
    auto normal = [&](Shape shape) {
        auto t = make_tensor<T>(std::move(shape), true);
        RngStream rng(seed, "init");
        const std::uint64_t ti = tensor_index++;
        for (std::size_t i = 0; i < t->numel(); ++i)
            t->at(i) = static_cast<T>(cfg.init_std * rng.normal(ti, i));
        return t;
    };
    auto fill = [&](Shape shape, T value) {
        auto t = make_tensor<T>(std::move(shape), true);
        ++tensor_index;
        for (std::size_t i = 0; i < t->numel(); ++i) t->at(i) = value;
        return t;
    };

    p.token_emb = normal({V, D});
    p.pos_emb = normal({static_cast<std::size_t>(cfg.max_seq_len), D});
    for (int l = 0; l < cfg.n_layers; ++l) {
        typename Parameters<T>::Layer layer;
        layer.ln1_g = fill({D}, T(1));
        layer.ln1_b = fill({D}, T(0));
        layer.wq = normal({D, D});
        layer.wk = normal({D, D});
        layer.wv = normal({D, D});
        layer.wo = normal({D, D});
        layer.bq = fill({D}, T(0));
        layer.bv = fill({D}, T(0));
        layer.bo = fill({D}, T(0));
        layer.ln2_g = fill({D}, T(1));
        layer.ln2_b = fill({D}, T(0));
        layer.w1 = normal({D, F});
        layer.b1 = fill({F}, T(0));
        layer.w2 = normal({F, D});
        layer.b2 = fill({D}, T(0));
        p.layers.push_back(std::move(layer));
    }
    p.lnf_g = fill({D}, T(1));
    p.lnf_b = fill({D}, T(0));
    return p;
}

// Pre-layer-norm transformer over corrupted token ids. Input is a flat
// [N*L] id list; output representations are [(N*L) x D] after the final
// layer-norm (when enabled).
template <class T>
Tensor<T> forward_backbone(Tape<T>& tape, const Parameters<T>& params,
                           const std::vector<int>& ids, std::size_t n_seq,
                           std::size_t seq_len) {
    const auto& cfg = params.cfg;
    if (seq_len > static_cast<std::size_t>(cfg.max_seq_len))
        throw ShapeError("sequence length " + std::to_string(seq_len) + " exceeds max " +
                         std::to_string(cfg.max_seq_len));
    if (ids.size() != n_seq * seq_len)
        throw ShapeError("id count does not match n_seq * seq_len");
    for (int id : ids)
        if (id < 0 || id >= cfg.vocab_size)
            throw IndexError("token id " + std::to_string(id) + " out of range [0, " +
                             std::to_string(cfg.vocab_size) + ")");

    std::vector<int> pos_ids(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i)
        pos_ids[i] = static_cast<int>(i % seq_len);

    auto x = add(tape, embedding_lookup(tape, params.token_emb, ids),
                 take_rows(tape, params.pos_emb, pos_ids));
    const T eps = static_cast<T>(cfg.ln_eps);
    for (const auto& layer : params.layers) {
        auto h = layer_norm(tape, x, layer.ln1_g, layer.ln1_b, eps);
        auto q = add_bias(tape, matmul(tape, h, layer.wq), layer.bq);
        auto k = matmul(tape, h, layer.wk);
        auto v = add_bias(tape, matmul(tape, h, layer.wv), layer.bv);
        auto att = attention(tape, q, k, v, static_cast<std::size_t>(cfg.n_heads), n_seq,
                             seq_len, cfg.causal);
        x = add(tape, x, add_bias(tape, matmul(tape, att, layer.wo), layer.bo));

        auto m = layer_norm(tape, x, layer.ln2_g, layer.ln2_b, eps);
        m = gelu(tape, add_bias(tape, matmul(tape, m, layer.w1), layer.b1));
        x = add(tape, x, add_bias(tape, matmul(tape, m, layer.w2), layer.b2));
    }
    if (cfg.final_ln) x = layer_norm(tape, x, params.lnf_g, params.lnf_b, eps);
    return x;
}

// Logit projection: O * e_theta^T, or the untied head (used transposed) when
// one exists. Rows may be the full [N*L] output or a gathered subset.
template <class T>
Tensor<T> tied_logits(Tape<T>& tape, const Parameters<T>& params, const Tensor<T>& O) {
    const auto& proj = params.untied_head ? params.untied_head : params.token_emb;
    return matmul_nt(tape, O, proj);
}

}  // namespace hlm
