#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hlm/batch.hpp"
#include "hlm/checkpoint.hpp"
#include "hlm/losses.hpp"
#include "hlm/model.hpp"
#include "hlm/train.hpp"

namespace hlm {

struct EvalReport {
    std::string metric;
    double value = 0;
    std::size_t n_examples = 0;
    double half_width = 0;  // 95% normal-approximation confidence half-width
    std::uint64_t checkpoint_digest = 0;
};

struct EvalOptions {
    int n_micro = 16;
    int seq_len = 64;
    double mask_rate = 0.15;
    std::uint64_t seed = 0;
    int max_batches = 32;       // evaluation batches drawn from the corpus
    bool naive_readout = false; // allow e_theta^T logits on a headless model
};

enum class RetrievalScope { InBatch, FullVocab };

namespace eval_detail {

// Cheap content digest so reports can name the exact checkpoint they scored.
template <class T>
std::uint64_t checkpoint_digest(const Checkpoint<T>& ckpt) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
    };
    ckpt.params.for_each([&](const std::string&, const Tensor<T>& t) {
        mix(t->data(), t->numel() * sizeof(T));
    });
    mix(&ckpt.step, sizeof(ckpt.step));
    return h;
}

template <class T>
void require_head(const Checkpoint<T>& ckpt, bool naive_readout) {
    if (ckpt.stage == Stage::PretrainedHeadless && !ckpt.params.has_untied_head() &&
        !naive_readout)
        throw ContractError(
            "headless checkpoint has no LM head; run finetune_lm_head first or pass the "
            "naive-readout flag to score through e_theta^T");
}

// Deterministic evaluation batches: sequential non-overlapping windows, with
// MLM corruption keyed on (seed, batch index).
inline std::vector<Batch> eval_batches(const std::vector<int>& tokens, Task task,
                                       const EvalOptions& opt, int vocab_size) {
    const std::size_t N = static_cast<std::size_t>(opt.n_micro);
    const std::size_t L = static_cast<std::size_t>(opt.seq_len);
    const std::size_t stride = task == Task::MLM ? N * L : N * (L + 1);
    std::vector<Batch> batches;
    RngStream mix(opt.seed, "eval_batch_seed");
    for (std::size_t off = 0; off + stride <= tokens.size(); off += stride) {
        if (batches.size() >= static_cast<std::size_t>(opt.max_batches)) break;
        std::span<const int> window(tokens.data() + off, tokens.size() - off);
        if (task == Task::CLM) {
            batches.push_back(make_clm_batch(window, N, L));
        } else {
            batches.push_back(make_mlm_batch(window, N, L, opt.mask_rate,
                                             mix.bits(batches.size()), vocab_size));
        }
    }
    if (batches.empty()) throw DataError("held-out corpus too small for one evaluation batch");
    return batches;
}

// Per-row argmax with ties broken toward the lowest id.
template <class T>
int argmax_row(const T* row, std::size_t n) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < n; ++c)
        if (row[c] > row[best]) best = c;
    return static_cast<int>(best);
}

}  // namespace eval_detail

// exp(mean per-target negative log-likelihood) over deterministic batches
// drawn from the corpus, scored through the checkpoint's logit path. The NLL
// of each supervised position is accumulated in float64.
inline EvalReport perplexity(const Checkpoint<float>& ckpt, const std::vector<int>& tokens,
                             Task task, const EvalOptions& opt) {
    eval_detail::require_head(ckpt, opt.naive_readout);
    auto batches = eval_detail::eval_batches(tokens, task, opt, ckpt.params.cfg.vocab_size);

    double sum_nll = 0, sum_sq = 0;
    std::size_t n = 0;
    for (const auto& batch : batches) {
        if (batch.S.empty()) continue;
        Tape<float> tape;
        auto O = forward_backbone(tape, ckpt.params, batch.X_tilde, batch.N, batch.L);
        auto rows = take_rows(tape, O, batch.flat_positions());
        auto logits = tied_logits(tape, ckpt.params, rows);
        const std::size_t V = logits->cols();
        for (std::size_t r = 0; r < batch.S.size(); ++r) {
            const float* row = logits->data() + r * V;
            double mx = row[0];
            for (std::size_t v = 1; v < V; ++v) mx = std::max(mx, static_cast<double>(row[v]));
            double z = 0;
            for (std::size_t v = 0; v < V; ++v) z += std::exp(static_cast<double>(row[v]) - mx);
            const double nll =
                mx + std::log(z) - static_cast<double>(row[batch.targets[r]]);
            sum_nll += nll;
            sum_sq += nll * nll;
            ++n;
        }
    }
    if (n == 0) throw DataError("no supervised positions in the evaluation batches");

    const double mean = sum_nll / static_cast<double>(n);
    const double var = std::max(0.0, sum_sq / static_cast<double>(n) - mean * mean);
    EvalReport rep;
    rep.metric = "perplexity";
    rep.value = std::exp(mean);
    rep.n_examples = n;
    // delta method: d exp(m)/dm = exp(m)
    rep.half_width = 1.96 * std::sqrt(var / static_cast<double>(n)) * rep.value;
    rep.checkpoint_digest = eval_detail::checkpoint_digest(ckpt);
    return rep;
}

// Fraction of passages whose final token is the argmax prediction given its
// preceding context.
inline EvalReport cloze_accuracy(const Checkpoint<float>& ckpt,
                                 const std::vector<std::vector<int>>& passages,
                                 const EvalOptions& opt) {
    if (passages.empty()) throw ContractError("cloze_accuracy needs at least one passage");
    eval_detail::require_head(ckpt, opt.naive_readout);
    const auto max_ctx = static_cast<std::size_t>(ckpt.params.cfg.max_seq_len);

    std::size_t hits = 0;
    for (const auto& p : passages) {
        if (p.size() < 2) throw DataError("cloze passages must have length >= 2");
        const std::size_t ctx_len = std::min(p.size() - 1, max_ctx);
        std::vector<int> ctx(p.end() - 1 - static_cast<std::ptrdiff_t>(ctx_len), p.end() - 1);
        Tape<float> tape;
        auto O = forward_backbone(tape, ckpt.params, ctx, 1, ctx_len);
        auto last = take_rows(tape, O, {static_cast<int>(ctx_len - 1)});
        auto logits = tied_logits(tape, ckpt.params, last);
        hits += eval_detail::argmax_row(logits->data(), logits->cols()) == p.back();
    }
    EvalReport rep;
    rep.metric = "cloze_accuracy";
    rep.n_examples = passages.size();
    rep.value = static_cast<double>(hits) / static_cast<double>(passages.size());
    rep.half_width =
        1.96 * std::sqrt(rep.value * (1.0 - rep.value) / static_cast<double>(passages.size()));
    rep.checkpoint_digest = eval_detail::checkpoint_digest(ckpt);
    return rep;
}

// The headless model's native task: is the true target's score the maximum
// among the candidate embeddings? in_batch contrasts against the batch's own
// targets; full_vocab against all V rows (by construction the tied-logit
// argmax).
inline EvalReport retrieval_accuracy(const Checkpoint<float>& ckpt,
                                     const std::vector<Batch>& batches, RetrievalScope scope) {
    std::size_t hits = 0, n = 0;
    for (const auto& batch : batches) {
        if (batch.S.empty()) throw ContractError("retrieval_accuracy: batch with empty S");
        Tape<float> tape;
        auto O = forward_backbone(tape, ckpt.params, batch.X_tilde, batch.N, batch.L);
        auto o_rows = take_rows(tape, O, batch.flat_positions());
        if (scope == RetrievalScope::InBatch) {
            auto t_rows = take_rows(tape, ckpt.params.token_emb, batch.targets);
            auto M = matmul_nt(tape, o_rows, t_rows);
            const std::size_t K = M->rows();
            for (std::size_t a = 0; a < K; ++a) {
                const float* row = M->data() + a * K;
                const float best = *std::max_element(row, row + K);
                hits += row[a] >= best;  // duplicate targets score identically
            }
            n += K;
        } else {
            auto logits = matmul_nt(tape, o_rows, ckpt.params.token_emb);
            const std::size_t V = logits->cols();
            for (std::size_t r = 0; r < batch.S.size(); ++r)
                hits += eval_detail::argmax_row(logits->data() + r * V, V) == batch.targets[r];
            n += batch.S.size();
        }
    }
    EvalReport rep;
    rep.metric = scope == RetrievalScope::InBatch ? "retrieval_in_batch" : "retrieval_full_vocab";
    rep.n_examples = n;
    rep.value = static_cast<double>(hits) / static_cast<double>(n);
    rep.half_width = 1.96 * std::sqrt(rep.value * (1.0 - rep.value) / static_cast<double>(n));
    rep.checkpoint_digest = eval_detail::checkpoint_digest(ckpt);
    return rep;
}

struct SynonymPairSet {
    std::vector<std::pair<int, int>> pairs;  // deduplicated, ids distinct
    std::size_t n_skipped_oov = 0;           // lines naming unknown tokens
};

// One pair per line: token_a<TAB>token_b. Tokens are looked up in the
// tokenizer vocabulary; unknown tokens skip the line.
inline SynonymPairSet load_synonym_pairs(const std::string& path, const TokenizerModel& tok) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read synonym pair file '" + path + "'");
    SynonymPairSet set;
    std::set<std::pair<int, int>> seen;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw DataError("synonym line missing tab separator: " + line);
        const std::string a = line.substr(0, tab), b = line.substr(tab + 1);
        const auto& t2i = tok.vocab().token_to_id;
        auto ia = t2i.find(a), ib = t2i.find(b);
        if (ia == t2i.end() || ib == t2i.end()) {
            ++set.n_skipped_oov;
            continue;
        }
        if (ia->second == ib->second) continue;  // ids must be distinct
        auto key = std::minmax(ia->second, ib->second);
        if (seen.insert(key).second) set.pairs.emplace_back(ia->second, ib->second);
    }
    return set;
}

struct SynonymSummary {
    double mean = 0;
    std::array<std::size_t, 40> histogram{};  // fixed bins over [-1, 1]
    std::size_t n_included = 0;
    std::size_t n_excluded_zero_norm = 0;
    std::vector<double> cosines;
};

// Cosine similarity between the two input-embedding rows of each pair.
template <class T>
SynonymSummary synonym_cosine(const Tensor<T>& e_theta,
                              const std::vector<std::pair<int, int>>& pairs) {
    if (pairs.empty()) throw ContractError("synonym_cosine needs at least one pair");
    const std::size_t V = e_theta->rows(), D = e_theta->cols();
    SynonymSummary s;
    double sum = 0;
    for (auto [a, b] : pairs) {
        if (a < 0 || b < 0 || static_cast<std::size_t>(a) >= V ||
            static_cast<std::size_t>(b) >= V)
            throw IndexError("synonym pair id out of vocabulary range");
        const T* ra = e_theta->data() + static_cast<std::size_t>(a) * D;
        const T* rb = e_theta->data() + static_cast<std::size_t>(b) * D;
        double dot = 0, na = 0, nb = 0;
        for (std::size_t d = 0; d < D; ++d) {
            dot += static_cast<double>(ra[d]) * static_cast<double>(rb[d]);
            na += static_cast<double>(ra[d]) * static_cast<double>(ra[d]);
            nb += static_cast<double>(rb[d]) * static_cast<double>(rb[d]);
        }
        if (na == 0 || nb == 0) {
            ++s.n_excluded_zero_norm;
            continue;
        }
        const double cos = std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
        s.cosines.push_back(cos);
        sum += cos;
        // bin width 0.05; cos = 1.0 lands in the top bin
        auto bin = static_cast<std::size_t>((cos + 1.0) / 0.05);
        if (bin >= 40) bin = 39;
        ++s.histogram[bin];
        ++s.n_included;
    }
    if (s.n_included == 0) throw DataError("all synonym pairs had zero-norm embeddings");
    s.mean = sum / static_cast<double>(s.n_included);
    return s;
}

// Comparison mode: how much higher the first model's mean synonym cosine is.
template <class T>
double synonym_mean_shift(const Tensor<T>& e_a, const Tensor<T>& e_b,
                          const std::vector<std::pair<int, int>>& pairs) {
    return synonym_cosine(e_a, pairs).mean - synonym_cosine(e_b, pairs).mean;
}

}  // namespace hlm
