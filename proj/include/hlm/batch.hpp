#pragma once

#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hlm/bpe.hpp"
#include "hlm/errors.hpp"
#include "hlm/rng.hpp"

namespace hlm {

// A supervised batch: original tokens X, corrupted tokens X_tilde, the
// selection set S of supervised (sequence, position) pairs, and the target
// token id for each element of S (original token for MLM, next token for CLM).
struct Batch {
    std::size_t N = 0, L = 0;
    std::vector<int> X;        // N x L, row-major
    std::vector<int> X_tilde;  // N x L
    std::vector<std::pair<int, int>> S;
    std::vector<int> targets;

    int x(std::size_t i, std::size_t j) const { return X[i * L + j]; }
    int x_tilde(std::size_t i, std::size_t j) const { return X_tilde[i * L + j]; }
    std::size_t k() const { return S.size(); }

    // Flat row indices into the [N*L x D] backbone output for each s in S.
    std::vector<int> flat_positions() const {
        std::vector<int> out;
        out.reserve(S.size());
        for (auto [i, j] : S) out.push_back(i * static_cast<int>(L) + j);
        return out;
    }
};

// MLM batch: per-position Bernoulli(mask_rate) selection; of the selected
// positions 80% become MASK, 10% a uniform random non-special token, 10% stay
// unchanged. Targets are always the original tokens.
inline Batch make_mlm_batch(std::span<const int> tokens, std::size_t N, std::size_t L,
                            double mask_rate, std::uint64_t seed, int vocab_size) {
    if (tokens.size() < N * L)
        throw DataError("make_mlm_batch: need " + std::to_string(N * L) + " tokens, have " +
                        std::to_string(tokens.size()));
    if (mask_rate < 0.0 || mask_rate >= 1.0)
        throw ConfigError("mask_rate must be in [0, 1)");
    if (vocab_size <= Vocab::kNumSpecials)
        throw ConfigError("vocab too small for random-replacement corruption");

    Batch b;
    b.N = N;
    b.L = L;
    b.X.assign(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(N * L));
    b.X_tilde = b.X;

    RngStream select(seed, "mlm_select");
    RngStream corrupt(seed, "mlm_corrupt");
    for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t j = 0; j < L; ++j) {
            if (select.uniform(i, j) >= mask_rate) continue;
            b.S.emplace_back(static_cast<int>(i), static_cast<int>(j));
            b.targets.push_back(b.x(i, j));
            const double r = corrupt.uniform(i, j);
            if (r < 0.8) {
                b.X_tilde[i * L + j] = Vocab::MASK;
            } else if (r < 0.9) {
                const int span = vocab_size - Vocab::kNumSpecials;
                b.X_tilde[i * L + j] =
                    Vocab::kNumSpecials +
                    static_cast<int>(corrupt.below(static_cast<std::uint64_t>(span), i, j, 1));
            }
            // else: keep the original token
        }
    }
    return b;
}

// CLM batch: contiguous windows, next-token targets, no corruption, S covers
// every position.
inline Batch make_clm_batch(std::span<const int> tokens, std::size_t N, std::size_t L) {
    if (tokens.size() < N * (L + 1))
        throw DataError("make_clm_batch: need " + std::to_string(N * (L + 1)) +
                        " tokens, have " + std::to_string(tokens.size()));
    Batch b;
    b.N = N;
    b.L = L;
    b.X.reserve(N * L);
    for (std::size_t i = 0; i < N; ++i) {
        const std::size_t start = i * (L + 1);
        for (std::size_t j = 0; j < L; ++j) {
            b.X.push_back(tokens[start + j]);
            b.S.emplace_back(static_cast<int>(i), static_cast<int>(j));
            b.targets.push_back(tokens[start + j + 1]);
        }
    }
    b.X_tilde = b.X;
    return b;
}

// Documents are concatenated with a BOS separator, then sliced into fixed
// windows by the batch builders.
inline std::vector<int> pack_documents(const TokenizerModel& tok,
                                       const std::vector<std::string>& documents) {
    std::vector<int> stream;
    for (const auto& doc : documents) {
        stream.push_back(Vocab::BOS);
        auto ids = tok.encode(doc);
        stream.insert(stream.end(), ids.begin(), ids.end());
    }
    return stream;
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot read corpus file " + path);
    std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return s;
}

inline std::vector<int> load_corpus_tokens(const TokenizerModel& tok,
                                           const std::vector<std::string>& paths) {
    if (paths.empty()) throw DataError("no corpus paths given");
    std::vector<std::string> docs;
    docs.reserve(paths.size());
    for (const auto& p : paths) docs.push_back(read_text_file(p));
    return pack_documents(tok, docs);
}

}  // namespace hlm
