#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hlm/errors.hpp"

namespace hlm {

// Byte-level BPE with a word-boundary marker. Base alphabet: all 256 bytes
// plus the marker symbol, after the four specials. A space preceding a
// non-whitespace byte folds into the following word as the marker, so
// decode(encode(s)) == s for arbitrary byte strings.

struct Vocab {
    static constexpr int PAD = 0;
    static constexpr int MASK = 1;
    static constexpr int UNK = 2;
    static constexpr int BOS = 3;
    static constexpr int kNumSpecials = 4;

    std::vector<std::string> id_to_token;
    std::unordered_map<std::string, int> token_to_id;

    int size() const { return static_cast<int>(id_to_token.size()); }

    int add(const std::string& tok) {
        int id = size();
        id_to_token.push_back(tok);
        token_to_id.emplace(tok, id);
        return id;
    }
};

namespace bpe_detail {

constexpr int kMarkerSym = 256;  // symbol index, not a token id
constexpr int kNumBaseSyms = 257;

inline bool is_ws(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

inline std::string byte_rep(int b) {
    if (b >= 33 && b <= 126) return std::string(1, static_cast<char>(b));
    static const char* hex = "0123456789ABCDEF";
    std::string s = "<0x";
    s += hex[(b >> 4) & 15];
    s += hex[b & 15];
    s += '>';
    return s;
}

inline std::string marker_rep() { return "\xE2\x96\x81"; }  // lower one-eighth block

}  // namespace bpe_detail

struct Merge {
    int left, right, result;
};

class TokenizerModel {
public:
    TokenizerModel() {
        vocab_.add("<pad>");
        vocab_.add("<mask>");
        vocab_.add("<unk>");
        vocab_.add("<bos>");
        token_bytes_.resize(Vocab::kNumSpecials);  // specials decode to nothing
        for (int b = 0; b < 256; ++b) {
            vocab_.add(bpe_detail::byte_rep(b));
            token_bytes_.push_back({b});
        }
        vocab_.add(bpe_detail::marker_rep());
        token_bytes_.push_back({bpe_detail::kMarkerSym});
        merge_rank_.clear();
    }

    static constexpr int kBaseVocab = Vocab::kNumSpecials + bpe_detail::kNumBaseSyms;

    const Vocab& vocab() const { return vocab_; }
    const std::vector<Merge>& merges() const { return merges_; }
    int byte_token(int b) const { return Vocab::kNumSpecials + b; }
    int marker_token() const { return Vocab::kNumSpecials + bpe_detail::kMarkerSym; }

    void add_merge(int left, int right) {
        Merge m;
        m.left = left;
        m.right = right;
        m.result = vocab_.add(vocab_.id_to_token[static_cast<std::size_t>(left)] +
                              vocab_.id_to_token[static_cast<std::size_t>(right)]);
        auto bytes = token_bytes_[static_cast<std::size_t>(left)];
        const auto& rb = token_bytes_[static_cast<std::size_t>(right)];
        bytes.insert(bytes.end(), rb.begin(), rb.end());
        token_bytes_.push_back(std::move(bytes));
        merge_rank_.emplace(pair_key(left, right), static_cast<int>(merges_.size()));
        merges_.push_back(m);
    }

    // Split text into words of base token ids; a space before a non-whitespace
    // byte becomes the marker token prefixing that word.
    std::vector<std::vector<int>> pretokenize(std::string_view text) const {
        using bpe_detail::is_ws;
        std::vector<std::vector<int>> words;
        std::size_t i = 0;
        const std::size_t n = text.size();
        while (i < n) {
            const auto c = static_cast<unsigned char>(text[i]);
            if (is_ws(c)) {
                if (c == ' ' && i + 1 < n && !is_ws(static_cast<unsigned char>(text[i + 1]))) {
                    std::vector<int> w{marker_token()};
                    ++i;
                    while (i < n && !is_ws(static_cast<unsigned char>(text[i])))
                        w.push_back(byte_token(static_cast<unsigned char>(text[i++])));
                    words.push_back(std::move(w));
                } else {
                    words.push_back({byte_token(c)});
                    ++i;
                }
            } else {
                std::vector<int> w;
                while (i < n && !is_ws(static_cast<unsigned char>(text[i])))
                    w.push_back(byte_token(static_cast<unsigned char>(text[i++])));
                words.push_back(std::move(w));
            }
        }
        return words;
    }

    // Apply merges to one word. Repeatedly merging the lowest-rank pair
    // present (all occurrences, left to right) is equivalent to applying the
    // merge list in order, since merge inputs always predate their outputs.
    void apply_merges(std::vector<int>& w) const {
        if (merge_rank_.empty()) return;
        while (w.size() >= 2) {
            int best_rank = -1;
            for (std::size_t i = 0; i + 1 < w.size(); ++i) {
                auto it = merge_rank_.find(pair_key(w[i], w[i + 1]));
                if (it != merge_rank_.end() && (best_rank < 0 || it->second < best_rank))
                    best_rank = it->second;
            }
            if (best_rank < 0) break;
            const Merge& m = merges_[static_cast<std::size_t>(best_rank)];
            std::vector<int> out;
            out.reserve(w.size());
            for (std::size_t i = 0; i < w.size();) {
                if (i + 1 < w.size() && w[i] == m.left && w[i + 1] == m.right) {
                    out.push_back(m.result);
                    i += 2;
                } else {
                    out.push_back(w[i]);
                    ++i;
                }
            }
            w = std::move(out);
        }
    }

    std::vector<int> encode(std::string_view text) const {
        std::vector<int> ids;
        std::map<std::vector<int>, std::vector<int>> cache;
        for (auto& w : pretokenize(text)) {
            auto it = cache.find(w);
            if (it == cache.end()) {
                auto merged = w;
                apply_merges(merged);
                it = cache.emplace(std::move(w), std::move(merged)).first;
            }
            ids.insert(ids.end(), it->second.begin(), it->second.end());
        }
        return ids;
    }

    std::string decode(const std::vector<int>& ids) const {
        std::string out;
        for (int id : ids) {
            if (id < 0 || id >= vocab_.size())
                throw IndexError("token id " + std::to_string(id) + " out of range [0, " +
                                 std::to_string(vocab_.size()) + ")");
            for (int sym : token_bytes_[static_cast<std::size_t>(id)])
                out += sym == bpe_detail::kMarkerSym ? ' ' : static_cast<char>(sym);
        }
        return out;
    }

    // Versioned text format; writing is fully deterministic, so
    // save(load(path)) reproduces the file byte for byte.
    void save(std::ostream& os) const {
        os << "HLM-BPE v1\n";
        os << "specials <pad> <mask> <unk> <bos>\n";
        os << "base " << bpe_detail::kNumBaseSyms << "\n";
        for (int b = 0; b < 256; ++b)
            os << bpe_detail::byte_rep(b) << " " << byte_token(b) << "\n";
        os << bpe_detail::marker_rep() << " " << marker_token() << "\n";
        os << "merges " << merges_.size() << "\n";
        for (const auto& m : merges_)
            os << vocab_.id_to_token[static_cast<std::size_t>(m.left)] << " "
               << vocab_.id_to_token[static_cast<std::size_t>(m.right)] << " " << m.result
               << "\n";
    }

    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw DataError("cannot write tokenizer file " + path);
        save(f);
    }

    static TokenizerModel load(std::istream& is) {
        TokenizerModel model;
        std::string line;
        auto next = [&](const char* what) {
            if (!std::getline(is, line)) throw DataError(std::string("tokenizer file truncated: ") + what);
            return line;
        };
        if (next("header") != "HLM-BPE v1") throw DataError("bad tokenizer header: " + line);
        next("specials");
        std::istringstream base_hdr(next("base count"));
        std::string word;
        int n_base = 0;
        base_hdr >> word >> n_base;
        if (word != "base" || n_base != bpe_detail::kNumBaseSyms)
            throw DataError("unexpected base alphabet size");
        for (int i = 0; i < n_base; ++i) next("base symbol");
        std::istringstream merge_hdr(next("merge count"));
        std::size_t n_merges = 0;
        merge_hdr >> word >> n_merges;
        if (word != "merges") throw DataError("missing merges section");
        for (std::size_t i = 0; i < n_merges; ++i) {
            std::istringstream ls(next("merge"));
            std::string left, right;
            int result = -1;
            ls >> left >> right >> result;
            auto li = model.vocab_.token_to_id.find(left);
            auto ri = model.vocab_.token_to_id.find(right);
            if (li == model.vocab_.token_to_id.end() || ri == model.vocab_.token_to_id.end())
                throw DataError("merge references unknown token: " + line);
            model.add_merge(li->second, ri->second);
            if (model.vocab_.size() - 1 != result)
                throw DataError("merge id mismatch: " + line);
        }
        return model;
    }

    static TokenizerModel load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw DataError("cannot read tokenizer file " + path);
        return load(f);
    }

private:
    static std::uint64_t pair_key(int a, int b) {
        return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
               static_cast<std::uint32_t>(b);
    }

    Vocab vocab_;
    std::vector<std::vector<int>> token_bytes_;  // marker encoded as kMarkerSym
    std::vector<Merge> merges_;
    std::unordered_map<std::uint64_t, int> merge_rank_;
};

// Greedy most-frequent-pair BPE training. Frequency ties break toward the
// lexicographically smallest (left, right) token-string pair.
inline TokenizerModel train_bpe(std::string_view corpus, int target_vocab) {
    if (corpus.empty()) throw DataError("train_bpe: empty corpus");
    TokenizerModel model;
    if (target_vocab < TokenizerModel::kBaseVocab)
        throw ConfigError("target_vocab " + std::to_string(target_vocab) +
                          " below base alphabet + specials (" +
                          std::to_string(TokenizerModel::kBaseVocab) + ")");
    const int n_merges = target_vocab - TokenizerModel::kBaseVocab;

    std::map<std::vector<int>, long long> word_freq;
    for (auto& w : model.pretokenize(corpus)) ++word_freq[w];

    for (int step = 0; step < n_merges; ++step) {
        std::unordered_map<std::uint64_t, long long> pair_count;
        for (const auto& [w, freq] : word_freq)
            for (std::size_t i = 0; i + 1 < w.size(); ++i) {
                std::uint64_t key =
                    (static_cast<std::uint64_t>(static_cast<std::uint32_t>(w[i])) << 32) |
                    static_cast<std::uint32_t>(w[i + 1]);
                pair_count[key] += freq;
            }
        if (pair_count.empty()) break;  // corpus exhausted, vocab stays smaller

        const auto& toks = model.vocab().id_to_token;
        long long best_count = -1;
        int best_l = -1, best_r = -1;
        for (const auto& [key, count] : pair_count) {
            const int l = static_cast<int>(key >> 32);
            const int r = static_cast<int>(key & 0xffffffffu);
            bool better = count > best_count;
            if (count == best_count) {
                const auto& bl = toks[static_cast<std::size_t>(best_l)];
                const auto& br = toks[static_cast<std::size_t>(best_r)];
                const auto& cl = toks[static_cast<std::size_t>(l)];
                const auto& cr = toks[static_cast<std::size_t>(r)];
                better = std::tie(cl, cr) < std::tie(bl, br);
            }
            if (better) {
                best_count = count;
                best_l = l;
                best_r = r;
            }
        }
        model.add_merge(best_l, best_r);
        const int result = model.vocab().size() - 1;

        std::map<std::vector<int>, long long> next_freq;
        for (auto& [w, freq] : word_freq) {
            bool contains = false;
            for (std::size_t i = 0; i + 1 < w.size(); ++i)
                if (w[i] == best_l && w[i + 1] == best_r) {
                    contains = true;
                    break;
                }
            if (!contains) {
                next_freq[w] += freq;
                continue;
            }
            std::vector<int> out;
            out.reserve(w.size());
            for (std::size_t i = 0; i < w.size();) {
                if (i + 1 < w.size() && w[i] == best_l && w[i + 1] == best_r) {
                    out.push_back(result);
                    i += 2;
                } else {
                    out.push_back(w[i]);
                    ++i;
                }
            }
            next_freq[std::move(out)] += freq;
        }
        word_freq = std::move(next_freq);
    }
    return model;
}

}  // namespace hlm
