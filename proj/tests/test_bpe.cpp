#include <catch2/catch_amalgamated.hpp>

#include <sstream>
#include <string>

#include "hlm/bpe.hpp"
#include "hlm/rng.hpp"

using namespace hlm;

namespace {

std::string random_text(std::uint64_t seed, std::size_t len) {
    RngStream rng(seed, "bpe_text");
    static const std::string alphabet = "abcdefgh   \n\tzz.,!";
    std::string s;
    for (std::size_t i = 0; i < len; ++i)
        s += alphabet[static_cast<std::size_t>(rng.below(alphabet.size(), i))];
    return s;
}

// Reference oracle: apply the merge list strictly in order, each merge
// replacing all occurrences left to right before the next one runs.
std::vector<int> encode_oracle(const TokenizerModel& model, std::string_view text) {
    std::vector<int> ids;
    for (auto& w : model.pretokenize(text)) {
        auto cur = w;
        for (const auto& m : model.merges()) {
            std::vector<int> out;
            for (std::size_t i = 0; i < cur.size();) {
                if (i + 1 < cur.size() && cur[i] == m.left && cur[i + 1] == m.right) {
                    out.push_back(m.result);
                    i += 2;
                } else {
                    out.push_back(cur[i]);
                    ++i;
                }
            }
            cur = std::move(out);
        }
        ids.insert(ids.end(), cur.begin(), cur.end());
    }
    return ids;
}

}  // namespace

TEST_CASE("first learned merge is the most frequent pair", "[bpe]") {
    auto model = train_bpe("aaab aaab", TokenizerModel::kBaseVocab + 1);
    REQUIRE(model.merges().size() == 1);
    const auto& m = model.merges()[0];
    CHECK(model.vocab().id_to_token[static_cast<std::size_t>(m.left)] == "a");
    CHECK(model.vocab().id_to_token[static_cast<std::size_t>(m.right)] == "a");
}

TEST_CASE("no room to merge yields empty merge list", "[bpe]") {
    auto model = train_bpe("some corpus text", TokenizerModel::kBaseVocab);
    CHECK(model.merges().empty());
}

TEST_CASE("too-small vocab target is a config error", "[bpe]") {
    CHECK_THROWS_AS(train_bpe("abc", TokenizerModel::kBaseVocab - 1), ConfigError);
    CHECK_THROWS_AS(train_bpe("", TokenizerModel::kBaseVocab + 5), DataError);
}

TEST_CASE("encode basics", "[bpe]") {
    auto model = train_bpe("hello world hello world hello", TokenizerModel::kBaseVocab + 10);
    CHECK(model.encode("").empty());
    CHECK(model.decode(model.encode("hello world")) == "hello world");
}

TEST_CASE("round-trip over the training corpus", "[bpe]") {
    std::string corpus = "the quick brown fox jumps over the lazy dog\n"
                         "the quick brown fox  jumps\t over THE lazy dog \n";
    auto model = train_bpe(corpus, TokenizerModel::kBaseVocab + 30);
    CHECK(model.decode(model.encode(corpus)) == corpus);
}

TEST_CASE("round-trip on random byte strings", "[bpe]") {
    auto model = train_bpe(random_text(7, 5000), TokenizerModel::kBaseVocab + 40);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto s = random_text(100 + seed, 200);
        CHECK(model.decode(model.encode(s)) == s);
    }
}

TEST_CASE("encode matches in-order merge application oracle", "[bpe]") {
    auto model = train_bpe(random_text(3, 8000), TokenizerModel::kBaseVocab + 60);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        auto s = random_text(500 + seed, 80);
        CHECK(model.encode(s) == encode_oracle(model, s));
    }
}

TEST_CASE("encode never emits special ids", "[bpe]") {
    auto model = train_bpe(random_text(9, 4000), TokenizerModel::kBaseVocab + 25);
    auto ids = model.encode(random_text(55, 1000));
    for (int id : ids) CHECK(id >= Vocab::kNumSpecials);
}

TEST_CASE("tokenizer file round-trips byte-exactly", "[bpe]") {
    auto model = train_bpe("banana bandana cabana banana", TokenizerModel::kBaseVocab + 12);
    std::ostringstream first;
    model.save(first);
    std::istringstream in(first.str());
    auto reloaded = TokenizerModel::load(in);
    std::ostringstream second;
    reloaded.save(second);
    CHECK(first.str() == second.str());
    CHECK(reloaded.vocab().size() == model.vocab().size());
    CHECK(reloaded.encode("banana") == model.encode("banana"));
}

TEST_CASE("decode rejects out-of-range ids", "[bpe]") {
    TokenizerModel model;
    CHECK_THROWS_AS(model.decode({model.vocab().size()}), IndexError);
}
