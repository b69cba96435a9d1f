#include <doctest.h>

#include <algorithm>
#include <set>

#include "aura/common.hpp"
#include "aura/corpus.hpp"
#include "support.hpp"

using namespace aura;

namespace {

ErrorKind kind_of(const auto& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an aura::Error");
    return ErrorKind::IoError;
}

}  // namespace

TEST_CASE("jsonl parsing") {
    const auto c = parse_jsonl("{\"text\":\"abc\",\"label\":1}\n{\"text\":\"de\",\"label\":0}\n");
    CHECK(c.size() == 2);
    CHECK(c.n_pos() == 1);
    CHECK(c.n_neg() == 1);
    CHECK(c.sentences()[0].text == "abc");

    CHECK(kind_of([] { parse_jsonl("{\"text\":\"x\",\"label\":2}\n"); }) == ErrorKind::BadLabel);
    CHECK(kind_of([] { parse_jsonl(""); }) == ErrorKind::EmptyCorpus);
    CHECK(kind_of([] { parse_jsonl("{\"text\":\"x\"}\n{\"text\":\"y\",\"label\":0}\n"); }) == ErrorKind::MissingField);
    CHECK(kind_of([] { parse_jsonl("{\"text\":\"x\",\"label\":1}\n"); }) == ErrorKind::OneClassOnly);
    CHECK(kind_of([] { parse_jsonl("{\"text\":\"   \",\"label\":1}\n{\"text\":\"y\",\"label\":0}\n"); }) ==
          ErrorKind::MissingField);
}

TEST_CASE("bad label error names the line") {
    try {
        parse_jsonl("{\"text\":\"x\",\"label\":2}\n");
        FAIL("no throw");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("line 1") != std::string::npos);
    }
}

TEST_CASE("jsonl round trip") {
    aura::testing::TempDir dir;
    const auto c = gen_synthetic(20, 30, 4);
    save_jsonl(c, dir.path("c.jsonl"));
    const auto back = load_jsonl(dir.path("c.jsonl"));
    CHECK(back.to_jsonl() == c.to_jsonl());
    CHECK(back.hash() == c.hash());
}

TEST_CASE("label slices") {
    const auto c = gen_synthetic(5, 7, 2);
    CHECK(c.texts_with_label(1).size() == 5);
    CHECK(c.texts_with_label(0).size() == 7);
}

TEST_CASE("synthetic corpus") {
    CHECK(gen_synthetic(3, 3, 7).to_jsonl() == gen_synthetic(3, 3, 7).to_jsonl());
    CHECK(gen_synthetic(3, 3, 7).to_jsonl() != gen_synthetic(3, 3, 8).to_jsonl());

    const auto c = gen_synthetic(500, 2000, 1);
    CHECK(c.n_pos() == 500);
    CHECK(c.n_neg() == 2000);
    for (const auto& s : c.sentences()) {
        CHECK(contains_marker(s.text) == (s.label == 1));
    }
}

TEST_CASE("marker and background vocabularies are disjoint") {
    const std::set<std::string> bg(background_words().begin(), background_words().end());
    CHECK(marker_words() == std::vector<std::string>{"geern", "rdaes", "fllas", "sgnis"});
    for (const auto& m : marker_words()) {
        CHECK(bg.count(m) == 0);
        // Same letters as some background word: only their order differs.
        auto sorted = m;
        std::sort(sorted.begin(), sorted.end());
        CHECK(std::any_of(bg.begin(), bg.end(), [&](std::string w) {
            std::sort(w.begin(), w.end());
            return w == sorted;
        }));
    }
}

TEST_CASE("prompts are one background word") {
    const auto p = gen_prompts(50, 5);
    CHECK(p.size() == 50);
    CHECK(p == gen_prompts(50, 5));
    const auto& bg = background_words();
    for (const auto& s : p) {
        CHECK_FALSE(contains_marker(s));
        REQUIRE(s.back() == ' ');
        CHECK(std::find(bg.begin(), bg.end(), s.substr(0, s.size() - 1)) != bg.end());
    }
}

TEST_CASE("tokenizer") {
    const ConceptCorpus ab({{"ab", 1}, {"ba", 0}});
    const auto tok = build_tokenizer(ab);
    CHECK(tok.vocab_size() == 5);
    CHECK(tok.decode(tok.encode("ab")) == "ab");

    const ConceptCorpus ba({{"ba", 0}, {"ab", 1}});
    CHECK(build_tokenizer(ba) == tok);

    const auto empty = tok.encode("");
    REQUIRE(empty.size() == 1);
    CHECK(empty[0] == Tokenizer::kBos);

    CHECK(kind_of([&] { tok.decode({static_cast<TokenId>(tok.vocab_size() + 1)}); }) == ErrorKind::BadTokenId);
}

TEST_CASE("tokenizer ids are contiguous and round trip every corpus sentence") {
    const auto c = gen_synthetic(50, 50, 3);
    const auto tok = build_tokenizer(c);
    std::set<TokenId> ids;
    for (auto ch : tok.chars()) ids.insert(tok.id_of(ch));
    CHECK(ids.size() == tok.chars().size());
    CHECK(*ids.begin() == Tokenizer::kNumSpecials);
    CHECK(*ids.rbegin() == static_cast<TokenId>(tok.vocab_size() - 1));
    for (const auto& s : c.sentences()) CHECK(tok.decode(tok.encode(s.text)) == s.text);
}

TEST_CASE("utf8 round trip") {
    const std::string s = "caf\xc3\xa9 \xe2\x82\xac";
    std::string back;
    for (auto c : utf8_decode(s)) back += utf8_encode(c);
    CHECK(back == s);
}
