#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace aura {

struct LabeledSentence {
    std::string text;
    int label = 0;  // 1 = concept present
};

// Immutable once built; the constructor enforces both classes are present.
class ConceptCorpus {
public:
    explicit ConceptCorpus(std::vector<LabeledSentence> sentences);

    const std::vector<LabeledSentence>& sentences() const noexcept { return sentences_; }
    std::size_t size() const noexcept { return sentences_.size(); }
    std::size_t n_pos() const noexcept { return n_pos_; }
    std::size_t n_neg() const noexcept { return n_neg_; }

    // Sub-corpus view by label; throws EmptySlice if that class is absent.
    std::vector<std::string> texts_with_label(int label) const;

    std::string to_jsonl() const;
    std::uint64_t hash() const;

private:
    std::vector<LabeledSentence> sentences_;
    std::size_t n_pos_ = 0;
    std::size_t n_neg_ = 0;
};

ConceptCorpus load_jsonl(const std::string& path);
ConceptCorpus parse_jsonl(std::string_view contents);
void save_jsonl(const ConceptCorpus& corpus, const std::string& path);

// Word lists behind the synthetic concept. Marker words keep the first and
// last letter of a background word and reverse the rest, so spotting one
// takes character order rather than character identity.
const std::vector<std::string>& marker_words();
const std::vector<std::string>& background_words();
bool contains_marker(std::string_view text);

ConceptCorpus gen_synthetic(std::size_t n_pos, std::size_t n_neg, std::uint64_t seed);

// Prompts for generation-based evaluation: a single background word, after
// which the sentence may continue either way.
std::vector<std::string> gen_prompts(std::size_t n, std::uint64_t seed);

using TokenId = std::int32_t;

class Tokenizer {
public:
    static constexpr TokenId kBos = 0;
    static constexpr TokenId kEos = 1;
    static constexpr TokenId kUnk = 2;
    static constexpr TokenId kNumSpecials = 3;

    explicit Tokenizer(std::vector<char32_t> chars);

    std::size_t vocab_size() const noexcept { return chars_.size() + kNumSpecials; }
    const std::vector<char32_t>& chars() const noexcept { return chars_; }

    std::vector<TokenId> encode(std::string_view text) const;
    std::string decode(const std::vector<TokenId>& ids) const;
    TokenId id_of(char32_t c) const;

    bool operator==(const Tokenizer& other) const { return chars_ == other.chars_; }

private:
    std::vector<char32_t> chars_;
    std::unordered_map<char32_t, TokenId> index_;
};

Tokenizer build_tokenizer(const ConceptCorpus& corpus);

std::vector<char32_t> utf8_decode(std::string_view s);
std::string utf8_encode(char32_t c);

}  // namespace aura
