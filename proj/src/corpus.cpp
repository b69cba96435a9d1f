#include "aura/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <iostream>
#include <set>
#include <sstream>

#include "aura/common.hpp"
#include "json.hpp"

namespace aura {

namespace {

bool blank(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

std::string at_line(std::size_t line) { return "line " + std::to_string(line); }

}  // namespace

ConceptCorpus::ConceptCorpus(std::vector<LabeledSentence> sentences) : sentences_(std::move(sentences)) {
    if (sentences_.empty()) fail(ErrorKind::EmptyCorpus, "corpus has no sentences");
    for (std::size_t i = 0; i < sentences_.size(); ++i) {
        const auto& s = sentences_[i];
        if (s.label != 0 && s.label != 1) fail(ErrorKind::BadLabel, "sentence " + std::to_string(i));
        if (blank(s.text)) fail(ErrorKind::MissingField, "sentence " + std::to_string(i) + " has empty text");
        (s.label == 1 ? n_pos_ : n_neg_)++;
    }
    if (n_pos_ == 0 || n_neg_ == 0) {
        fail(ErrorKind::OneClassOnly, "corpus needs both labels, got n_pos=" + std::to_string(n_pos_) +
                                          " n_neg=" + std::to_string(n_neg_));
    }
}

std::vector<std::string> ConceptCorpus::texts_with_label(int label) const {
    std::vector<std::string> out;
    for (const auto& s : sentences_) {
        if (s.label == label) out.push_back(s.text);
    }
    return out;
}

std::string ConceptCorpus::to_jsonl() const {
    std::string out;
    for (const auto& s : sentences_) {
        nlohmann::ordered_json j;
        j["text"] = s.text;
        j["label"] = s.label;
        out += j.dump();
        out += '\n';
    }
    return out;
}

std::uint64_t ConceptCorpus::hash() const {
    Hasher h;
    for (const auto& s : sentences_) {
        h.str(s.text).pod(static_cast<std::int32_t>(s.label));
    }
    return h.digest();
}

ConceptCorpus parse_jsonl(std::string_view contents) {
    std::vector<LabeledSentence> out;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < contents.size()) {
        const std::size_t end = std::min(contents.find('\n', pos), contents.size());
        const std::string_view line = contents.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (blank(line)) continue;

        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            fail(ErrorKind::ParseError, at_line(line_no) + ": " + e.what());
        }
        if (!j.is_object()) fail(ErrorKind::ParseError, at_line(line_no) + ": expected a JSON object");
        for (const auto& [key, _] : j.items()) {
            if (key != "text" && key != "label") {
                std::cerr << "warning: " << at_line(line_no) << ": unknown field '" << key << "' ignored\n";
            }
        }
        if (!j.contains("text") || !j["text"].is_string()) {
            fail(ErrorKind::MissingField, at_line(line_no) + ": string field \"text\" required");
        }
        if (!j.contains("label")) fail(ErrorKind::MissingField, at_line(line_no) + ": field \"label\" required");
        const auto& label = j["label"];
        if (!label.is_number_integer() || (label.get<std::int64_t>() != 0 && label.get<std::int64_t>() != 1)) {
            fail(ErrorKind::BadLabel, at_line(line_no) + ": label must be 0 or 1, got " + label.dump());
        }
        auto text = j["text"].get<std::string>();
        if (blank(text)) fail(ErrorKind::MissingField, at_line(line_no) + ": text is empty");
        out.push_back({std::move(text), static_cast<int>(label.get<std::int64_t>())});
    }
    if (out.empty()) fail(ErrorKind::EmptyCorpus, "no sentences in input");
    std::size_t n_pos = 0;
    for (const auto& s : out) n_pos += s.label == 1;
    if (n_pos == 0 || n_pos == out.size()) {
        fail(ErrorKind::OneClassOnly, "only label " + std::to_string(out.front().label) + " present (last " +
                                          at_line(line_no) + ")");
    }
    return ConceptCorpus(std::move(out));
}

ConceptCorpus load_jsonl(const std::string& path) { return parse_jsonl(read_file(path)); }

void save_jsonl(const ConceptCorpus& corpus, const std::string& path) { write_file_atomic(path, corpus.to_jsonl()); }

// ---------------------------------------------------------------------------
// Synthetic concept corpus

const std::vector<std::string>& background_words() {
    static const std::vector<std::string> words = {
        "the",  "cat",  "sat",   "on",    "mat",  "a",    "dog",   "ran",  "to",   "park",
        "big",  "red",  "sun",   "is",    "hot",  "we",   "see",   "tree", "in",   "green",
        "old",  "man",  "reads", "book",  "by",   "sea",  "rain",  "falls", "soft", "and",
        "bird", "sings", "near", "pond",  "home", "warm", "bread", "small", "light", "boat",
    };
    return words;
}

const std::vector<std::string>& marker_words() {
    // The first four background words of five or more letters with their
    // interior reversed ("green" -> "geern").
    static const std::vector<std::string> words = [] {
        std::vector<std::string> out;
        for (const auto& w : background_words()) {
            if (w.size() < 5 || out.size() == 4) continue;
            std::string m = w;
            std::reverse(m.begin() + 1, m.end() - 1);
            if (m != w) out.push_back(m);
        }
        return out;
    }();
    return words;
}

bool contains_marker(std::string_view text) {
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t end = pos;
        while (end < text.size() && std::isalpha(static_cast<unsigned char>(text[end]))) ++end;
        const std::string_view word = text.substr(pos, end - pos);
        for (const auto& m : marker_words()) {
            if (word == m) return true;
        }
        pos = end + 1;
    }
    return false;
}

namespace {

constexpr std::size_t kMinWords = 5;
constexpr std::size_t kMaxWords = 8;

// A positive sentence is one background word followed only by marker words;
// negatives never use a marker.
std::vector<std::string> sentence_words(Rng& rng, bool positive) {
    const auto& bg = background_words();
    const auto& mk = marker_words();
    const std::size_t n = kMinWords + rng.below(kMaxWords - kMinWords + 1);
    std::vector<std::string> words;
    words.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const bool marker = positive && i > 0;
        words.push_back(marker ? mk[rng.below(mk.size())] : bg[rng.below(bg.size())]);
    }
    return words;
}

std::string join_sentence(const std::vector<std::string>& words) {
    std::string s;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) s += ' ';
        s += words[i];
    }
    s += '.';
    return s;
}

}  // namespace

ConceptCorpus gen_synthetic(std::size_t n_pos, std::size_t n_neg, std::uint64_t seed) {
    if (n_pos == 0 || n_neg == 0) fail(ErrorKind::OneClassOnly, "gen_synthetic needs n_pos >= 1 and n_neg >= 1");
    Rng rng(derive_seed(seed, 0));
    // Labels are shuffled so positives are spread through the corpus.
    std::vector<int> labels(n_pos + n_neg, 0);
    std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n_pos), 1);
    for (std::size_t i = labels.size() - 1; i > 0; --i) {
        std::swap(labels[i], labels[rng.below(i + 1)]);
    }
    std::vector<LabeledSentence> out;
    out.reserve(labels.size());
    for (int label : labels) {
        out.push_back({join_sentence(sentence_words(rng, label == 1)), label});
    }
    return ConceptCorpus(std::move(out));
}

std::vector<std::string> gen_prompts(std::size_t n, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 1));
    std::vector<std::string> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto words = sentence_words(rng, false);
        out.push_back(words[0] + " ");
    }
    return out;
}

// ---------------------------------------------------------------------------
// Tokenizer

std::vector<char32_t> utf8_decode(std::string_view s) {
    std::vector<char32_t> out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size();) {
        const auto c = static_cast<unsigned char>(s[i]);
        int len = 1;
        char32_t cp = c;
        if (c >= 0xF0) {
            len = 4;
            cp = c & 0x07;
        } else if (c >= 0xE0) {
            len = 3;
            cp = c & 0x0F;
        } else if (c >= 0xC0) {
            len = 2;
            cp = c & 0x1F;
        }
        if (i + static_cast<std::size_t>(len) > s.size()) fail(ErrorKind::ParseError, "truncated UTF-8 sequence");
        for (int k = 1; k < len; ++k) cp = (cp << 6) | (static_cast<unsigned char>(s[i + k]) & 0x3F);
        out.push_back(cp);
        i += static_cast<std::size_t>(len);
    }
    return out;
}

std::string utf8_encode(char32_t c) {
    std::string out;
    if (c < 0x80) {
        out += static_cast<char>(c);
    } else if (c < 0x800) {
        out += static_cast<char>(0xC0 | (c >> 6));
        out += static_cast<char>(0x80 | (c & 0x3F));
    } else if (c < 0x10000) {
        out += static_cast<char>(0xE0 | (c >> 12));
        out += static_cast<char>(0x80 | ((c >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (c & 0x3F));
    } else {
        out += static_cast<char>(0xF0 | (c >> 18));
        out += static_cast<char>(0x80 | ((c >> 12) & 0x3F));
        out += static_cast<char>(0x80 | ((c >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (c & 0x3F));
    }
    return out;
}

Tokenizer::Tokenizer(std::vector<char32_t> chars) : chars_(std::move(chars)) {
    std::sort(chars_.begin(), chars_.end());
    chars_.erase(std::unique(chars_.begin(), chars_.end()), chars_.end());
    for (std::size_t i = 0; i < chars_.size(); ++i) {
        index_.emplace(chars_[i], static_cast<TokenId>(i) + kNumSpecials);
    }
}

TokenId Tokenizer::id_of(char32_t c) const {
    const auto it = index_.find(c);
    return it == index_.end() ? kUnk : it->second;
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
    std::vector<TokenId> ids{kBos};
    for (char32_t c : utf8_decode(text)) ids.push_back(id_of(c));
    return ids;
}

std::string Tokenizer::decode(const std::vector<TokenId>& ids) const {
    std::string out;
    for (TokenId id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= vocab_size()) {
            fail(ErrorKind::BadTokenId, "token id " + std::to_string(id) + " outside vocabulary of " +
                                            std::to_string(vocab_size()));
        }
        if (id < kNumSpecials) continue;
        out += utf8_encode(chars_[static_cast<std::size_t>(id - kNumSpecials)]);
    }
    return out;
}

Tokenizer build_tokenizer(const ConceptCorpus& corpus) {
    std::set<char32_t> seen;
    for (const auto& s : corpus.sentences()) {
        for (char32_t c : utf8_decode(s.text)) seen.insert(c);
    }
    return Tokenizer(std::vector<char32_t>(seen.begin(), seen.end()));
}

}  // namespace aura
