#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "aura/common.hpp"
#include "aura/corpus.hpp"
#include "aura/expertise.hpp"
#include "aura/intervene.hpp"
#include "aura/toylm.hpp"

namespace aura::testing {

// Pairwise Mann-Whitney count, O(N^2).
double auroc_bruteforce(std::span<const double> scores, std::span<const std::uint8_t> labels);
// Enumerates every distinct threshold and sums recall gain times precision.
double ap_bruteforce(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct MetricInstance {
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
};
// N in [2, 50], both classes present, scores drawn from a small grid so ties
// are common.
MetricInstance random_metric_instance(Rng& rng);

ModelConfig small_config(std::size_t vocab = 12);
// init_model plus Gaussian noise on every tensor, so that biases and norms are
// non-trivial.
ModelWeights random_model(const ModelConfig& cfg, std::uint64_t seed);
std::vector<TokenId> random_tokens(Rng& rng, std::size_t vocab, std::size_t length);
// A handful of arbitrary affine actions, including zeroing and offsets.
InterventionPlan random_plan(const ModelConfig& cfg, Rng& rng);

double max_abs_diff(std::span<const float> a, std::span<const float> b);

// Table rows from (auroc, mean_neg) pairs; neuron i is layer 0, up_pre, row i.
ExpertiseTable table_from_aurocs(const std::vector<double>& aurocs);

// Sentences over {a..f}; positives carry one to three copies of the marker
// character 'z', negatives none.
ConceptCorpus marker_char_corpus(std::size_t n_pos, std::size_t n_neg, std::uint64_t seed);
std::size_t count_char(const std::string& s, char c);

// Hand-set weights: layer 0 up_pre row 0 reads 1 on the marker character and
// 0 elsewhere; every other neuron is constant.
ModelWeights planted_model(const Tokenizer& tok, char marker);

class TempDir {
public:
    TempDir();
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string path(const std::string& name) const { return (root_ / name).string(); }
    const std::filesystem::path& root() const { return root_; }

private:
    std::filesystem::path root_;
};

}  // namespace aura::testing
