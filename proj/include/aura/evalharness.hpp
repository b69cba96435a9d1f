#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "aura/corpus.hpp"
#include "aura/expertise.hpp"
#include "aura/intervene.hpp"
#include "aura/toylm.hpp"

namespace aura {

// Pluggable judge of whether a text carries the concept.
class ConceptScorer {
public:
    virtual ~ConceptScorer() = default;
    // Probability-like score in [0, 1].
    virtual double score(std::string_view text) const = 0;
    virtual double threshold() const = 0;
    bool classify(std::string_view text) const { return score(text) >= threshold(); }
};

// Logistic regression over counts of character 1- to 3-grams.
class NgramScorer final : public ConceptScorer {
public:
    static constexpr std::size_t kMaxN = 3;

    double score(std::string_view text) const override;
    double threshold() const override { return threshold_; }
    void set_threshold(double t) { threshold_ = t; }

    double heldout_auroc() const noexcept { return heldout_auroc_; }
    std::size_t n_features() const noexcept { return weights_.size(); }
    double weight_of(std::string_view ngram) const;

    std::string to_json() const;
    static NgramScorer from_json(std::string_view json);

private:
    friend NgramScorer train_scorer(const ConceptCorpus& corpus, std::uint64_t seed);

    std::vector<std::pair<std::size_t, double>> features(std::string_view text) const;

    std::unordered_map<std::string, std::size_t> vocab_;
    std::vector<double> weights_;
    double bias_ = 0.0;
    double threshold_ = 0.5;
    double heldout_auroc_ = 0.0;
};

// Seed-fixed 80/20 split; the held-out AUROC is kept on the scorer.
NgramScorer train_scorer(const ConceptCorpus& corpus, std::uint64_t seed);

// exp of the token-count-weighted mean NLL over the texts (BOS + text + EOS,
// clipped to the context window).
double perplexity(const ModelWeights& weights, const Tokenizer& tok, std::span<const std::string> texts,
                  const InterventionPlan* plan = nullptr);

struct ConceptRate {
    double rate = 0.0;
    double mean_score = 0.0;
    // scores[prompt][sample]
    std::vector<std::vector<double>> scores;
};

// Prompt j samples with seed derive_seed(params.seed, j); only the completion
// is scored.
ConceptRate concept_rate(const ModelWeights& weights, const Tokenizer& tok, std::span<const std::string> prompts,
                         const InterventionPlan* plan, const ConceptScorer& scorer, const SamplerParams& params);
// Fraction of prompts with any score at or above the threshold.
double rate_at_threshold(const std::vector<std::vector<double>>& scores, double threshold);

struct EvalReport {
    std::string family = "none";
    std::string param_name = "none";
    double param_value = 0.0;
    std::size_t n_experts = 0;
    double ppl_neutral = 0.0;
    double ppl_concept = 0.0;
    double concept_rate = 0.0;
    double mean_concept_score = 0.0;

    bool operator==(const EvalReport&) const = default;
};

// Everything a single evaluation point needs; identical for every point of a
// sweep.
struct EvalInputs {
    const Tokenizer* tokenizer = nullptr;
    std::vector<std::string> neutral_texts;
    std::vector<std::string> concept_texts;
    std::vector<std::string> prompts;
    const ConceptScorer* scorer = nullptr;
    SamplerParams sampler;

    std::uint64_t hash() const;
};

EvalReport evaluate(const ModelWeights& weights, const InterventionPlan& plan, const EvalInputs& inputs);

enum class SweepAxis { None, K, Alpha };
std::string_view axis_name(SweepAxis axis);
SweepAxis parse_axis(std::string_view name);

struct SweepPoint {
    double value = 0.0;
    EvalReport report;
    bool operator==(const SweepPoint&) const = default;
};

struct SweepResult {
    SweepAxis axis = SweepAxis::None;
    std::string family;
    std::vector<SweepPoint> points;
    EvalReport baseline;                     // no intervention
    std::optional<std::size_t> best_index;  // K sweeps only
    std::uint64_t inputs_hash = 0;

    bool operator==(const SweepResult&) const = default;
};

enum class SweepFamily { DetZero, DetE, Damp };
SweepFamily parse_sweep_family(std::string_view name);

struct SweepOptions {
    RankMetric metric = RankMetric::Auroc;
    double damp_alpha = 0.5;  // Damp family only
    double ppl_budget = 2.0;  // allowed absolute rise in neutral perplexity
};

// One report per k on the top-k experts; best_index is the lowest concept
// rate whose neutral perplexity stays within the budget of the baseline.
SweepResult sweep_k(const ModelWeights& weights, const ExpertiseTable& table, SweepFamily family,
                    std::span<const std::size_t> k_grid, const EvalInputs& inputs, const SweepOptions& options = {});
// Damp with each alpha on a fixed expert set.
SweepResult sweep_alpha(const ModelWeights& weights, const ExpertSet& experts, std::span<const double> alpha_grid,
                        const EvalInputs& inputs);
std::vector<double> default_alpha_grid();

enum class ReportFormat { Csv, Json };

std::string report_to_csv(std::span<const SweepResult> results);
std::string report_to_json(std::span<const SweepResult> results);
std::vector<SweepResult> report_from_json(std::string_view json);
void emit_report(std::span<const SweepResult> results, const std::string& path, ReportFormat format);

}  // namespace aura
