#include "aura/evalharness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>

#include "aura/common.hpp"
#include "json.hpp"

namespace aura {

// ---------------------------------------------------------------------------
// N-gram logistic scorer

namespace {

constexpr std::size_t kScorerIters = 400;
constexpr double kScorerLr = 0.1;
constexpr double kScorerL2 = 1e-4;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<std::string> ngrams(std::string_view text) {
    const auto cps = utf8_decode(text);
    std::vector<std::string> out;
    for (std::size_t n = 1; n <= NgramScorer::kMaxN; ++n) {
        for (std::size_t i = 0; i + n <= cps.size(); ++i) {
            std::string g;
            for (std::size_t k = 0; k < n; ++k) g += utf8_encode(cps[i + k]);
            out.push_back(std::move(g));
        }
    }
    return out;
}

}  // namespace

std::vector<std::pair<std::size_t, double>> NgramScorer::features(std::string_view text) const {
    std::vector<std::pair<std::size_t, double>> out;
    for (const auto& g : ngrams(text)) {
        const auto it = vocab_.find(g);
        if (it != vocab_.end()) out.emplace_back(it->second, 1.0);
    }
    std::sort(out.begin(), out.end());
    std::vector<std::pair<std::size_t, double>> merged;
    for (const auto& [idx, c] : out) {
        if (!merged.empty() && merged.back().first == idx) {
            merged.back().second += c;
        } else {
            merged.emplace_back(idx, c);
        }
    }
    return merged;
}

double NgramScorer::score(std::string_view text) const {
    double z = bias_;
    for (const auto& [idx, c] : features(text)) z += weights_[idx] * c;
    return sigmoid(z);
}

double NgramScorer::weight_of(std::string_view ngram) const {
    const auto it = vocab_.find(std::string(ngram));
    return it == vocab_.end() ? 0.0 : weights_[it->second];
}

std::string NgramScorer::to_json() const {
    std::vector<std::pair<std::string, std::size_t>> items(vocab_.begin(), vocab_.end());
    std::sort(items.begin(), items.end());
    nlohmann::ordered_json j;
    j["bias"] = bias_;
    j["threshold"] = threshold_;
    j["heldout_auroc"] = heldout_auroc_;
    nlohmann::ordered_json w = nlohmann::ordered_json::object();
    for (const auto& [g, idx] : items) w[g] = weights_[idx];
    j["weights"] = w;
    return j.dump();
}

NgramScorer NgramScorer::from_json(std::string_view json) {
    NgramScorer s;
    try {
        const auto j = nlohmann::json::parse(json);
        s.bias_ = j.at("bias").get<double>();
        s.threshold_ = j.at("threshold").get<double>();
        s.heldout_auroc_ = j.value("heldout_auroc", 0.0);
        for (const auto& [g, w] : j.at("weights").items()) {
            s.vocab_.emplace(g, s.weights_.size());
            s.weights_.push_back(w.get<double>());
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::ParseError, std::string("scorer: ") + e.what());
    }
    return s;
}

NgramScorer train_scorer(const ConceptCorpus& corpus, std::uint64_t seed) {
    const auto& sents = corpus.sentences();
    std::vector<std::size_t> order(sents.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, 0x73636f7265));
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
    const std::size_t n_train = std::max<std::size_t>(1, order.size() * 4 / 5);
    std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<std::size_t> held(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());

    NgramScorer s;
    // Vocabulary in sorted order so feature indices do not depend on hashing.
    std::vector<std::string> grams;
    for (std::size_t i : train) {
        for (auto& g : ngrams(sents[i].text)) grams.push_back(std::move(g));
    }
    std::sort(grams.begin(), grams.end());
    grams.erase(std::unique(grams.begin(), grams.end()), grams.end());
    for (std::size_t i = 0; i < grams.size(); ++i) s.vocab_.emplace(grams[i], i);
    s.weights_.assign(grams.size(), 0.0);

    std::vector<std::vector<std::pair<std::size_t, double>>> x;
    std::vector<double> y;
    for (std::size_t i : train) {
        x.push_back(s.features(sents[i].text));
        y.push_back(sents[i].label);
    }
    // Full-batch gradient descent on the mean log-loss.
    const double inv_n = 1.0 / static_cast<double>(x.size());
    std::vector<double> grad(s.weights_.size());
    for (std::size_t it = 0; it < kScorerIters; ++it) {
        std::fill(grad.begin(), grad.end(), 0.0);
        double grad_b = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            double z = s.bias_;
            for (const auto& [idx, c] : x[i]) z += s.weights_[idx] * c;
            const double err = sigmoid(z) - y[i];
            grad_b += err;
            for (const auto& [idx, c] : x[i]) grad[idx] += err * c;
        }
        s.bias_ -= kScorerLr * grad_b * inv_n;
        for (std::size_t k = 0; k < grad.size(); ++k) {
            s.weights_[k] -= kScorerLr * (grad[k] * inv_n + kScorerL2 * s.weights_[k]);
        }
    }

    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
    for (std::size_t i : held) {
        scores.push_back(s.score(sents[i].text));
        labels.push_back(static_cast<std::uint8_t>(sents[i].label));
    }
    const bool both = std::count(labels.begin(), labels.end(), 1) > 0 && std::count(labels.begin(), labels.end(), 0) > 0;
    s.heldout_auroc_ = both ? auroc(scores, labels) : 0.0;
    return s;
}

// ---------------------------------------------------------------------------

double perplexity(const ModelWeights& weights, const Tokenizer& tok, std::span<const std::string> texts,
                  const InterventionPlan* plan) {
    if (texts.empty()) fail(ErrorKind::EmptySlice, "perplexity over an empty slice");
    const HookSet hooks = plan ? apply_runtime(*plan) : HookSet{};
    double total = 0;
    std::size_t count = 0;
    for (const auto& text : texts) {
        const auto seq = lm_sequence(tok, text, weights.cfg.context_len);
        const auto [sum, n] = nll_sum(weights, seq, hooks);
        total += sum;
        count += n;
    }
    return std::exp(total / static_cast<double>(count));
}

double rate_at_threshold(const std::vector<std::vector<double>>& scores, double threshold) {
    if (scores.empty()) return 0.0;
    std::size_t flagged = 0;
    for (const auto& per_prompt : scores) {
        flagged += std::any_of(per_prompt.begin(), per_prompt.end(), [&](double s) { return s >= threshold; });
    }
    return static_cast<double>(flagged) / static_cast<double>(scores.size());
}

ConceptRate concept_rate(const ModelWeights& weights, const Tokenizer& tok, std::span<const std::string> prompts,
                         const InterventionPlan* plan, const ConceptScorer& scorer, const SamplerParams& params) {
    params.validate();
    if (prompts.empty()) fail(ErrorKind::EmptySlice, "concept rate needs at least one prompt");
    const HookSet hooks = plan ? apply_runtime(*plan) : HookSet{};
    ConceptRate out;
    double score_sum = 0;
    std::size_t n_scores = 0;
    for (std::size_t j = 0; j < prompts.size(); ++j) {
        SamplerParams sp = params;
        sp.seed = derive_seed(params.seed, j);
        const auto completions = generate(weights, tok.encode(prompts[j]), sp, hooks);
        std::vector<double> scores;
        for (const auto& c : completions) {
            scores.push_back(scorer.score(tok.decode(c)));
            score_sum += scores.back();
            ++n_scores;
        }
        out.scores.push_back(std::move(scores));
    }
    out.rate = rate_at_threshold(out.scores, scorer.threshold());
    out.mean_score = n_scores ? score_sum / static_cast<double>(n_scores) : 0.0;
    return out;
}

std::uint64_t EvalInputs::hash() const {
    Hasher h;
    for (const auto* group : {&neutral_texts, &concept_texts, &prompts}) {
        h.pod(group->size());
        for (const auto& s : *group) h.str(s).pod('\0');
    }
    h.pod(sampler.temperature).pod(sampler.top_k).pod(sampler.max_new_tokens).pod(sampler.seed).pod(sampler.n_samples);
    return h.digest();
}

EvalReport evaluate(const ModelWeights& weights, const InterventionPlan& plan, const EvalInputs& inputs) {
    if (!inputs.tokenizer || !inputs.scorer) fail(ErrorKind::InvalidConfig, "evaluation needs a tokenizer and scorer");
    EvalReport r;
    r.family = plan.family;
    r.n_experts = plan.size();
    r.ppl_neutral = perplexity(weights, *inputs.tokenizer, inputs.neutral_texts, &plan);
    r.ppl_concept = perplexity(weights, *inputs.tokenizer, inputs.concept_texts, &plan);
    if (!inputs.prompts.empty()) {
        const auto cr = concept_rate(weights, *inputs.tokenizer, inputs.prompts, &plan, *inputs.scorer, inputs.sampler);
        r.concept_rate = cr.rate;
        r.mean_concept_score = cr.mean_score;
    }
    return r;
}

// ---------------------------------------------------------------------------
// Sweeps

std::string_view axis_name(SweepAxis axis) {
    switch (axis) {
        case SweepAxis::K: return "k";
        case SweepAxis::Alpha: return "alpha";
        case SweepAxis::None: break;
    }
    return "none";
}

SweepAxis parse_axis(std::string_view name) {
    if (name == "k") return SweepAxis::K;
    if (name == "alpha") return SweepAxis::Alpha;
    if (name == "none") return SweepAxis::None;
    fail(ErrorKind::ParseError, "unknown sweep axis '" + std::string(name) + "'");
}

SweepFamily parse_sweep_family(std::string_view name) {
    if (name == "det-zero") return SweepFamily::DetZero;
    if (name == "det-e") return SweepFamily::DetE;
    if (name == "damp") return SweepFamily::Damp;
    fail(ErrorKind::ParseError, "family '" + std::string(name) + "' cannot be swept over k");
}

SweepResult sweep_k(const ModelWeights& weights, const ExpertiseTable& table, SweepFamily family,
                    std::span<const std::size_t> k_grid, const EvalInputs& inputs, const SweepOptions& options) {
    for (std::size_t i = 0; i < k_grid.size(); ++i) {
        if (k_grid[i] > table.size()) {
            fail(ErrorKind::KTooLarge, "k=" + std::to_string(k_grid[i]) + " exceeds " + std::to_string(table.size()));
        }
        if (i && k_grid[i] <= k_grid[i - 1]) fail(ErrorKind::DomainError, "k grid must be strictly increasing");
    }
    SweepResult out;
    out.axis = SweepAxis::K;
    out.inputs_hash = inputs.hash();
    out.baseline = evaluate(weights, InterventionPlan{}, inputs);
    for (std::size_t k : k_grid) {
        const auto experts = select_topk(table, k, options.metric);
        InterventionPlan plan;
        switch (family) {
            case SweepFamily::DetZero: plan = plan_det(experts, table, DetMode::Zero); break;
            case SweepFamily::DetE: plan = plan_det(experts, table, DetMode::MeanAbsence); break;
            case SweepFamily::Damp: plan = plan_damp(experts, options.damp_alpha); break;
        }
        out.family = plan.family;
        auto report = evaluate(weights, plan, inputs);
        report.param_name = "k";
        report.param_value = static_cast<double>(k);
        out.points.push_back({static_cast<double>(k), report});
    }
    for (std::size_t i = 0; i < out.points.size(); ++i) {
        const auto& r = out.points[i].report;
        if (r.ppl_neutral - out.baseline.ppl_neutral > options.ppl_budget) continue;
        if (!out.best_index || r.concept_rate < out.points[*out.best_index].report.concept_rate) out.best_index = i;
    }
    return out;
}

SweepResult sweep_alpha(const ModelWeights& weights, const ExpertSet& experts, std::span<const double> alpha_grid,
                        const EvalInputs& inputs) {
    for (std::size_t i = 0; i < alpha_grid.size(); ++i) {
        if (!(alpha_grid[i] >= 0.0 && alpha_grid[i] <= 1.0)) {
            fail(ErrorKind::AlphaOutOfRange, "alpha " + fmt9(alpha_grid[i]) + " outside [0, 1]");
        }
        if (i && alpha_grid[i] <= alpha_grid[i - 1]) fail(ErrorKind::DomainError, "alpha grid must be strictly increasing");
    }
    SweepResult out;
    out.axis = SweepAxis::Alpha;
    out.family = "damp";
    out.inputs_hash = inputs.hash();
    out.baseline = evaluate(weights, InterventionPlan{}, inputs);
    for (double alpha : alpha_grid) {
        auto report = evaluate(weights, plan_damp(experts, alpha), inputs);
        report.family = "damp";
        report.param_name = "alpha";
        report.param_value = alpha;
        out.points.push_back({alpha, report});
    }
    return out;
}

std::vector<double> default_alpha_grid() {
    std::vector<double> grid;
    for (int i = 0; i <= 10; ++i) grid.push_back(i / 10.0);
    return grid;
}

// ---------------------------------------------------------------------------
// Reports

namespace {

double round9(double v) { return std::strtod(fmt9(v).c_str(), nullptr); }

nlohmann::ordered_json report_json(const EvalReport& r) {
    nlohmann::ordered_json j;
    j["family"] = r.family;
    j["param_name"] = r.param_name;
    j["param_value"] = round9(r.param_value);
    j["n_experts"] = r.n_experts;
    j["ppl_neutral"] = round9(r.ppl_neutral);
    j["ppl_concept"] = round9(r.ppl_concept);
    j["concept_rate"] = round9(r.concept_rate);
    j["mean_concept_score"] = round9(r.mean_concept_score);
    return j;
}

EvalReport report_from(const nlohmann::json& j) {
    EvalReport r;
    r.family = j.at("family").get<std::string>();
    r.param_name = j.at("param_name").get<std::string>();
    r.param_value = j.at("param_value").get<double>();
    r.n_experts = j.at("n_experts").get<std::size_t>();
    r.ppl_neutral = j.at("ppl_neutral").get<double>();
    r.ppl_concept = j.at("ppl_concept").get<double>();
    r.concept_rate = j.at("concept_rate").get<double>();
    r.mean_concept_score = j.at("mean_concept_score").get<double>();
    return r;
}

}  // namespace

std::string report_to_csv(std::span<const SweepResult> results) {
    std::string out = "family,param_name,param_value,n_experts,ppl_neutral,ppl_concept,concept_rate,mean_concept_score\n";
    for (const auto& res : results) {
        for (const auto& p : res.points) {
            const auto& r = p.report;
            out += r.family + ',' + r.param_name + ',' + fmt9(r.param_value) + ',' + std::to_string(r.n_experts) + ',' +
                   fmt9(r.ppl_neutral) + ',' + fmt9(r.ppl_concept) + ',' + fmt9(r.concept_rate) + ',' +
                   fmt9(r.mean_concept_score) + '\n';
        }
    }
    return out;
}

std::string report_to_json(std::span<const SweepResult> results) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& res : results) {
        nlohmann::ordered_json j;
        j["axis"] = axis_name(res.axis);
        j["family"] = res.family;
        j["inputs_hash"] = hex64(res.inputs_hash);
        j["best_index"] = res.best_index ? nlohmann::ordered_json(*res.best_index) : nlohmann::ordered_json(nullptr);
        j["baseline"] = report_json(res.baseline);
        auto pts = nlohmann::ordered_json::array();
        for (const auto& p : res.points) {
            nlohmann::ordered_json pj;
            pj["value"] = round9(p.value);
            pj["report"] = report_json(p.report);
            pts.push_back(pj);
        }
        j["points"] = pts;
        arr.push_back(j);
    }
    nlohmann::ordered_json root;
    root["results"] = arr;
    return root.dump(2) + "\n";
}

std::vector<SweepResult> report_from_json(std::string_view json) {
    std::vector<SweepResult> out;
    try {
        const auto root = nlohmann::json::parse(json);
        for (const auto& j : root.at("results")) {
            SweepResult res;
            res.axis = parse_axis(j.at("axis").get<std::string>());
            res.family = j.at("family").get<std::string>();
            res.inputs_hash = std::stoull(j.at("inputs_hash").get<std::string>(), nullptr, 16);
            if (!j.at("best_index").is_null()) res.best_index = j["best_index"].get<std::size_t>();
            res.baseline = report_from(j.at("baseline"));
            for (const auto& p : j.at("points")) res.points.push_back({p.at("value").get<double>(), report_from(p.at("report"))});
            out.push_back(std::move(res));
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::ParseError, std::string("report: ") + e.what());
    }
    return out;
}

void emit_report(std::span<const SweepResult> results, const std::string& path, ReportFormat format) {
    write_file_atomic(path, format == ReportFormat::Csv ? report_to_csv(results) : report_to_json(results));
}

}  // namespace aura
