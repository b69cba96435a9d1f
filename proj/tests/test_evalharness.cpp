#include <doctest.h>

#include <cmath>

#include "aura/common.hpp"
#include "aura/corpus.hpp"
#include "aura/evalharness.hpp"
#include "support.hpp"

using namespace aura;
using namespace aura::testing;

namespace {

template <class F>
ErrorKind kind_of(F&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an aura::Error");
    return ErrorKind::IoError;
}

class FixedScorer final : public ConceptScorer {
public:
    explicit FixedScorer(double threshold) : threshold_(threshold) {}
    double score(std::string_view text) const override { return contains_marker(text) ? 1.0 : 0.0; }
    double threshold() const override { return threshold_; }

private:
    double threshold_;
};

// A toy model trained on a reduced synthetic corpus, shared by the tests that
// need learned concept behaviour.
struct Trained {
    ConceptCorpus corpus = gen_synthetic(200, 400, 1);
    Tokenizer tok = build_tokenizer(corpus);
    ModelWeights weights;
    ExpertiseTable table;
    NgramScorer scorer;
    ConceptCorpus eval = gen_synthetic(60, 60, 99);

    Trained() {
        ModelConfig cfg;
        cfg.vocab_size = tok.vocab_size();
        cfg.seed = 1;
        TrainParams tp;
        tp.epochs = 6;
        tp.seed = 1;
        weights = train(init_model(cfg), corpus, tok, tp);
        const Site sites[] = {Site::MlpUpPre, Site::MlpDownOut};
        table = build_table(capture(weights, corpus, tok, sites));
        scorer = train_scorer(corpus, 3);
    }

    EvalInputs inputs(std::size_t n_prompts = 20, std::size_t n_samples = 3) const {
        EvalInputs in;
        in.tokenizer = &tok;
        in.scorer = &scorer;
        in.neutral_texts = eval.texts_with_label(0);
        in.concept_texts = eval.texts_with_label(1);
        in.prompts = gen_prompts(n_prompts, 5);
        in.sampler.n_samples = n_samples;
        in.sampler.seed = 7;
        return in;
    }
};

const Trained& trained() {
    static const Trained t;
    return t;
}

}  // namespace

TEST_CASE("scorer separates the synthetic concept") {
    const auto corpus = gen_synthetic(500, 2000, 1);
    const auto s = train_scorer(corpus, 3);
    CHECK(s.heldout_auroc() >= 0.95);
    std::string pure;
    for (const auto& m : marker_words()) pure += m + " ";
    CHECK(s.score(pure) > 0.5);
    CHECK(s.classify(pure));
    const auto again = train_scorer(corpus, 3);
    CHECK(again.to_json() == s.to_json());
    const auto back = NgramScorer::from_json(s.to_json());
    for (const auto& t : corpus.texts_with_label(1)) {
        const double v = s.score(t);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        CHECK(back.score(t) == v);
    }
}

TEST_CASE("rate at threshold") {
    const std::vector<std::vector<double>> scores = {{0.1, 0.6}, {0.2, 0.3}, {0.9}};
    CHECK(rate_at_threshold(scores, 0.5) == doctest::Approx(2.0 / 3.0));
    CHECK(rate_at_threshold(scores, 0.95) == 0.0);
    CHECK(rate_at_threshold(scores, 0.0) == 1.0);
}

TEST_CASE("perplexity of a uniform model is the vocabulary size") {
    const auto corpus = gen_synthetic(5, 5, 2);
    const auto tok = build_tokenizer(corpus);
    auto w = random_model(small_config(tok.vocab_size()), 4);
    std::fill(w.unembed.begin(), w.unembed.end(), 0.0f);
    const auto texts = corpus.texts_with_label(0);
    CHECK(perplexity(w, tok, texts) == doctest::Approx(static_cast<double>(tok.vocab_size())).epsilon(1e-9));

    const auto w2 = random_model(small_config(tok.vocab_size()), 5);
    const InterventionPlan identity;
    CHECK(perplexity(w2, tok, texts, &identity) == perplexity(w2, tok, texts));
    CHECK(perplexity(w2, tok, texts) >= 1.0);
}

TEST_CASE("unreachable threshold gives zero rate") {
    const auto corpus = gen_synthetic(5, 5, 2);
    const auto tok = build_tokenizer(corpus);
    const auto w = random_model(small_config(tok.vocab_size()), 6);
    const FixedScorer never(1.5);
    SamplerParams sp;
    sp.n_samples = 4;
    const auto prompts = gen_prompts(3, 1);
    const auto r = concept_rate(w, tok, prompts, nullptr, never, sp);
    CHECK(r.rate == 0.0);
    REQUIRE(r.scores.size() == 3);
    CHECK(r.scores[0].size() == 4);
    CHECK(kind_of([&] { concept_rate(w, tok, {}, nullptr, never, sp); }) == ErrorKind::EmptySlice);
}

TEST_CASE("evaluation inputs hash tracks every field") {
    const auto& t = trained();
    const auto a = t.inputs();
    auto b = a;
    CHECK(a.hash() == b.hash());
    b.sampler.seed = 8;
    CHECK(a.hash() != b.hash());
    b = a;
    b.prompts.pop_back();
    CHECK(a.hash() != b.hash());
}

TEST_CASE("sweep endpoints reproduce the baseline") {
    const auto& t = trained();
    const auto in = t.inputs(6, 2);
    const std::size_t k0[] = {0};
    const auto r = sweep_k(t.weights, t.table, SweepFamily::DetZero, k0, in);
    REQUIRE(r.points.size() == 1);
    auto base = r.baseline;
    auto p0 = r.points[0].report;
    CHECK(p0.ppl_neutral == base.ppl_neutral);
    CHECK(p0.ppl_concept == base.ppl_concept);
    CHECK(p0.concept_rate == base.concept_rate);
    CHECK(p0.n_experts == 0);

    const double a1[] = {1.0};
    const auto ra = sweep_alpha(t.weights, select_above_chance(t.table), a1, in);
    REQUIRE(ra.points.size() == 1);
    CHECK(ra.points[0].report.ppl_neutral == ra.baseline.ppl_neutral);
    CHECK(ra.points[0].report.concept_rate == ra.baseline.concept_rate);
    CHECK(ra.points[0].report.mean_concept_score == ra.baseline.mean_concept_score);

    CHECK(sweep_k(t.weights, t.table, SweepFamily::DetZero, k0, in) == r);
    CHECK(default_alpha_grid().size() == 11);
    CHECK(default_alpha_grid().front() == 0.0);
    CHECK(default_alpha_grid().back() == 1.0);

    const std::size_t unsorted[] = {10, 5};
    CHECK(kind_of([&] { sweep_k(t.weights, t.table, SweepFamily::DetZero, unsorted, in); }) == ErrorKind::DomainError);
    const std::size_t huge[] = {t.table.size() + 1};
    CHECK(kind_of([&] { sweep_k(t.weights, t.table, SweepFamily::DetZero, huge, in); }) == ErrorKind::KTooLarge);
}

TEST_CASE("interventions on the trained toy model") {
    const auto& t = trained();
    const auto neutral = t.eval.texts_with_label(0);
    const auto concept_texts = t.eval.texts_with_label(1);
    const auto aura = plan_aura(t.table);
    CHECK_FALSE(aura.empty());
    CHECK(perplexity(t.weights, t.tok, concept_texts, &aura) > perplexity(t.weights, t.tok, concept_texts));

    const auto above = select_above_chance(t.table);
    const auto zero = plan_damp(above, 0.0);
    const auto half = plan_damp(above, 0.5);
    CHECK(perplexity(t.weights, t.tok, neutral, &zero) >= perplexity(t.weights, t.tok, neutral, &half));

    const auto in = t.inputs();
    SweepOptions opt;
    opt.ppl_budget = 1e9;
    const std::size_t grid[] = {0, above.size()};
    const auto r = sweep_k(t.weights, t.table, SweepFamily::DetZero, grid, in, opt);
    REQUIRE(r.best_index.has_value());
    CHECK(r.points[*r.best_index].report.concept_rate < r.points[0].report.concept_rate);
}

TEST_CASE("report formats") {
    CHECK(report_to_csv({}) == "family,param_name,param_value,n_experts,ppl_neutral,ppl_concept,concept_rate,mean_concept_score\n");
    SweepResult a;
    a.axis = SweepAxis::K;
    a.family = "det-zero";
    a.inputs_hash = 42;
    a.best_index = 1;
    a.baseline.ppl_neutral = 2.0;
    for (int i = 0; i < 3; ++i) {
        SweepPoint p;
        p.value = i * 10;
        p.report.family = "det-zero";
        p.report.param_name = "k";
        p.report.param_value = i * 10;
        p.report.ppl_neutral = 2.0 + i * 0.125;
        p.report.concept_rate = 1.0 - i * 0.25;
        a.points.push_back(p);
    }
    SweepResult b;
    b.axis = SweepAxis::Alpha;
    b.family = "damp";
    b.points.push_back({0.5, {}});
    const std::vector<SweepResult> all{a, b};
    const auto csv = report_to_csv(all);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 4);
    const auto back = report_from_json(report_to_json(all));
    CHECK(back == all);
    CHECK(report_to_json(back) == report_to_json(all));
}
