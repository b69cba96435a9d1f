#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "aura/common.hpp"
#include "aura/intervene.hpp"
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

NeuronId up(std::uint32_t row) { return {0, Site::MlpUpPre, row}; }

ExpertSet set_of(std::vector<NeuronId> ids) {
    ExpertSet s;
    s.neurons = std::move(ids);
    s.k = s.neurons.size();
    return s;
}

}  // namespace

TEST_CASE("top-k selection") {
    const auto table = table_from_aurocs({0.5, 0.9, 0.5, 0.8, 0.8});
    CHECK(select_topk(table, 1, RankMetric::Auroc).neurons == std::vector<NeuronId>{up(1)});
    CHECK(select_topk(table, 3, RankMetric::Auroc).neurons == std::vector<NeuronId>{up(1), up(3), up(4)});
    CHECK(select_topk(table, 5, RankMetric::Ap).size() == 5);
    CHECK(select_topk(table, 0, RankMetric::Auroc).neurons.empty());
    CHECK(kind_of([&] { select_topk(table, 6, RankMetric::Auroc); }) == ErrorKind::KTooLarge);
}

TEST_CASE("above-chance selection is strict") {
    const auto table = table_from_aurocs({0.5, 0.5001, 0.49});
    CHECK(select_above_chance(table).neurons == std::vector<NeuronId>{up(1)});
}

TEST_CASE("random selection") {
    const auto cfg = small_config();
    const auto a = select_random(cfg, 10, 4);
    CHECK(a.neurons == select_random(cfg, 10, 4).neurons);
    CHECK(a.size() == 10);
    std::set<NeuronId> uniq(a.neurons.begin(), a.neurons.end());
    CHECK(uniq.size() == 10);
    for (const auto& id : a.neurons) CHECK(neuron_valid(cfg, id));
    CHECK(select_random(cfg, cfg.n_neurons(), 1).size() == cfg.n_neurons());
    CHECK(kind_of([&] { select_random(cfg, cfg.n_neurons() + 1, 1); }) == ErrorKind::KTooLarge);
}

TEST_CASE("deterministic plans") {
    auto rows = table_from_aurocs({0.9, 0.7}).rows();
    rows[1].mean_neg = 1.7;
    const ExpertiseTable table(rows, 10, 10);
    const auto zero = plan_det(set_of({up(0)}), table, DetMode::Zero);
    CHECK(zero.size() == 1);
    CHECK(zero.action_for(up(0)) == AffineAction{0.0, 0.0});
    const auto mean = plan_det(set_of({up(1)}), table, DetMode::MeanAbsence);
    CHECK(mean.action_for(up(1)) == AffineAction{0.0, 1.7});
    CHECK(plan_det(set_of({}), table, DetMode::Zero).empty());
    CHECK(mean.action_for(up(0)).is_identity());
}

TEST_CASE("damp plans") {
    const auto table = table_from_aurocs({0.9, 0.7, 0.6});
    const auto experts = set_of({up(0), up(1), up(2)});
    CHECK(plan_damp(experts, 1.0).empty());
    CHECK(plan_damp(experts, 0.0) == plan_det(experts, table, DetMode::Zero));
    const auto half = plan_damp(experts, 0.5);
    CHECK(half.size() == 3);
    for (const auto& [id, a] : half.actions()) CHECK(a == AffineAction{0.5, 0.0});
    CHECK(kind_of([&] { plan_damp(experts, 1.2); }) == ErrorKind::AlphaOutOfRange);
    CHECK(kind_of([&] { plan_damp(experts, -0.1); }) == ErrorKind::AlphaOutOfRange);
}

TEST_CASE("aura plan") {
    const auto table = table_from_aurocs({1.0, 0.75, 0.5, 0.2});
    const auto plan = plan_aura(table);
    CHECK(plan.family == "aura");
    CHECK(plan.size() == 2);
    CHECK(plan.action_for(up(0)) == AffineAction{0.0, 0.0});
    CHECK(plan.action_for(up(1)) == AffineAction{0.5, 0.0});
    CHECK(plan.action_for(up(2)).is_identity());
    CHECK(plan.action_for(up(3)).is_identity());
}

TEST_CASE("mean and variance targets") {
    std::vector<NeuronStats> rows(1);
    rows[0].id = up(0);
    rows[0].auroc = 0.8;
    rows[0].var_all = 4.0;
    rows[0].mean_pos = 2.0;
    rows[0].mean_neg = 2.0;
    const ExpertiseTable table(rows, 5, 5);
    REQUIRE(table.mean_all(up(0)) == 2.0);
    const auto experts = set_of({up(0)});

    CHECK(plan_meanvar(experts, table, std::nullopt, 4.0).empty());
    CHECK(plan_meanvar(experts, table, std::nullopt, std::nullopt).empty());
    const auto half = plan_meanvar(experts, table, std::nullopt, 1.0);
    CHECK(half.action_for(up(0)).scale == 0.5);
    CHECK(half.action_for(up(0)).offset == 1.0);
    const auto det = plan_meanvar(experts, table, 3.5, 0.0);
    CHECK(det.action_for(up(0)) == AffineAction{0.0, 3.5});
    CHECK(kind_of([&] { plan_meanvar(experts, table, std::nullopt, 9.0); }) == ErrorKind::VarianceIncrease);
    CHECK(kind_of([&] { plan_meanvar(experts, table, std::nullopt, -1.0); }) == ErrorKind::DomainError);

    rows[0].var_all = 0.0;
    const ExpertiseTable flat(rows, 5, 5);
    CHECK(kind_of([&] { plan_meanvar(experts, flat, std::nullopt, 0.0); }) == ErrorKind::ZeroVariance);
}

TEST_CASE("mean and variance targets hold on the activation column") {
    const auto corpus = marker_char_corpus(20, 25, 8);
    const auto tok = build_tokenizer(corpus);
    const auto w = random_model(small_config(tok.vocab_size()), 12);
    const Site sites[] = {Site::MlpUpPre, Site::MlpDownOut};
    const auto acts = capture(w, corpus, tok, sites);
    const auto table = build_table(acts);
    const auto experts = select_topk(table, 10, RankMetric::Auroc);

    double min_var = INFINITY;
    for (const auto& id : experts.neurons) min_var = std::min(min_var, table.at(id).var_all);
    REQUIRE(min_var > 0.0);

    struct Target {
        std::optional<double> mean, var;
    };
    for (const Target t : {Target{std::nullopt, 0.5 * min_var}, Target{1.5, 0.1 * min_var}, Target{-0.3, std::nullopt}}) {
        const auto plan = plan_meanvar(experts, table, t.mean, t.var);
        for (const auto& id : experts.neurons) {
            const auto it = std::find(acts.neurons.begin(), acts.neurons.end(), id);
            const auto col = acts.column_of(static_cast<std::size_t>(it - acts.neurons.begin()));
            const auto a = plan.action_for(id);
            std::vector<double> z;
            for (float v : col) z.push_back(a.scale * v + a.offset);
            const double n = static_cast<double>(z.size());
            const double mean = std::accumulate(z.begin(), z.end(), 0.0) / n;
            double var_z = 0.0;
            for (double x : z) var_z += (x - mean) * (x - mean);
            var_z /= n;
            const double want_mean = t.mean ? *t.mean : table.mean_all(id);
            const double want_var = t.var ? *t.var : table.at(id).var_all;
            CHECK(std::abs(mean - want_mean) <= 1e-9);
            CHECK(std::abs(var_z - want_var) <= 1e-9);
        }
    }
}

TEST_CASE("plans reject invalid neurons") {
    const auto cfg = small_config();
    InterventionPlan plan;
    plan.set({5, Site::MlpUpPre, 0}, {0.5, 0.0});
    CHECK(kind_of([&] { plan.validate_for(cfg); }) == ErrorKind::NeuronOutOfRange);
    CHECK(kind_of([&] { patch_weights(random_model(cfg, 1), plan); }) == ErrorKind::NeuronOutOfRange);
}

TEST_CASE("compose applies the second action after the first") {
    InterventionPlan a, b;
    a.set(up(0), {0.5, 1.0});
    a.set(up(1), {2.0, 0.0});
    b.set(up(0), {3.0, -1.0});
    b.set(up(2), {0.0, 4.0});
    const auto c = compose(a, b);
    CHECK(c.action_for(up(0)) == AffineAction{1.5, 2.0});
    CHECK(c.action_for(up(1)) == AffineAction{2.0, 0.0});
    CHECK(c.action_for(up(2)) == AffineAction{0.0, 4.0});
    InterventionPlan inv;
    inv.set(up(1), {0.5, 0.0});
    CHECK(compose(a, inv).action_for(up(1)).is_identity());
    CHECK(compose(a, inv).size() == 1);
}

TEST_CASE("runtime hooks") {
    CHECK(apply_runtime(InterventionPlan{}).empty());
    Rng rng(3);
    const auto cfg = small_config();
    for (int i = 0; i < 20; ++i) {
        const auto plan = random_plan(cfg, rng);
        const auto hooks = apply_runtime(plan);
        CHECK(hooks.size() == plan.size());
        CHECK(plan_from_hooks(hooks) == plan);
    }
}

TEST_CASE("weight patching") {
    const auto cfg = small_config();
    const auto w = random_model(cfg, 2);
    CHECK(serialize_weights(patch_weights(w, InterventionPlan{})) == serialize_weights(w));

    InterventionPlan zero;
    zero.set({1, Site::MlpUpPre, 7}, {0.0, 0.0});
    zero.set({0, Site::MlpDownOut, 3}, {0.0, 0.0});
    const auto p = patch_weights(w, zero);
    for (std::size_t i = 0; i < cfg.d_model; ++i) CHECK(p.layers[1].w_up[7 * cfg.d_model + i] == 0.0f);
    CHECK(p.layers[1].b_up[7] == 0.0f);
    for (std::size_t i = 0; i < cfg.d_ff; ++i) CHECK(p.layers[0].w_down[3 * cfg.d_ff + i] == 0.0f);
    CHECK(p.layers[0].b_down[3] == 0.0f);
}

TEST_CASE("patched weights match runtime hooks") {
    const auto cfg = small_config();
    Rng rng(77);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto w = random_model(cfg, 500 + trial);
        const auto plan = random_plan(cfg, rng);
        const auto tokens = random_tokens(rng, cfg.vocab_size, 2 + rng.below(cfg.context_len - 1));
        const auto hooked = forward(w, tokens, apply_runtime(plan));
        const auto patched = forward(patch_weights(w, plan), tokens);
        worst = std::max(worst, max_abs_diff(hooked.logits, patched.logits));
    }
    CHECK(worst <= 1e-5);
}

TEST_CASE("plan files") {
    TempDir dir;
    const auto cfg = small_config();
    Rng rng(5);
    auto plan = random_plan(cfg, rng);
    plan.family = "damp";
    plan.params["alpha"] = 0.5;
    plan.source_table_hash = 0x1234;
    save_plan(plan, dir.path("p.json"));
    const auto back = load_plan(dir.path("p.json"), cfg);
    CHECK(back == plan);
    CHECK(back.family == "damp");
    CHECK(back.params == plan.params);
    CHECK(back.source_table_hash == 0x1234);
    CHECK(plan_to_json(back) == plan_to_json(plan));

    ModelConfig smaller = cfg;
    smaller.n_layers = 1;
    smaller.d_ff = 2;
    smaller.d_model = 2;
    smaller.n_heads = 1;
    InterventionPlan far;
    far.set({1, Site::MlpUpPre, 20}, {0.5, 0.0});
    CHECK(kind_of([&] { plan_from_json(plan_to_json(far), smaller); }) == ErrorKind::NeuronOutOfRange);
    CHECK(kind_of([&] { plan_from_json("{", cfg); }) == ErrorKind::ParseError);
}
