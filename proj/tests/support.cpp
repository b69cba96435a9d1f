#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "aura/common.hpp"

namespace aura::testing {

double auroc_bruteforce(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    double wins = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    return wins / static_cast<double>(pairs);
}

double ap_bruteforce(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    std::set<double, std::greater<>> thresholds(scores.begin(), scores.end());
    double n_pos = 0.0;
    for (auto l : labels) n_pos += l;
    double ap = 0.0, prev_recall = 0.0;
    for (double t : thresholds) {
        double tp = 0.0, predicted = 0.0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            if (scores[i] >= t) {
                predicted += 1.0;
                tp += labels[i];
            }
        }
        const double recall = tp / n_pos;
        ap += (recall - prev_recall) * (tp / predicted);
        prev_recall = recall;
    }
    return ap;
}

MetricInstance random_metric_instance(Rng& rng) {
    MetricInstance m;
    const std::size_t n = 2 + rng.below(49);
    const std::size_t grid = 1 + rng.below(12);
    for (std::size_t i = 0; i < n; ++i) {
        m.scores.push_back(static_cast<double>(rng.below(grid)) * 0.25 - 1.0);
        m.labels.push_back(static_cast<std::uint8_t>(rng.below(2)));
    }
    m.labels[0] = 1;
    m.labels[1] = 0;
    for (std::size_t i = n; i > 1; --i) {
        const auto j = rng.below(i);
        std::swap(m.labels[i - 1], m.labels[j]);
        std::swap(m.scores[i - 1], m.scores[j]);
    }
    return m;
}

ModelConfig small_config(std::size_t vocab) {
    ModelConfig c;
    c.n_layers = 2;
    c.d_model = 16;
    c.n_heads = 2;
    c.d_ff = 24;
    c.vocab_size = vocab;
    c.context_len = 16;
    c.seed = 11;
    return c;
}

ModelWeights random_model(const ModelConfig& cfg, std::uint64_t seed) {
    auto w = init_model(cfg);
    Rng rng(seed);
    w.visit([&](const std::string& name, const std::vector<std::size_t>&, std::vector<float>& data) {
        const bool gain = name.ends_with("_g") || name.ends_with(".g");
        for (auto& x : data) x += static_cast<float>((gain ? 0.1 : 0.2) * rng.gaussian());
    });
    return w;
}

std::vector<TokenId> random_tokens(Rng& rng, std::size_t vocab, std::size_t length) {
    std::vector<TokenId> t(length);
    for (auto& x : t) x = static_cast<TokenId>(rng.below(vocab));
    return t;
}

InterventionPlan random_plan(const ModelConfig& cfg, Rng& rng) {
    const auto neurons = all_neurons(cfg);
    InterventionPlan plan;
    plan.family = "random";
    const std::size_t n = 1 + rng.below(8);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& id = neurons[rng.below(neurons.size())];
        AffineAction a;
        switch (rng.below(4)) {
            case 0: a = {0.0, 0.0}; break;
            case 1: a = {0.0, rng.gaussian()}; break;
            case 2: a = {rng.uniform(), 0.0}; break;
            default: a = {rng.uniform() * 3.0 - 1.0, 0.5 * rng.gaussian()}; break;
        }
        plan.set(id, a);
    }
    return plan;
}

double max_abs_diff(std::span<const float> a, std::span<const float> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
    return m;
}

ExpertiseTable table_from_aurocs(const std::vector<double>& aurocs) {
    std::vector<NeuronStats> rows;
    for (std::size_t i = 0; i < aurocs.size(); ++i) {
        NeuronStats s;
        s.id = {0, Site::MlpUpPre, static_cast<std::uint32_t>(i)};
        s.auroc = aurocs[i];
        s.ap = aurocs[i];
        s.gini = gini_of(aurocs[i]);
        s.alpha = alpha_of(aurocs[i]);
        s.mean_pos = 1.0 + static_cast<double>(i);
        s.mean_neg = 0.1 * static_cast<double>(i);
        s.var_all = 1.0;
        rows.push_back(s);
    }
    return ExpertiseTable(std::move(rows), 10, 10);
}

ConceptCorpus marker_char_corpus(std::size_t n_pos, std::size_t n_neg, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<LabeledSentence> out;
    for (std::size_t i = 0; i < n_pos + n_neg; ++i) {
        const int label = i < n_pos ? 1 : 0;
        std::string s;
        const std::size_t len = 4 + rng.below(6);
        for (std::size_t j = 0; j < len; ++j) s += static_cast<char>('a' + rng.below(6));
        if (label) {
            const std::size_t k = 1 + rng.below(3);
            for (std::size_t j = 0; j < k; ++j) s.insert(rng.below(s.size() + 1), 1, 'z');
        }
        out.push_back({s, label});
    }
    return ConceptCorpus(std::move(out));
}

std::size_t count_char(const std::string& s, char c) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), c)); }

ModelWeights planted_model(const Tokenizer& tok, char marker) {
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.d_ff = 8;
    cfg.vocab_size = tok.vocab_size();
    cfg.context_len = 32;
    auto w = ModelWeights::zeros(cfg);
    const std::size_t d = cfg.d_model;
    // u alternates +1/-1: zero mean, unit variance, so layer norm maps +-u to
    // +-u (up to eps) and the neuron sees a clean sign.
    std::vector<float> u(d);
    for (std::size_t i = 0; i < d; ++i) u[i] = i % 2 ? -1.0f : 1.0f;
    const TokenId mk = tok.id_of(static_cast<char32_t>(marker));
    for (std::size_t v = 0; v < cfg.vocab_size; ++v) {
        const float sign = static_cast<TokenId>(v) == mk ? 1.0f : -1.0f;
        for (std::size_t i = 0; i < d; ++i) w.tok_emb[v * d + i] = sign * u[i];
    }
    for (auto& L : w.layers) {
        std::fill(L.ln1_g.begin(), L.ln1_g.end(), 1.0f);
        std::fill(L.ln2_g.begin(), L.ln2_g.end(), 1.0f);
    }
    std::fill(w.lnf_g.begin(), w.lnf_g.end(), 1.0f);
    auto& L0 = w.layers[0];
    for (std::size_t i = 0; i < d; ++i) L0.w_up[i] = u[i] / static_cast<float>(2 * d);
    L0.b_up[0] = 0.5f;
    return w;
}

TempDir::TempDir() {
    std::random_device rd;
    root_ = std::filesystem::temp_directory_path() / ("aura-test-" + hex64((std::uint64_t(rd()) << 32) ^ rd()));
    std::filesystem::create_directories(root_);
}

TempDir::~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(root_, ec);
}

}  // namespace aura::testing
