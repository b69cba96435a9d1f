#include <doctest.h>

#include <cmath>

#include "aura/common.hpp"
#include "aura/toylm.hpp"
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

}  // namespace

TEST_CASE("init is deterministic and shaped by the config") {
    ModelConfig cfg = small_config();
    cfg.d_model = 64;
    cfg.n_heads = 4;
    CHECK(cfg.head_dim() == 16);
    const auto a = init_model(cfg);
    const auto b = init_model(cfg);
    CHECK(serialize_weights(a) == serialize_weights(b));
    CHECK(a.tok_emb.size() == cfg.vocab_size * 64);
    CHECK(a.layers.size() == cfg.n_layers);
    CHECK(a.layers[0].w_up.size() == cfg.d_ff * 64);
    CHECK(a.layers[0].w_down.size() == 64 * cfg.d_ff);

    cfg.d_model = 63;
    CHECK(kind_of([&] { init_model(cfg); }) == ErrorKind::InvalidConfig);
    ModelConfig short_ctx = small_config();
    short_ctx.context_len = 1;
    CHECK(kind_of([&] { short_ctx.validate(); }) == ErrorKind::InvalidConfig);
}

TEST_CASE("neuron ids are checked against the config") {
    const auto cfg = small_config();
    CHECK(neuron_valid(cfg, {1, Site::MlpUpPre, 23}));
    CHECK_FALSE(neuron_valid(cfg, {1, Site::MlpUpPre, 24}));
    CHECK(neuron_valid(cfg, {0, Site::MlpDownOut, 15}));
    CHECK_FALSE(neuron_valid(cfg, {0, Site::MlpDownOut, 16}));
    CHECK_FALSE(neuron_valid(cfg, {2, Site::MlpUpPre, 0}));
    CHECK(all_neurons(cfg).size() == cfg.n_neurons());
}

TEST_CASE("hook set rejects duplicates and non-finite actions") {
    HookSet h;
    h.add({0, Site::MlpUpPre, 0}, {0.5, 0.0});
    CHECK(kind_of([&] { h.add({0, Site::MlpUpPre, 0}, {0.5, 0.0}); }) == ErrorKind::DomainError);
    CHECK(kind_of([&] { h.add({0, Site::MlpUpPre, 1}, {NAN, 0.0}); }) == ErrorKind::DomainError);
    CHECK(kind_of([&] { h.add({0, Site::MlpUpPre, 2}, {1.0, INFINITY}); }) == ErrorKind::DomainError);
}

TEST_CASE("identity hooks are bit-identical to no hooks") {
    const auto cfg = small_config();
    const auto w = random_model(cfg, 3);
    Rng rng(9);
    const auto tokens = random_tokens(rng, cfg.vocab_size, 10);
    HookSet identity;
    for (const auto& id : all_neurons(cfg)) identity.add(id, {1.0, 0.0});
    const auto a = forward(w, tokens);
    const auto b = forward(w, tokens, identity);
    CHECK(a.logits == b.logits);
    CHECK(nll(w, tokens) == nll(w, tokens, identity));
}

TEST_CASE("zeroing hook matches a zeroed up-projection row") {
    const auto cfg = small_config();
    const auto w = random_model(cfg, 4);
    Rng rng(10);
    const auto tokens = random_tokens(rng, cfg.vocab_size, 12);
    HookSet h;
    h.add({1, Site::MlpUpPre, 5}, {0.0, 0.0});
    auto patched = w;
    auto& L = patched.layers[1];
    for (std::size_t i = 0; i < cfg.d_model; ++i) L.w_up[5 * cfg.d_model + i] = 0.0f;
    L.b_up[5] = 0.0f;
    CHECK(max_abs_diff(forward(w, tokens, h).logits, forward(patched, tokens).logits) <= 1e-5);
}

TEST_CASE("causal masking") {
    const auto cfg = small_config();
    const auto w = random_model(cfg, 5);
    Rng rng(11);
    auto tokens = random_tokens(rng, cfg.vocab_size, 10);
    const auto base = forward(w, tokens);
    const std::size_t t = 4;
    tokens[t + 1] = static_cast<TokenId>((tokens[t + 1] + 1) % cfg.vocab_size);
    const auto later = forward(w, tokens);
    for (std::size_t i = 0; i <= t; ++i) CHECK(max_abs_diff(base.logits_at(i), later.logits_at(i)) == 0.0);
    tokens[t] = static_cast<TokenId>((tokens[t] + 1) % cfg.vocab_size);
    const auto now = forward(w, tokens);
    CHECK(max_abs_diff(base.logits_at(t), now.logits_at(t)) > 0.0);
    for (std::size_t i = 0; i < t; ++i) CHECK(max_abs_diff(base.logits_at(i), now.logits_at(i)) == 0.0);
}

TEST_CASE("forward rejects bad inputs") {
    const auto cfg = small_config();
    const auto w = random_model(cfg, 6);
    const std::vector<TokenId> bad = {0, static_cast<TokenId>(cfg.vocab_size)};
    CHECK(kind_of([&] { forward(w, bad); }) == ErrorKind::BadTokenId);
    const std::vector<TokenId> too_long(cfg.context_len + 1, 0);
    CHECK(kind_of([&] { forward(w, too_long); }) == ErrorKind::ContextOverflow);
}

TEST_CASE("uniform logits give ln V") {
    auto cfg = small_config();
    auto w = random_model(cfg, 7);
    std::fill(w.unembed.begin(), w.unembed.end(), 0.0f);
    Rng rng(12);
    const auto tokens = random_tokens(rng, cfg.vocab_size, 9);
    CHECK(nll(w, tokens) == doctest::Approx(std::log(static_cast<double>(cfg.vocab_size))).epsilon(1e-12));
}

TEST_CASE("softmax stays finite for huge logits") {
    const auto cfg = small_config();
    auto w = random_model(cfg, 8);
    for (auto& x : w.unembed) x *= 1e4f;
    Rng rng(13);
    const auto tokens = random_tokens(rng, cfg.vocab_size, 9);
    const double v = nll(w, tokens);
    CHECK(std::isfinite(v));
    CHECK(v >= 0.0);
}

TEST_CASE("nll is non-negative") {
    const auto cfg = small_config();
    Rng rng(14);
    for (int trial = 0; trial < 20; ++trial) {
        const auto w = random_model(cfg, 100 + trial);
        CHECK(nll(w, random_tokens(rng, cfg.vocab_size, 2 + rng.below(14))) >= 0.0);
    }
}

TEST_CASE("analytic gradient matches central differences") {
    ModelConfig cfg;
    cfg.n_layers = 1;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.d_ff = 32;
    cfg.vocab_size = 12;
    cfg.context_len = 8;
    cfg.seed = 5;
    auto w = random_model(cfg, 21).cast<double>();
    Rng rng(22);
    const std::vector<std::vector<TokenId>> seqs = {random_tokens(rng, 12, 8), random_tokens(rng, 12, 5)};
    double loss = 0.0;
    const auto grad = nll_gradient(w, seqs, &loss);
    CHECK(loss == doctest::Approx(nll_mean(w, seqs)).epsilon(1e-12));

    std::vector<const std::vector<double>*> g;
    grad.visit([&](const std::string&, const std::vector<std::size_t>&, const std::vector<double>& d) { g.push_back(&d); });
    std::size_t tensor = 0, bad = 0, checked = 0;
    const double h = 1e-4;
    w.visit([&](const std::string& name, const std::vector<std::size_t>&, std::vector<double>& d) {
        for (std::size_t i = 0; i < d.size(); ++i) {
            const double orig = d[i];
            d[i] = orig + h;
            const double up = nll_mean(w, seqs);
            d[i] = orig - h;
            const double down = nll_mean(w, seqs);
            d[i] = orig;
            const double fd = (up - down) / (2 * h);
            const double an = (*g[tensor])[i];
            ++checked;
            if (std::abs(fd - an) > std::max(1e-6, 1e-3 * std::abs(fd))) {
                if (bad++ < 5) MESSAGE(name << "[" << i << "] analytic " << an << " numeric " << fd);
            }
        }
        ++tensor;
    });
    CHECK(checked == w.n_params());
    CHECK(bad == 0);
}

TEST_CASE("training") {
    const ConceptCorpus corpus({{"the cat sat", 1}, {"a dog ran", 0}});
    const auto tok = build_tokenizer(corpus);
    ModelConfig cfg = small_config(tok.vocab_size());
    const auto w0 = init_model(cfg);

    TrainParams p;
    p.epochs = 1;
    p.batch_size = 2;
    p.seed = 3;
    TrainReport report;
    const auto w1 = train(w0, corpus, tok, p, &report);
    CHECK(report.final_nll < report.initial_nll);
    CHECK(report.steps == 1);

    p.learning_rate = 0.0;
    CHECK(serialize_weights(train(w0, corpus, tok, p)) == serialize_weights(w0));

    p.learning_rate = 3e-3;
    CHECK(serialize_weights(train(w0, corpus, tok, p)) == serialize_weights(w1));
}

TEST_CASE("sampling") {
    const auto cfg = small_config();
    const auto w = random_model(cfg, 30);
    const std::vector<TokenId> prompt = {Tokenizer::kBos, 4, 5};
    SamplerParams p;
    p.seed = 1;
    p.max_new_tokens = 8;
    const auto a = generate(w, prompt, p);
    CHECK(a.size() == 25);
    CHECK(a == generate(w, prompt, p));
    for (const auto& s : a) CHECK(s.size() <= 8);

    p.top_k = 1;
    p.n_samples = 3;
    const auto g1 = generate(w, prompt, p);
    p.seed = 99;
    const auto g2 = generate(w, prompt, p);
    CHECK(g1 == g2);
    CHECK(g1[0] == g1[1]);

    SamplerParams bad;
    bad.temperature = 0.0;
    CHECK(kind_of([&] { bad.validate(); }) == ErrorKind::InvalidConfig);
    bad = {};
    bad.n_samples = 0;
    CHECK(kind_of([&] { bad.validate(); }) == ErrorKind::InvalidConfig);
}

TEST_CASE("kv-cache decoding matches full forward passes") {
    const auto cfg = small_config();
    const auto w = random_model(cfg, 31);
    const std::vector<TokenId> prompt = {Tokenizer::kBos, 6};
    SamplerParams p;
    p.top_k = 1;
    p.n_samples = 1;
    p.max_new_tokens = 10;
    const auto fast = generate(w, prompt, p)[0];
    std::vector<TokenId> seq = prompt;
    std::vector<TokenId> slow;
    while (slow.size() < p.max_new_tokens && seq.size() < cfg.context_len) {
        const auto r = forward(w, seq);
        const auto row = r.logits_at(seq.size() - 1);
        const auto next = static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin());
        if (next == Tokenizer::kEos) break;
        slow.push_back(next);
        seq.push_back(next);
    }
    CHECK(fast == slow);
}

TEST_CASE("weights container") {
    TempDir dir;
    const auto cfg = small_config();
    const auto w = random_model(cfg, 40);
    save_weights(w, dir.path("m.tlm"), {{"note", "x"}});
    const auto back = read_weights(dir.path("m.tlm"));
    CHECK(serialize_weights(back.weights) == serialize_weights(w));
    CHECK(back.weights.cfg == cfg);
    CHECK(back.metadata.at("note") == "x");
    CHECK(weights_hash(back.weights) == weights_hash(w));

    auto bytes = serialize_weights(w);
    auto wrong = bytes;
    wrong[0] = 'X';
    CHECK(kind_of([&] { parse_weights(wrong); }) == ErrorKind::BadMagic);
    CHECK(kind_of([&] { parse_weights(bytes.substr(0, bytes.size() - 4)); }) == ErrorKind::TruncatedPayload);
    CHECK(kind_of([&] { load_weights(dir.path("missing.tlm")); }) == ErrorKind::IoError);
}

TEST_CASE("tokenizer survives the metadata round trip") {
    const auto tok = build_tokenizer(ConceptCorpus({{"hello", 1}, {"world", 0}}));
    CHECK(tokenizer_from_json(tokenizer_to_json(tok)) == tok);
}
