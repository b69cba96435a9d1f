#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aura/corpus.hpp"

namespace aura {

struct ModelConfig {
    std::size_t n_layers = 2;
    std::size_t d_model = 48;
    std::size_t n_heads = 4;
    std::size_t d_ff = 192;
    std::size_t vocab_size = 32;
    std::size_t context_len = 64;
    std::uint64_t seed = 0;

    std::size_t head_dim() const { return d_model / n_heads; }
    // Number of hookable neurons: d_ff up-projection rows plus d_model
    // down-projection rows per layer.
    std::size_t n_neurons() const { return n_layers * (d_ff + d_model); }
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

// Tensor storage for the toy transformer. `Scalar` is float for stored
// models and double for the gradient check.
template <class Scalar>
struct LayerParams {
    std::vector<Scalar> ln1_g, ln1_b;
    std::vector<Scalar> wq, wk, wv, wo;  // [d x d], output-major
    std::vector<Scalar> ln2_g, ln2_b;
    std::vector<Scalar> w_up, b_up;      // [d_ff x d], [d_ff]
    std::vector<Scalar> w_down, b_down;  // [d x d_ff], [d]
};

template <class Scalar>
struct Params {
    ModelConfig cfg;
    std::vector<Scalar> tok_emb;  // [V x d]
    std::vector<Scalar> pos_emb;  // [C x d]
    std::vector<LayerParams<Scalar>> layers;
    std::vector<Scalar> lnf_g, lnf_b;
    std::vector<Scalar> unembed;  // [V x d]

    // Zero-filled tensors of the right shapes.
    static Params zeros(const ModelConfig& cfg);

    // Visits every tensor in canonical order as (name, shape, data).
    template <class F>
    void visit(F&& f) {
        visit_impl(*this, f);
    }
    template <class F>
    void visit(F&& f) const {
        visit_impl(*this, f);
    }

    template <class Other>
    Params<Other> cast() const;

    std::size_t n_params() const;

private:
    template <class Self, class F>
    static void visit_impl(Self& self, F& f);
};

using ModelWeights = Params<float>;

enum class Site : std::uint8_t { MlpUpPre = 0, MlpDownOut = 1 };

std::string_view site_name(Site site);  // "up_pre" / "down_out"
Site parse_site(std::string_view name);

struct NeuronId {
    std::uint32_t layer = 0;
    Site site = Site::MlpUpPre;
    std::uint32_t row = 0;

    auto operator<=>(const NeuronId&) const = default;
};

bool neuron_valid(const ModelConfig& cfg, const NeuronId& id);
std::vector<NeuronId> all_neurons(const ModelConfig& cfg, std::span<const Site> sites);
std::vector<NeuronId> all_neurons(const ModelConfig& cfg);

// z' = scale * z + offset
struct AffineAction {
    double scale = 1.0;
    double offset = 0.0;

    bool is_identity() const { return scale == 1.0 && offset == 0.0; }
    bool operator==(const AffineAction&) const = default;
};

class HookSet {
public:
    HookSet() = default;

    // Throws DomainError on duplicates or non-finite actions.
    void add(const NeuronId& id, const AffineAction& action);
    const std::vector<std::pair<NeuronId, AffineAction>>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }

private:
    std::vector<std::pair<NeuronId, AffineAction>> entries_;
};

// Per-position activations recorded at the requested sites, after hooks.
class Capture {
public:
    Capture() = default;
    Capture(const ModelConfig& cfg, std::size_t positions, bool up_pre, bool down_out);

    bool has(Site site) const { return site == Site::MlpUpPre ? !up_.empty() : !down_.empty(); }
    std::size_t positions() const noexcept { return positions_; }
    float value(const NeuronId& id, std::size_t t) const;

    std::span<float> row(std::size_t layer, Site site, std::size_t t);

private:
    std::size_t positions_ = 0;
    std::size_t d_ff_ = 0, d_model_ = 0;
    std::vector<std::vector<float>> up_, down_;  // per layer, [T x width]
};

struct ForwardResult {
    std::vector<float> logits;  // [T x V]
    std::size_t positions = 0;
    std::size_t vocab = 0;
    Capture captured;

    std::span<const float> logits_at(std::size_t t) const {
        return {logits.data() + t * vocab, vocab};
    }
};

ModelWeights init_model(const ModelConfig& cfg);

ForwardResult forward(const ModelWeights& weights, std::span<const TokenId> tokens, const HookSet& hooks = {},
                      std::span<const Site> capture_sites = {});

// Mean natural-log NLL over positions 1..T-1.
double nll(const ModelWeights& weights, std::span<const TokenId> tokens, const HookSet& hooks = {});
// Summed NLL and the number of predicted tokens, for pooled perplexity.
std::pair<double, std::size_t> nll_sum(const ModelWeights& weights, std::span<const TokenId> tokens,
                                       const HookSet& hooks = {});

// Token sequence used for language modelling: BOS + text (+ EOS), clipped
// to the context window.
std::vector<TokenId> lm_sequence(const Tokenizer& tok, std::string_view text, std::size_t context_len);

struct TrainParams {
    std::size_t epochs = 1;
    double learning_rate = 3e-3;
    std::size_t batch_size = 16;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-8;
    std::uint64_t seed = 0;
    bool verbose = false;
};

struct TrainReport {
    double initial_nll = 0.0;
    double final_nll = 0.0;
    std::size_t steps = 0;
};

ModelWeights train(const ModelWeights& weights, const ConceptCorpus& corpus, const Tokenizer& tok,
                   const TrainParams& params, TrainReport* report = nullptr);

// Analytic gradient of the mean NLL over the given sequences (each sequence
// weighted by its predicted-token count), computed in double precision.
Params<double> nll_gradient(const Params<double>& weights, std::span<const std::vector<TokenId>> sequences,
                            double* loss = nullptr);
double nll_mean(const Params<double>& weights, std::span<const std::vector<TokenId>> sequences);

struct SamplerParams {
    double temperature = 1.0;
    std::size_t top_k = 50;  // 0 = unlimited
    std::size_t max_new_tokens = 20;
    std::uint64_t seed = 0;
    std::size_t n_samples = 25;

    void validate() const;
};

// Completions only (prompt and EOS excluded). Sample i draws from
// Rng(derive_seed(seed, i)).
std::vector<std::vector<TokenId>> generate(const ModelWeights& weights, std::span<const TokenId> prompt,
                                           const SamplerParams& params, const HookSet& hooks = {});

void save_weights(const ModelWeights& weights, const std::string& path,
                  const std::map<std::string, std::string>& metadata = {});
std::string serialize_weights(const ModelWeights& weights, const std::map<std::string, std::string>& metadata = {});

struct WeightsFile {
    ModelWeights weights;
    std::map<std::string, std::string> metadata;
};
WeightsFile read_weights(const std::string& path);
WeightsFile parse_weights(std::string_view bytes);
ModelWeights load_weights(const std::string& path);

std::uint64_t weights_hash(const ModelWeights& weights);

// Tokenizer persisted alongside weights in the container metadata.
std::string tokenizer_to_json(const Tokenizer& tok);
Tokenizer tokenizer_from_json(std::string_view json);

// ---------------------------------------------------------------------------

template <class Scalar>
template <class Self, class F>
void Params<Scalar>::visit_impl(Self& self, F& f) {
    const auto& c = self.cfg;
    const std::size_t d = c.d_model, ff = c.d_ff, V = c.vocab_size;
    f(std::string("tok_emb"), std::vector<std::size_t>{V, d}, self.tok_emb);
    f(std::string("pos_emb"), std::vector<std::size_t>{c.context_len, d}, self.pos_emb);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
        auto& L = self.layers[l];
        const std::string p = "layers." + std::to_string(l) + ".";
        f(p + "ln1.g", std::vector<std::size_t>{d}, L.ln1_g);
        f(p + "ln1.b", std::vector<std::size_t>{d}, L.ln1_b);
        f(p + "attn.q", std::vector<std::size_t>{d, d}, L.wq);
        f(p + "attn.k", std::vector<std::size_t>{d, d}, L.wk);
        f(p + "attn.v", std::vector<std::size_t>{d, d}, L.wv);
        f(p + "attn.o", std::vector<std::size_t>{d, d}, L.wo);
        f(p + "ln2.g", std::vector<std::size_t>{d}, L.ln2_g);
        f(p + "ln2.b", std::vector<std::size_t>{d}, L.ln2_b);
        f(p + "mlp.up.w", std::vector<std::size_t>{ff, d}, L.w_up);
        f(p + "mlp.up.b", std::vector<std::size_t>{ff}, L.b_up);
        f(p + "mlp.down.w", std::vector<std::size_t>{d, ff}, L.w_down);
        f(p + "mlp.down.b", std::vector<std::size_t>{d}, L.b_down);
    }
    f(std::string("lnf.g"), std::vector<std::size_t>{d}, self.lnf_g);
    f(std::string("lnf.b"), std::vector<std::size_t>{d}, self.lnf_b);
    f(std::string("unembed"), std::vector<std::size_t>{V, d}, self.unembed);
}

template <class Scalar>
Params<Scalar> Params<Scalar>::zeros(const ModelConfig& cfg) {
    Params p;
    p.cfg = cfg;
    p.layers.resize(cfg.n_layers);
    p.visit([](const std::string&, const std::vector<std::size_t>& shape, std::vector<Scalar>& data) {
        std::size_t n = 1;
        for (auto s : shape) n *= s;
        data.assign(n, Scalar(0));
    });
    return p;
}

template <class Scalar>
template <class Other>
Params<Other> Params<Scalar>::cast() const {
    Params<Other> out = Params<Other>::zeros(cfg);
    std::vector<const std::vector<Scalar>*> src;
    visit([&](const std::string&, const std::vector<std::size_t>&, const std::vector<Scalar>& d) { src.push_back(&d); });
    std::size_t i = 0;
    out.visit([&](const std::string&, const std::vector<std::size_t>&, std::vector<Other>& d) {
        const auto& s = *src[i++];
        for (std::size_t k = 0; k < d.size(); ++k) d[k] = static_cast<Other>(s[k]);
    });
    return out;
}

template <class Scalar>
std::size_t Params<Scalar>::n_params() const {
    std::size_t n = 0;
    visit([&](const std::string&, const std::vector<std::size_t>&, const std::vector<Scalar>& d) { n += d.size(); });
    return n;
}

}  // namespace aura
