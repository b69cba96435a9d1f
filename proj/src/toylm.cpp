#include "aura/toylm.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>

#include "aura/common.hpp"
#include "engine.hpp"
#include "json.hpp"

namespace aura {

void ModelConfig::validate() const {
    if (n_layers == 0 || d_model == 0 || n_heads == 0 || d_ff == 0 || vocab_size == 0) {
        fail(ErrorKind::InvalidConfig, "all model dimensions must be >= 1");
    }
    if (d_model % n_heads != 0) {
        fail(ErrorKind::InvalidConfig, "d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                                           std::to_string(n_heads));
    }
    if (context_len < 2) fail(ErrorKind::InvalidConfig, "context_len must be >= 2");
}

std::string_view site_name(Site site) { return site == Site::MlpUpPre ? "up_pre" : "down_out"; }

Site parse_site(std::string_view name) {
    if (name == "up_pre") return Site::MlpUpPre;
    if (name == "down_out") return Site::MlpDownOut;
    fail(ErrorKind::ParseError, "unknown site '" + std::string(name) + "'");
}

bool neuron_valid(const ModelConfig& cfg, const NeuronId& id) {
    if (id.layer >= cfg.n_layers) return false;
    return id.row < (id.site == Site::MlpUpPre ? cfg.d_ff : cfg.d_model);
}

std::vector<NeuronId> all_neurons(const ModelConfig& cfg, std::span<const Site> sites) {
    std::vector<NeuronId> out;
    for (std::uint32_t l = 0; l < cfg.n_layers; ++l) {
        for (Site s : {Site::MlpUpPre, Site::MlpDownOut}) {
            if (std::find(sites.begin(), sites.end(), s) == sites.end()) continue;
            const std::size_t n = s == Site::MlpUpPre ? cfg.d_ff : cfg.d_model;
            for (std::uint32_t r = 0; r < n; ++r) out.push_back({l, s, r});
        }
    }
    return out;
}

std::vector<NeuronId> all_neurons(const ModelConfig& cfg) {
    constexpr Site both[] = {Site::MlpUpPre, Site::MlpDownOut};
    return all_neurons(cfg, both);
}

void HookSet::add(const NeuronId& id, const AffineAction& action) {
    if (!std::isfinite(action.scale) || !std::isfinite(action.offset)) {
        fail(ErrorKind::DomainError, "hook action must be finite");
    }
    for (const auto& [existing, _] : entries_) {
        if (existing == id) fail(ErrorKind::DomainError, "duplicate hook for one neuron");
    }
    entries_.emplace_back(id, action);
}

Capture::Capture(const ModelConfig& cfg, std::size_t positions, bool up_pre, bool down_out)
    : positions_(positions), d_ff_(cfg.d_ff), d_model_(cfg.d_model) {
    if (up_pre) up_.assign(cfg.n_layers, std::vector<float>(positions * cfg.d_ff));
    if (down_out) down_.assign(cfg.n_layers, std::vector<float>(positions * cfg.d_model));
}

std::span<float> Capture::row(std::size_t layer, Site site, std::size_t t) {
    if (site == Site::MlpUpPre) return {up_[layer].data() + t * d_ff_, d_ff_};
    return {down_[layer].data() + t * d_model_, d_model_};
}

float Capture::value(const NeuronId& id, std::size_t t) const {
    if (!has(id.site)) fail(ErrorKind::DomainError, "site was not captured");
    if (id.site == Site::MlpUpPre) return up_.at(id.layer).at(t * d_ff_ + id.row);
    return down_.at(id.layer).at(t * d_model_ + id.row);
}

// Initialisation (all zero-mean Gaussians):
//   embeddings, unembedding            std 0.1
//   W_q, W_k, W_v, W_up                std 1/sqrt(fan_in)
//   W_o, W_down                        std 1/sqrt(fan_in * 2 * n_layers)
//   biases 0, layer-norm gains 1
ModelWeights init_model(const ModelConfig& cfg) {
    cfg.validate();
    auto w = ModelWeights::zeros(cfg);
    Rng rng(derive_seed(cfg.seed, 0x696e6974));
    auto fill = [&](std::vector<float>& v, double stdev) {
        for (auto& x : v) x = static_cast<float>(rng.gaussian() * stdev);
    };
    const double d = static_cast<double>(cfg.d_model), ff = static_cast<double>(cfg.d_ff);
    const double depth = 2.0 * static_cast<double>(cfg.n_layers);
    fill(w.tok_emb, 0.1);
    fill(w.pos_emb, 0.1);
    for (auto& L : w.layers) {
        std::fill(L.ln1_g.begin(), L.ln1_g.end(), 1.0f);
        std::fill(L.ln2_g.begin(), L.ln2_g.end(), 1.0f);
        fill(L.wq, 1.0 / std::sqrt(d));
        fill(L.wk, 1.0 / std::sqrt(d));
        fill(L.wv, 1.0 / std::sqrt(d));
        fill(L.wo, 1.0 / std::sqrt(d * depth));
        fill(L.w_up, 1.0 / std::sqrt(d));
        fill(L.w_down, 1.0 / std::sqrt(ff * depth));
    }
    std::fill(w.lnf_g.begin(), w.lnf_g.end(), 1.0f);
    fill(w.unembed, 0.1);
    return w;
}

ForwardResult forward(const ModelWeights& weights, std::span<const TokenId> tokens, const HookSet& hooks,
                      std::span<const Site> capture_sites) {
    const auto& cfg = weights.cfg;
    if (tokens.size() > cfg.context_len) {
        fail(ErrorKind::ContextOverflow, std::to_string(tokens.size()) + " tokens exceed context " +
                                             std::to_string(cfg.context_len));
    }
    ForwardResult out;
    out.positions = tokens.size();
    out.vocab = cfg.vocab_size;
    out.logits.assign(tokens.size() * cfg.vocab_size, 0.0f);
    const bool up = std::find(capture_sites.begin(), capture_sites.end(), Site::MlpUpPre) != capture_sites.end();
    const bool down = std::find(capture_sites.begin(), capture_sites.end(), Site::MlpDownOut) != capture_sites.end();
    if (up || down) out.captured = Capture(cfg, tokens.size(), up, down);
    detail::Decoder<float> dec(weights, hooks, (up || down) ? &out.captured : nullptr);
    for (std::size_t t = 0; t < tokens.size(); ++t) dec.step(tokens[t], out.logits.data() + t * cfg.vocab_size);
    return out;
}

std::pair<double, std::size_t> nll_sum(const ModelWeights& weights, std::span<const TokenId> tokens,
                                       const HookSet& hooks) {
    if (tokens.size() < 2) fail(ErrorKind::DomainError, "nll needs at least two tokens");
    const auto fr = forward(weights, tokens, hooks);
    double total = 0;
    for (std::size_t t = 0; t + 1 < tokens.size(); ++t) {
        total += detail::token_nll(fr.logits_at(t).data(), fr.vocab, tokens[t + 1]);
    }
    return {total, tokens.size() - 1};
}

double nll(const ModelWeights& weights, std::span<const TokenId> tokens, const HookSet& hooks) {
    const auto [total, n] = nll_sum(weights, tokens, hooks);
    return total / static_cast<double>(n);
}

std::vector<TokenId> lm_sequence(const Tokenizer& tok, std::string_view text, std::size_t context_len) {
    auto ids = tok.encode(text);
    ids.push_back(Tokenizer::kEos);
    if (ids.size() > context_len) ids.resize(context_len);
    return ids;
}

void SamplerParams::validate() const {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) fail(ErrorKind::InvalidConfig, "temperature must be > 0");
    if (max_new_tokens == 0) fail(ErrorKind::InvalidConfig, "max_new_tokens must be >= 1");
    if (n_samples == 0) fail(ErrorKind::InvalidConfig, "n_samples must be >= 1");
}

namespace {

TokenId sample_token(std::span<const float> logits, const SamplerParams& params, Rng& rng) {
    const std::size_t V = logits.size();
    std::vector<std::size_t> idx(V);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const std::size_t k = params.top_k == 0 ? V : std::min(params.top_k, V);
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [&](std::size_t a, std::size_t b) {
                          return logits[a] > logits[b] || (logits[a] == logits[b] && a < b);
                      });
    if (k == 1) return static_cast<TokenId>(idx[0]);
    std::vector<double> p(k);
    const double mx = static_cast<double>(logits[idx[0]]) / params.temperature;
    double sum = 0;
    for (std::size_t i = 0; i < k; ++i) {
        p[i] = std::exp(static_cast<double>(logits[idx[i]]) / params.temperature - mx);
        sum += p[i];
    }
    double u = rng.uniform() * sum;
    for (std::size_t i = 0; i < k; ++i) {
        if (u < p[i]) return static_cast<TokenId>(idx[i]);
        u -= p[i];
    }
    return static_cast<TokenId>(idx[k - 1]);
}

}  // namespace

std::vector<std::vector<TokenId>> generate(const ModelWeights& weights, std::span<const TokenId> prompt,
                                           const SamplerParams& params, const HookSet& hooks) {
    params.validate();
    const auto& cfg = weights.cfg;
    if (prompt.empty()) fail(ErrorKind::DomainError, "prompt must hold at least BOS");
    if (prompt.size() > cfg.context_len) {
        fail(ErrorKind::ContextOverflow, "prompt of " + std::to_string(prompt.size()) + " tokens exceeds context");
    }
    std::vector<std::vector<TokenId>> out;
    out.reserve(params.n_samples);
    std::vector<float> logits(cfg.vocab_size);
    for (std::size_t i = 0; i < params.n_samples; ++i) {
        Rng rng(derive_seed(params.seed, i));
        detail::Decoder<float> dec(weights, hooks);
        for (TokenId t : prompt) dec.step(t, logits.data());
        std::vector<TokenId> completion;
        for (std::size_t n = 0; n < params.max_new_tokens; ++n) {
            const TokenId next = sample_token(logits, params, rng);
            if (next == Tokenizer::kEos) break;
            completion.push_back(next);
            if (dec.position() >= cfg.context_len) break;
            dec.step(next, logits.data());
        }
        out.push_back(std::move(completion));
    }
    return out;
}

// ---------------------------------------------------------------------------
// TLM1 container

namespace {

constexpr char kMagic[4] = {'T', 'L', 'M', '1'};
constexpr std::size_t kAlign = 64;

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out += static_cast<char>((v >> (8 * i)) & 0xFF);
}

std::uint64_t get_u64(std::string_view in, std::size_t at) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
    return v;
}

std::map<std::string, std::string> config_metadata(const ModelConfig& c) {
    return {{"n_layers", std::to_string(c.n_layers)},     {"d_model", std::to_string(c.d_model)},
            {"n_heads", std::to_string(c.n_heads)},       {"d_ff", std::to_string(c.d_ff)},
            {"vocab_size", std::to_string(c.vocab_size)}, {"context_len", std::to_string(c.context_len)},
            {"seed", std::to_string(c.seed)}};
}

std::uint64_t meta_u64(const std::map<std::string, std::string>& meta, const std::string& key) {
    const auto it = meta.find(key);
    if (it == meta.end()) fail(ErrorKind::InvalidConfig, "weights metadata lacks '" + key + "'");
    try {
        return std::stoull(it->second);
    } catch (const std::exception&) {
        fail(ErrorKind::InvalidConfig, "weights metadata '" + key + "' is not an integer");
    }
}

}  // namespace

std::string serialize_weights(const ModelWeights& weights, const std::map<std::string, std::string>& metadata) {
    nlohmann::ordered_json manifest;
    nlohmann::ordered_json meta = nlohmann::ordered_json::object();
    auto merged = metadata;
    for (auto& [k, v] : config_metadata(weights.cfg)) merged[k] = v;
    for (const auto& [k, v] : merged) meta[k] = v;
    manifest["__metadata__"] = meta;

    std::uint64_t offset = 0;
    weights.visit([&](const std::string& name, const std::vector<std::size_t>& shape, const std::vector<float>& data) {
        offset = (offset + kAlign - 1) / kAlign * kAlign;
        const std::uint64_t len = data.size() * sizeof(float);
        manifest[name] = {{"dtype", "f32"}, {"shape", shape}, {"offset", offset}, {"len_bytes", len}};
        offset += len;
    });
    const std::string header = manifest.dump();

    std::string out(kMagic, 4);
    put_u64(out, header.size());
    out += header;
    const std::size_t payload_start = out.size();
    out.reserve(payload_start + offset);
    weights.visit([&](const std::string&, const std::vector<std::size_t>&, const std::vector<float>& data) {
        const std::size_t rel = out.size() - payload_start;
        out.append((rel + kAlign - 1) / kAlign * kAlign - rel, '\0');
        for (float f : data) {
            const auto bits = std::bit_cast<std::uint32_t>(f);
            for (int i = 0; i < 4; ++i) out += static_cast<char>((bits >> (8 * i)) & 0xFF);
        }
    });
    return out;
}

void save_weights(const ModelWeights& weights, const std::string& path,
                  const std::map<std::string, std::string>& metadata) {
    write_file_atomic(path, serialize_weights(weights, metadata));
}

WeightsFile parse_weights(std::string_view bytes) {
    if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0) fail(ErrorKind::BadMagic, "not a TLM1 file");
    const std::uint64_t header_len = get_u64(bytes, 4);
    if (header_len > bytes.size() - 12) fail(ErrorKind::TruncatedPayload, "manifest extends past end of file");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(bytes.substr(12, header_len));
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorKind::ParseError, std::string("manifest: ") + e.what());
    }
    const std::string_view payload = bytes.substr(12 + header_len);

    WeightsFile out;
    if (manifest.contains("__metadata__")) {
        for (const auto& [k, v] : manifest["__metadata__"].items()) out.metadata[k] = v.get<std::string>();
    }
    ModelConfig cfg;
    cfg.n_layers = meta_u64(out.metadata, "n_layers");
    cfg.d_model = meta_u64(out.metadata, "d_model");
    cfg.n_heads = meta_u64(out.metadata, "n_heads");
    cfg.d_ff = meta_u64(out.metadata, "d_ff");
    cfg.vocab_size = meta_u64(out.metadata, "vocab_size");
    cfg.context_len = meta_u64(out.metadata, "context_len");
    cfg.seed = meta_u64(out.metadata, "seed");
    cfg.validate();

    out.weights = ModelWeights::zeros(cfg);
    out.weights.visit([&](const std::string& name, const std::vector<std::size_t>& shape, std::vector<float>& data) {
        if (!manifest.contains(name)) fail(ErrorKind::ShapeMismatch, "tensor '" + name + "' missing");
        const auto& e = manifest[name];
        if (e.value("dtype", "") != "f32") fail(ErrorKind::ShapeMismatch, "tensor '" + name + "' is not f32");
        if (e["shape"].get<std::vector<std::size_t>>() != shape) {
            fail(ErrorKind::ShapeMismatch, "tensor '" + name + "' shape disagrees with config");
        }
        const auto off = e["offset"].get<std::uint64_t>();
        const auto len = e["len_bytes"].get<std::uint64_t>();
        if (len != data.size() * sizeof(float) || off > payload.size() || len > payload.size() - off) {
            fail(ErrorKind::TruncatedPayload, "tensor '" + name + "' payload length disagrees with shape");
        }
        for (std::size_t i = 0; i < data.size(); ++i) {
            std::uint32_t bits = 0;
            for (int b = 0; b < 4; ++b) {
                bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(payload[off + i * 4 + b])) << (8 * b);
            }
            data[i] = std::bit_cast<float>(bits);
            if (!std::isfinite(data[i])) fail(ErrorKind::DomainError, "tensor '" + name + "' holds a non-finite value");
        }
    });
    return out;
}

WeightsFile read_weights(const std::string& path) { return parse_weights(read_file(path)); }

ModelWeights load_weights(const std::string& path) { return read_weights(path).weights; }

std::uint64_t weights_hash(const ModelWeights& weights) {
    Hasher h;
    weights.visit([&](const std::string& name, const std::vector<std::size_t>&, const std::vector<float>& data) {
        h.str(name).bytes(data.data(), data.size() * sizeof(float));
    });
    return h.digest();
}

std::string tokenizer_to_json(const Tokenizer& tok) {
    nlohmann::json j = nlohmann::json::array();
    for (char32_t c : tok.chars()) j.push_back(static_cast<std::uint32_t>(c));
    return j.dump();
}

Tokenizer tokenizer_from_json(std::string_view json) {
    std::vector<char32_t> chars;
    try {
        for (const auto& v : nlohmann::json::parse(json)) chars.push_back(static_cast<char32_t>(v.get<std::uint32_t>()));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::ParseError, std::string("tokenizer: ") + e.what());
    }
    return Tokenizer(std::move(chars));
}

}  // namespace aura
