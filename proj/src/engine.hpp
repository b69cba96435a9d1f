#pragma once

// Templated forward/backward kernels shared by inference, training and the
// double-precision gradient check. Internal to the library.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "aura/common.hpp"
#include "aura/toylm.hpp"

namespace aura::detail {

inline constexpr double kLnEps = 1e-5;

template <class S>
S gelu(S x) {
    return S(0.5) * x * (S(1) + std::erf(x * S(std::numbers::sqrt2 / 2)));
}

inline double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

// y[r] = sum_c W[r, c] x[c] (+ b[r])
template <class S>
void matvec(const std::vector<S>& W, const S* x, S* y, std::size_t rows, std::size_t cols, const S* b = nullptr) {
    for (std::size_t r = 0; r < rows; ++r) {
        const S* w = W.data() + r * cols;
        S acc = 0;
        for (std::size_t c = 0; c < cols; ++c) acc += w[c] * x[c];
        y[r] = b ? acc + b[r] : acc;
    }
}

template <class S>
void layer_norm(const S* x, const std::vector<S>& g, const std::vector<S>& b, S* y, std::size_t d, S* mean_out,
                S* rstd_out) {
    double mean = 0;
    for (std::size_t i = 0; i < d; ++i) mean += x[i];
    mean /= static_cast<double>(d);
    double var = 0;
    for (std::size_t i = 0; i < d; ++i) var += (x[i] - mean) * (x[i] - mean);
    var /= static_cast<double>(d);
    const S m = static_cast<S>(mean);
    const S rstd = static_cast<S>(1.0 / std::sqrt(var + kLnEps));
    for (std::size_t i = 0; i < d; ++i) y[i] = (x[i] - m) * rstd * g[i] + b[i];
    if (mean_out) *mean_out = m;
    if (rstd_out) *rstd_out = rstd;
}

template <class S>
struct CompiledHooks {
    struct Site {
        std::vector<S> scale, offset;
        std::vector<unsigned char> active;
        bool any = false;
    };
    std::vector<Site> up, down;

    CompiledHooks(const ModelConfig& cfg, const HookSet& hooks) : up(cfg.n_layers), down(cfg.n_layers) {
        for (const auto& [id, act] : hooks.entries()) {
            if (!neuron_valid(cfg, id)) fail(ErrorKind::NeuronOutOfRange, "hook on invalid neuron");
            if (act.is_identity()) continue;
            auto& site = id.site == aura::Site::MlpUpPre ? up[id.layer] : down[id.layer];
            if (!site.any) {
                const std::size_t n = id.site == aura::Site::MlpUpPre ? cfg.d_ff : cfg.d_model;
                site.scale.assign(n, S(1));
                site.offset.assign(n, S(0));
                site.active.assign(n, 0);
                site.any = true;
            }
            site.scale[id.row] = static_cast<S>(act.scale);
            site.offset[id.row] = static_cast<S>(act.offset);
            site.active[id.row] = 1;
        }
    }

    static void apply(const Site& site, S* z, std::size_t n) {
        if (!site.any) return;
        for (std::size_t i = 0; i < n; ++i) {
            if (site.active[i]) z[i] = site.scale[i] * z[i] + site.offset[i];
        }
    }
};

// Activations of one layer over a full sequence, kept for backprop.
template <class S>
struct LayerTrace {
    std::vector<S> x_in, a, q, k, v, probs, o, x_mid, bln, h_pre, h;
    std::vector<S> ln1_mean, ln1_rstd, ln2_mean, ln2_rstd;
};

template <class S>
struct Trace {
    std::size_t T = 0;
    std::vector<LayerTrace<S>> layers;
    std::vector<S> x_final, f, lnf_mean, lnf_rstd;

    void resize(const ModelConfig& c, std::size_t t) {
        T = t;
        const std::size_t d = c.d_model, ff = c.d_ff;
        layers.resize(c.n_layers);
        for (auto& L : layers) {
            for (auto* v : {&L.x_in, &L.a, &L.q, &L.k, &L.v, &L.o, &L.x_mid, &L.bln}) v->assign(t * d, S(0));
            L.probs.assign(c.n_heads * t * t, S(0));
            L.h_pre.assign(t * ff, S(0));
            L.h.assign(t * ff, S(0));
            for (auto* v : {&L.ln1_mean, &L.ln1_rstd, &L.ln2_mean, &L.ln2_rstd}) v->assign(t, S(0));
        }
        x_final.assign(t * d, S(0));
        f.assign(t * d, S(0));
        lnf_mean.assign(t, S(0));
        lnf_rstd.assign(t, S(0));
    }
};

// Incremental decoder. Each call to step() processes one position given the
// cached keys/values of earlier positions, so a full forward and token-by-
// token generation run the identical arithmetic.
template <class S>
class Decoder {
public:
    Decoder(const Params<S>& w, const HookSet& hooks, Capture* capture = nullptr, Trace<S>* trace = nullptr)
        : w_(w), cfg_(w.cfg), hooks_(w.cfg, hooks), capture_(capture), trace_(trace) {
        const std::size_t d = cfg_.d_model;
        k_cache_.assign(cfg_.n_layers, std::vector<S>(cfg_.context_len * d));
        v_cache_.assign(cfg_.n_layers, std::vector<S>(cfg_.context_len * d));
        x_.resize(d);
        a_.resize(d);
        q_.resize(d);
        o_.resize(d);
        tmp_.resize(d);
        h_pre_.resize(cfg_.d_ff);
        h_.resize(cfg_.d_ff);
        scores_.resize(cfg_.context_len);
    }

    std::size_t position() const noexcept { return t_; }

    void step(TokenId token, S* logits) {
        const std::size_t d = cfg_.d_model, ff = cfg_.d_ff, H = cfg_.n_heads, hd = cfg_.head_dim();
        if (token < 0 || static_cast<std::size_t>(token) >= cfg_.vocab_size) {
            fail(ErrorKind::BadTokenId, "token " + std::to_string(token) + " >= vocab " + std::to_string(cfg_.vocab_size));
        }
        if (t_ >= cfg_.context_len) {
            fail(ErrorKind::ContextOverflow, "sequence longer than context " + std::to_string(cfg_.context_len));
        }
        const std::size_t t = t_;
        const S* te = w_.tok_emb.data() + static_cast<std::size_t>(token) * d;
        const S* pe = w_.pos_emb.data() + t * d;
        for (std::size_t i = 0; i < d; ++i) x_[i] = te[i] + pe[i];

        const S att_scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd)));
        for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
            const auto& L = w_.layers[l];
            LayerTrace<S>* tr = trace_ ? &trace_->layers[l] : nullptr;
            if (tr) std::copy(x_.begin(), x_.end(), tr->x_in.begin() + t * d);

            S mean{}, rstd{};
            layer_norm(x_.data(), L.ln1_g, L.ln1_b, a_.data(), d, &mean, &rstd);
            S* kc = k_cache_[l].data() + t * d;
            S* vc = v_cache_[l].data() + t * d;
            matvec(L.wq, a_.data(), q_.data(), d, d);
            matvec(L.wk, a_.data(), kc, d, d);
            matvec(L.wv, a_.data(), vc, d, d);
            if (tr) {
                tr->ln1_mean[t] = mean;
                tr->ln1_rstd[t] = rstd;
                std::copy(a_.begin(), a_.end(), tr->a.begin() + t * d);
                std::copy(q_.begin(), q_.end(), tr->q.begin() + t * d);
                std::copy(kc, kc + d, tr->k.begin() + t * d);
                std::copy(vc, vc + d, tr->v.begin() + t * d);
            }
            for (std::size_t h = 0; h < H; ++h) {
                const std::size_t off = h * hd;
                S mx = -std::numeric_limits<S>::infinity();
                for (std::size_t j = 0; j <= t; ++j) {
                    const S* kj = k_cache_[l].data() + j * d + off;
                    S acc = 0;
                    for (std::size_t i = 0; i < hd; ++i) acc += q_[off + i] * kj[i];
                    scores_[j] = acc * att_scale;
                    mx = std::max(mx, scores_[j]);
                }
                S denom = 0;
                for (std::size_t j = 0; j <= t; ++j) {
                    scores_[j] = std::exp(scores_[j] - mx);
                    denom += scores_[j];
                }
                for (std::size_t i = 0; i < hd; ++i) o_[off + i] = 0;
                for (std::size_t j = 0; j <= t; ++j) {
                    const S p = scores_[j] / denom;
                    if (tr) tr->probs[(h * trace_->T + t) * trace_->T + j] = p;
                    const S* vj = v_cache_[l].data() + j * d + off;
                    for (std::size_t i = 0; i < hd; ++i) o_[off + i] += p * vj[i];
                }
            }
            if (tr) std::copy(o_.begin(), o_.end(), tr->o.begin() + t * d);
            matvec(L.wo, o_.data(), tmp_.data(), d, d);
            for (std::size_t i = 0; i < d; ++i) x_[i] += tmp_[i];
            if (tr) std::copy(x_.begin(), x_.end(), tr->x_mid.begin() + t * d);

            layer_norm(x_.data(), L.ln2_g, L.ln2_b, a_.data(), d, &mean, &rstd);
            matvec(L.w_up, a_.data(), h_pre_.data(), ff, d, L.b_up.data());
            CompiledHooks<S>::apply(hooks_.up[l], h_pre_.data(), ff);
            for (std::size_t i = 0; i < ff; ++i) h_[i] = gelu(h_pre_[i]);
            matvec(L.w_down, h_.data(), tmp_.data(), d, ff, L.b_down.data());
            CompiledHooks<S>::apply(hooks_.down[l], tmp_.data(), d);
            if (capture_) {
                if (capture_->has(Site::MlpUpPre)) {
                    auto row = capture_->row(l, Site::MlpUpPre, t);
                    for (std::size_t i = 0; i < ff; ++i) row[i] = static_cast<float>(h_pre_[i]);
                }
                if (capture_->has(Site::MlpDownOut)) {
                    auto row = capture_->row(l, Site::MlpDownOut, t);
                    for (std::size_t i = 0; i < d; ++i) row[i] = static_cast<float>(tmp_[i]);
                }
            }
            if (tr) {
                tr->ln2_mean[t] = mean;
                tr->ln2_rstd[t] = rstd;
                std::copy(a_.begin(), a_.end(), tr->bln.begin() + t * d);
                std::copy(h_pre_.begin(), h_pre_.end(), tr->h_pre.begin() + t * ff);
                std::copy(h_.begin(), h_.end(), tr->h.begin() + t * ff);
            }
            for (std::size_t i = 0; i < d; ++i) x_[i] += tmp_[i];
        }
        S mean{}, rstd{};
        layer_norm(x_.data(), w_.lnf_g, w_.lnf_b, a_.data(), d, &mean, &rstd);
        if (trace_) {
            std::copy(x_.begin(), x_.end(), trace_->x_final.begin() + t * d);
            std::copy(a_.begin(), a_.end(), trace_->f.begin() + t * d);
            trace_->lnf_mean[t] = mean;
            trace_->lnf_rstd[t] = rstd;
        }
        matvec(w_.unembed, a_.data(), logits, cfg_.vocab_size, d);
        ++t_;
    }

private:
    const Params<S>& w_;
    const ModelConfig& cfg_;
    CompiledHooks<S> hooks_;
    Capture* capture_;
    Trace<S>* trace_;
    std::size_t t_ = 0;
    std::vector<std::vector<S>> k_cache_, v_cache_;
    std::vector<S> x_, a_, q_, o_, tmp_, h_pre_, h_, scores_;
};

// -log softmax(logits)[target], max-subtracted, in double.
template <class S>
double token_nll(const S* logits, std::size_t V, TokenId target) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < V; ++i) mx = std::max(mx, static_cast<double>(logits[i]));
    double sum = 0;
    for (std::size_t i = 0; i < V; ++i) sum += std::exp(static_cast<double>(logits[i]) - mx);
    return std::log(sum) - (static_cast<double>(logits[static_cast<std::size_t>(target)]) - mx);
}

// Forward + backward over one sequence. `weight` multiplies the summed
// per-token NLL; gradients are accumulated into `grad`. Returns the summed
// (unweighted) NLL.
template <class S>
double accumulate_gradient(const Params<S>& w, std::span<const TokenId> tokens, double weight, Params<double>& grad);

}  // namespace aura::detail
