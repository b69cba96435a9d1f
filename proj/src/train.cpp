#include <cmath>
#include <iostream>
#include <numeric>

#include "aura/common.hpp"
#include "aura/toylm.hpp"
#include "engine.hpp"

namespace aura {
namespace detail {

namespace {

// dst[r, c] += a[r] * b[c]
template <class S>
void outer_add(std::vector<double>& dst, const double* a, const S* b, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        if (a[r] == 0.0) continue;
        double* row = dst.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) row[c] += a[r] * static_cast<double>(b[c]);
    }
}

// y[c] += sum_r W[r, c] x[r]
template <class S>
void matvec_t_add(const std::vector<S>& W, const double* x, double* y, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        if (x[r] == 0.0) continue;
        const S* w = W.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) y[c] += static_cast<double>(w[c]) * x[r];
    }
}

template <class S>
void layer_norm_backward(const S* x, S mean, S rstd, const std::vector<S>& g, const double* dy, double* dx,
                         std::vector<double>& dg, std::vector<double>& db, std::size_t d) {
    std::vector<double> xhat(d), dxhat(d);
    double m1 = 0, m2 = 0;
    for (std::size_t i = 0; i < d; ++i) {
        xhat[i] = (static_cast<double>(x[i]) - static_cast<double>(mean)) * static_cast<double>(rstd);
        dg[i] += dy[i] * xhat[i];
        db[i] += dy[i];
        dxhat[i] = dy[i] * static_cast<double>(g[i]);
        m1 += dxhat[i];
        m2 += dxhat[i] * xhat[i];
    }
    m1 /= static_cast<double>(d);
    m2 /= static_cast<double>(d);
    for (std::size_t i = 0; i < d; ++i) dx[i] += static_cast<double>(rstd) * (dxhat[i] - m1 - xhat[i] * m2);
}

}  // namespace

template <class S>
double accumulate_gradient(const Params<S>& w, std::span<const TokenId> tokens, double weight, Params<double>& grad) {
    const auto& cfg = w.cfg;
    const std::size_t T = tokens.size(), d = cfg.d_model, ff = cfg.d_ff, V = cfg.vocab_size;
    const std::size_t H = cfg.n_heads, hd = cfg.head_dim();
    if (T < 2) return 0.0;

    Trace<S> tr;
    tr.resize(cfg, T);
    std::vector<S> logits(T * V);
    {
        Decoder<S> dec(w, HookSet{}, nullptr, &tr);
        for (std::size_t t = 0; t < T; ++t) dec.step(tokens[t], logits.data() + t * V);
    }

    double total = 0;
    std::vector<double> dlogits(T * V, 0.0);
    for (std::size_t t = 0; t + 1 < T; ++t) {
        const S* lg = logits.data() + t * V;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < V; ++i) mx = std::max(mx, static_cast<double>(lg[i]));
        double sum = 0;
        for (std::size_t i = 0; i < V; ++i) sum += std::exp(static_cast<double>(lg[i]) - mx);
        const auto target = static_cast<std::size_t>(tokens[t + 1]);
        total += std::log(sum) - (static_cast<double>(lg[target]) - mx);
        double* dl = dlogits.data() + t * V;
        for (std::size_t i = 0; i < V; ++i) dl[i] = weight * std::exp(static_cast<double>(lg[i]) - mx) / sum;
        dl[target] -= weight;
    }

    std::vector<double> dx(T * d, 0.0);
    for (std::size_t t = 0; t + 1 < T; ++t) {
        const double* dl = dlogits.data() + t * V;
        outer_add(grad.unembed, dl, tr.f.data() + t * d, V, d);
        std::vector<double> df(d, 0.0);
        matvec_t_add(w.unembed, dl, df.data(), V, d);
        layer_norm_backward(tr.x_final.data() + t * d, tr.lnf_mean[t], tr.lnf_rstd[t], w.lnf_g, df.data(),
                            dx.data() + t * d, grad.lnf_g, grad.lnf_b, d);
    }

    const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));
    std::vector<double> dmid(T * d), dq(T * d), dk(T * d), dv(T * d), dvec(std::max(d, ff));
    for (std::size_t li = cfg.n_layers; li-- > 0;) {
        const auto& L = w.layers[li];
        const auto& lt = tr.layers[li];
        auto& G = grad.layers[li];

        // MLP block: x_out = x_mid + W_down gelu(W_up LN(x_mid) + b_up) + b_down
        dmid = dx;
        for (std::size_t t = 0; t < T; ++t) {
            const double* dm = dx.data() + t * d;
            for (std::size_t i = 0; i < d; ++i) G.b_down[i] += dm[i];
            outer_add(G.w_down, dm, lt.h.data() + t * ff, d, ff);
            std::vector<double> dh(ff, 0.0);
            matvec_t_add(L.w_down, dm, dh.data(), d, ff);
            for (std::size_t i = 0; i < ff; ++i) dh[i] *= gelu_grad(static_cast<double>(lt.h_pre[t * ff + i]));
            for (std::size_t i = 0; i < ff; ++i) G.b_up[i] += dh[i];
            outer_add(G.w_up, dh.data(), lt.bln.data() + t * d, ff, d);
            std::vector<double> db(d, 0.0);
            matvec_t_add(L.w_up, dh.data(), db.data(), ff, d);
            layer_norm_backward(lt.x_mid.data() + t * d, lt.ln2_mean[t], lt.ln2_rstd[t], L.ln2_g, db.data(),
                                dmid.data() + t * d, G.ln2_g, G.ln2_b, d);
        }

        // Attention block: x_mid = x_in + W_o attn(LN(x_in))
        std::fill(dq.begin(), dq.end(), 0.0);
        std::fill(dk.begin(), dk.end(), 0.0);
        std::fill(dv.begin(), dv.end(), 0.0);
        dx = dmid;
        for (std::size_t t = 0; t < T; ++t) {
            const double* dxm = dmid.data() + t * d;
            outer_add(G.wo, dxm, lt.o.data() + t * d, d, d);
            std::vector<double> dout(d, 0.0);
            matvec_t_add(L.wo, dxm, dout.data(), d, d);
            for (std::size_t h = 0; h < H; ++h) {
                const std::size_t off = h * hd;
                const S* p = lt.probs.data() + (h * T + t) * T;
                std::vector<double> dp(t + 1);
                double dot = 0;
                for (std::size_t j = 0; j <= t; ++j) {
                    const S* vj = lt.v.data() + j * d + off;
                    double acc = 0;
                    for (std::size_t i = 0; i < hd; ++i) {
                        acc += dout[off + i] * static_cast<double>(vj[i]);
                        dv[j * d + off + i] += static_cast<double>(p[j]) * dout[off + i];
                    }
                    dp[j] = acc;
                    dot += static_cast<double>(p[j]) * acc;
                }
                for (std::size_t j = 0; j <= t; ++j) {
                    const double ds = static_cast<double>(p[j]) * (dp[j] - dot) * att_scale;
                    if (ds == 0.0) continue;
                    const S* kj = lt.k.data() + j * d + off;
                    const S* qt = lt.q.data() + t * d + off;
                    for (std::size_t i = 0; i < hd; ++i) {
                        dq[t * d + off + i] += ds * static_cast<double>(kj[i]);
                        dk[j * d + off + i] += ds * static_cast<double>(qt[i]);
                    }
                }
            }
        }
        for (std::size_t t = 0; t < T; ++t) {
            const S* a = lt.a.data() + t * d;
            outer_add(G.wq, dq.data() + t * d, a, d, d);
            outer_add(G.wk, dk.data() + t * d, a, d, d);
            outer_add(G.wv, dv.data() + t * d, a, d, d);
            std::vector<double> da(d, 0.0);
            matvec_t_add(L.wq, dq.data() + t * d, da.data(), d, d);
            matvec_t_add(L.wk, dk.data() + t * d, da.data(), d, d);
            matvec_t_add(L.wv, dv.data() + t * d, da.data(), d, d);
            layer_norm_backward(lt.x_in.data() + t * d, lt.ln1_mean[t], lt.ln1_rstd[t], L.ln1_g, da.data(),
                                dx.data() + t * d, G.ln1_g, G.ln1_b, d);
        }
    }

    for (std::size_t t = 0; t < T; ++t) {
        const auto tok = static_cast<std::size_t>(tokens[t]);
        for (std::size_t i = 0; i < d; ++i) {
            grad.tok_emb[tok * d + i] += dx[t * d + i];
            grad.pos_emb[t * d + i] += dx[t * d + i];
        }
    }
    (void)dvec;
    return total;
}

template double accumulate_gradient<float>(const Params<float>&, std::span<const TokenId>, double, Params<double>&);
template double accumulate_gradient<double>(const Params<double>&, std::span<const TokenId>, double, Params<double>&);

}  // namespace detail

namespace {

std::size_t predicted_tokens(std::span<const std::vector<TokenId>> seqs) {
    std::size_t n = 0;
    for (const auto& s : seqs) n += s.size() > 1 ? s.size() - 1 : 0;
    return n;
}

template <class S>
double corpus_nll(const Params<S>& w, std::span<const std::vector<TokenId>> seqs) {
    double total = 0;
    const std::size_t V = w.cfg.vocab_size;
    std::vector<S> logits(V);
    for (const auto& seq : seqs) {
        detail::Decoder<S> dec(w, HookSet{});
        for (std::size_t t = 0; t < seq.size(); ++t) {
            dec.step(seq[t], logits.data());
            if (t + 1 < seq.size()) total += detail::token_nll(logits.data(), V, seq[t + 1]);
        }
    }
    const std::size_t n = predicted_tokens(seqs);
    return n ? total / static_cast<double>(n) : 0.0;
}

}  // namespace

Params<double> nll_gradient(const Params<double>& weights, std::span<const std::vector<TokenId>> sequences,
                            double* loss) {
    auto grad = Params<double>::zeros(weights.cfg);
    const std::size_t n = predicted_tokens(sequences);
    if (n == 0) fail(ErrorKind::EmptySlice, "no predicted tokens");
    const double weight = 1.0 / static_cast<double>(n);
    double total = 0;
    for (const auto& seq : sequences) total += detail::accumulate_gradient(weights, seq, weight, grad);
    if (loss) *loss = total / static_cast<double>(n);
    return grad;
}

double nll_mean(const Params<double>& weights, std::span<const std::vector<TokenId>> sequences) {
    return corpus_nll(weights, sequences);
}

ModelWeights train(const ModelWeights& weights, const ConceptCorpus& corpus, const Tokenizer& tok,
                   const TrainParams& params, TrainReport* report) {
    if (params.epochs == 0 || params.batch_size == 0 || !(params.learning_rate >= 0.0)) {
        fail(ErrorKind::InvalidConfig, "epochs and batch size must be positive, learning rate non-negative");
    }
    if (tok.vocab_size() != weights.cfg.vocab_size) {
        fail(ErrorKind::ShapeMismatch, "tokenizer vocabulary " + std::to_string(tok.vocab_size()) +
                                           " does not match model vocab " + std::to_string(weights.cfg.vocab_size));
    }
    std::vector<std::vector<TokenId>> seqs;
    seqs.reserve(corpus.size());
    for (const auto& s : corpus.sentences()) seqs.push_back(lm_sequence(tok, s.text, weights.cfg.context_len));

    ModelWeights w = weights;
    TrainReport rep;
    rep.initial_nll = corpus_nll(w, std::span<const std::vector<TokenId>>(seqs));

    std::vector<std::vector<float>*> params_list;
    w.visit([&](const std::string&, const std::vector<std::size_t>&, std::vector<float>& d) { params_list.push_back(&d); });
    std::vector<std::vector<double>> m1, m2;
    for (auto* p : params_list) {
        m1.emplace_back(p->size(), 0.0);
        m2.emplace_back(p->size(), 0.0);
    }

    std::vector<std::size_t> order(seqs.size());
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < params.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(params.seed, epoch));
        for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);

        double epoch_loss = 0;
        std::size_t epoch_tokens = 0;
        for (std::size_t start = 0; start < order.size(); start += params.batch_size) {
            const std::size_t end = std::min(order.size(), start + params.batch_size);
            std::size_t n_tok = 0;
            for (std::size_t i = start; i < end; ++i) n_tok += seqs[order[i]].size() - 1;
            auto grad = Params<double>::zeros(w.cfg);
            double batch_loss = 0;
            for (std::size_t i = start; i < end; ++i) {
                batch_loss += detail::accumulate_gradient(w, seqs[order[i]], 1.0 / static_cast<double>(n_tok), grad);
            }
            ++step;
            if (!std::isfinite(batch_loss)) {
                fail(ErrorKind::DivergedLoss, "non-finite loss at step " + std::to_string(step));
            }
            epoch_loss += batch_loss;
            epoch_tokens += n_tok;

            std::vector<const std::vector<double>*> grads;
            grad.visit([&](const std::string&, const std::vector<std::size_t>&, const std::vector<double>& d) {
                grads.push_back(&d);
            });
            const double bc1 = 1.0 - std::pow(params.beta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(params.beta2, static_cast<double>(step));
            for (std::size_t k = 0; k < params_list.size(); ++k) {
                auto& p = *params_list[k];
                const auto& g = *grads[k];
                for (std::size_t i = 0; i < p.size(); ++i) {
                    m1[k][i] = params.beta1 * m1[k][i] + (1.0 - params.beta1) * g[i];
                    m2[k][i] = params.beta2 * m2[k][i] + (1.0 - params.beta2) * g[i] * g[i];
                    const double upd = params.learning_rate * (m1[k][i] / bc1) / (std::sqrt(m2[k][i] / bc2) + params.eps);
                    p[i] = static_cast<float>(static_cast<double>(p[i]) - upd);
                }
            }
        }
        if (params.verbose) {
            std::cerr << "epoch " << epoch + 1 << "/" << params.epochs << " train nll "
                      << epoch_loss / static_cast<double>(epoch_tokens) << "\n";
        }
    }
    rep.final_nll = corpus_nll(w, std::span<const std::vector<TokenId>>(seqs));
    rep.steps = step;
    if (!std::isfinite(rep.final_nll)) fail(ErrorKind::DivergedLoss, "non-finite loss after step " + std::to_string(step));
    if (report) *report = rep;
    return w;
}

}  // namespace aura
