#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "san/forward.hpp"

namespace san {

// Per-sentence incremental decoding state. Single-owner: one session per
// worker; copy the whole session to branch (beam search does).
struct DecodeSession {
    const ModelParams* model = nullptr;
    KVCache cache;
    Mat enc_out;               // l_src x d, fixed for the sentence
    std::vector<int> prefix;   // tokens fed so far (starts with BOS)
    int step = 0;              // == prefix length == cache depth

    // scratch, reused across steps
    Mat x, u, q, a_row, ffn_h, logits;
};

inline DecodeSession make_session(const ModelParams& p, const std::vector<int>& src) {
    DecodeSession s;
    s.model = &p;
    s.enc_out = encode(p, src);

    std::vector<bool> owns_k(p.config.dec_layers);
    for (int i = 0; i < p.config.dec_layers; ++i) owns_k[i] = (p.self_bottoms[i] == i);
    s.cache.init(owns_k, p.config.d_model, p.config.max_len);

    // Enc-dec K/V are projected once per sentence at each block bottom and
    // reused across steps.
    for (int i = 0; i < p.config.dec_layers; ++i) {
        if (p.encdec_bottoms[i] == i) {
            s.cache.encdec_layers[i].k_enc = matmul(s.enc_out, *p.dec[i].encdec.wk);
            s.cache.encdec_layers[i].v_enc = matmul(s.enc_out, *p.dec[i].encdec.wv);
        }
    }

    const int d = p.config.d_model;
    s.x = Mat(1, d);
    s.u = Mat(1, d);
    s.q = Mat(1, d);
    s.a_row = Mat(1, d);
    s.ffn_h = Mat(1, p.config.d_ff);
    s.logits = Mat(1, p.config.vocab);
    return s;
}

namespace detail {

inline void layer_norm_row(const double* x, const LayerNormParams& n, int d,
                           double* out) {
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += x[j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
        double dv = x[j] - mean;
        var += dv * dv;
    }
    var /= d;
    double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    for (int j = 0; j < d; ++j)
        out[j] = n.gain.data[j] * ((x[j] - mean) * inv) + n.bias.data[j];
}

// Enc-dec attention for the newest position at a block bottom, using the
// session's fixed projected encoder K/V.
inline void encdec_step_row(const Mat& u, const ProjectionSet& proj, const Mat& k_enc,
                            const Mat& v_enc, int h, Mat& q_scratch, Mat& out) {
    const int d = u.cols;
    const int dk = d / h;
    const int l_src = k_enc.rows;
    detail::vecmat(u.row(0), *proj.wq, q_scratch.row(0));

    std::vector<double> s(l_src);
    std::vector<double> ctx(d, 0.0);
    const double inv = 1.0 / std::sqrt(static_cast<double>(dk));
    for (int head = 0; head < h; ++head) {
        const double* qh = q_scratch.row(0) + head * dk;
        for (int r = 0; r < l_src; ++r) {
            const double* kr = k_enc.row(r) + head * dk;
            double acc = 0.0;
            for (int j = 0; j < dk; ++j) acc += qh[j] * kr[j];
            s[r] = acc * inv;
        }
        softmax_inplace(s.data(), l_src);
        double* c = ctx.data() + head * dk;
        for (int r = 0; r < l_src; ++r) {
            const double* vr = v_enc.row(r) + head * dk;
            const double sr = s[r];
            for (int j = 0; j < dk; ++j) c[j] += sr * vr[j];
        }
    }
    detail::vecmat(ctx.data(), *proj.wo, out.row(0));
}

}  // namespace detail

// Advance the session by one token; returns logits for the next position.
// Appends to the cache exactly one row per owning layer.
inline const Mat& decode_step(DecodeSession& s, int token) {
    const ModelParams& p = *s.model;
    const int d = p.config.d_model;
    const int h = p.config.heads;
    if (s.step >= p.config.max_len)
        throw CapacityError("decode_step: session at max_len " +
                            std::to_string(p.config.max_len));
    if (token < 0 || token >= p.config.vocab)
        throw InputError("decode_step: token id out of range");

    static thread_local Mat pe;
    if (pe.rows < p.config.max_len || pe.cols != d)
        pe = position_encodings(p.config.max_len, d);
    const double es = std::sqrt(static_cast<double>(d));
    {
        const double* e = p.embed.row(token);
        const double* pos = pe.row(s.step);
        double* xi = s.x.row(0);
        for (int j = 0; j < d; ++j) xi[j] = es * e[j] + pos[j];
    }

    // Per-step shared state: block bottoms publish their attention row /
    // output row for the layers above within this step.
    std::vector<Mat> self_rows(p.config.dec_layers);
    std::vector<Mat> a_rows(p.config.dec_layers);

    for (int i = 0; i < p.config.dec_layers; ++i) {
        const auto& lay = p.dec[i];
        const int sb = p.self_bottoms[i];
        const int eb = p.encdec_bottoms[i];

        detail::layer_norm_row(s.x.row(0), lay.ln_self, d, s.u.row(0));
        auto [self_out, s_row] =
            (sb == i) ? self_attn_step(s.cache, i, s.u, lay.self, h)
                      : self_attn_step(s.cache, i, s.u, lay.self, h, &self_rows[sb]);
        if (sb == i) self_rows[i] = std::move(s_row);
        {
            double* xi = s.x.row(0);
            const double* o = self_out.row(0);
            for (int j = 0; j < d; ++j) xi[j] += o[j];
        }

        if (eb == i) {
            detail::layer_norm_row(s.x.row(0), lay.ln_encdec, d, s.u.row(0));
            detail::encdec_step_row(s.u, lay.encdec, s.cache.encdec_layers[i].k_enc,
                                    s.cache.encdec_layers[i].v_enc, h, s.q, s.a_row);
            a_rows[i] = s.a_row;
        }
        {
            double* xi = s.x.row(0);
            const double* a = a_rows[eb].row(0);
            for (int j = 0; j < d; ++j) xi[j] += a[j];
        }

        detail::layer_norm_row(s.x.row(0), lay.ln_ffn, d, s.u.row(0));
        {
            double* hid = s.ffn_h.row(0);
            detail::vecmat(s.u.row(0), lay.ffn.w1, hid);
            for (int j = 0; j < p.config.d_ff; ++j) {
                hid[j] += lay.ffn.b1.data[j];
                if (hid[j] < 0) hid[j] = 0;
            }
            detail::vecmat(hid, lay.ffn.w2, s.u.row(0));
            double* xi = s.x.row(0);
            for (int j = 0; j < d; ++j) xi[j] += s.u.row(0)[j] + lay.ffn.b2.data[j];
        }
    }

    detail::layer_norm_row(s.x.row(0), p.dec_final, d, s.u.row(0));
    detail::vecmat(s.u.row(0), p.out_w, s.logits.row(0));
    for (int j = 0; j < p.config.vocab; ++j) s.logits.row(0)[j] += p.out_b.data[j];

    s.prefix.push_back(token);
    ++s.step;
    ++s.cache.steps;
    return s.logits;
}

struct DecodeOptions {
    bool stop_at_eos = true;
};

namespace detail {

inline int argmax_row(const Mat& logits) {
    const double* r = logits.row(0);
    int best = 0;
    for (int j = 1; j < logits.cols; ++j)
        if (r[j] > r[best]) best = j;
    return best;
}

inline std::vector<double> log_softmax_row(const Mat& logits) {
    const double* r = logits.row(0);
    double mx = r[0];
    for (int j = 1; j < logits.cols; ++j) mx = std::max(mx, r[j]);
    double z = 0.0;
    for (int j = 0; j < logits.cols; ++j) z += std::exp(r[j] - mx);
    const double lse = mx + std::log(z);
    std::vector<double> out(logits.cols);
    for (int j = 0; j < logits.cols; ++j) out[j] = r[j] - lse;
    return out;
}

inline std::pair<std::vector<int>, double> greedy_with_logp(const ModelParams& p,
                                                            const std::vector<int>& src,
                                                            int max_len,
                                                            DecodeOptions opts) {
    DecodeSession s = make_session(p, src);
    std::vector<int> out;
    double logp = 0.0;
    int token = kBos;
    const int limit = std::min(max_len, p.config.max_len);
    for (int t = 0; t < limit; ++t) {
        const Mat& logits = decode_step(s, token);
        const int next = argmax_row(logits);
        logp += log_softmax_row(logits)[next];
        out.push_back(next);
        if (opts.stop_at_eos && next == kEos) break;
        token = next;
    }
    return {out, logp};
}

}  // namespace detail

// Greedy decoding: argmax each step until the end symbol or max_len.
inline std::vector<int> greedy_decode(const ModelParams& p, const std::vector<int>& src,
                                      int max_len, DecodeOptions opts = {}) {
    return detail::greedy_with_logp(p, src, max_len, opts).first;
}

// Length-normalized (score = log-prob / length) beam search. Every
// hypothesis carries its own cache. Never returns a hypothesis scoring
// below the greedy one under the same normalization.
inline std::vector<int> beam_decode(const ModelParams& p, const std::vector<int>& src,
                                    int beam, int max_len, DecodeOptions opts = {}) {
    if (beam < 1) throw ConfigError("beam_decode: beam must be >= 1");

    struct Hyp {
        std::vector<int> tokens;
        double logp = 0.0;
        int pending = kBos;  // token to feed at the next step
        DecodeSession session;
    };

    std::vector<Hyp> live;
    live.push_back(Hyp{{}, 0.0, kBos, make_session(p, src)});

    std::vector<int> best_tokens;
    double best_score = -std::numeric_limits<double>::infinity();
    auto complete = [&](const std::vector<int>& tokens, double logp) {
        if (tokens.empty()) return;
        double score = logp / static_cast<double>(tokens.size());
        if (score > best_score) {
            best_score = score;
            best_tokens = tokens;
        }
    };

    const int limit = std::min(max_len, p.config.max_len);
    for (int t = 0; t < limit && !live.empty(); ++t) {
        struct Cand {
            double logp;
            int parent;
            int token;
        };
        std::vector<Cand> cands;
        cands.reserve(live.size() * p.config.vocab);
        for (size_t i = 0; i < live.size(); ++i) {
            const Mat& logits = decode_step(live[i].session, live[i].pending);
            auto lp = detail::log_softmax_row(logits);
            for (int v = 0; v < p.config.vocab; ++v)
                cands.push_back({live[i].logp + lp[v], static_cast<int>(i), v});
        }
        std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
            if (a.logp != b.logp) return a.logp > b.logp;
            if (a.token != b.token) return a.token < b.token;
            return a.parent < b.parent;
        });

        const int keep = std::min<int>(beam, static_cast<int>(cands.size()));
        std::vector<int> parent_uses(live.size(), 0);
        for (int i = 0; i < keep; ++i) ++parent_uses[cands[i].parent];

        std::vector<Hyp> next;
        next.reserve(keep);
        for (int i = 0; i < keep; ++i) {
            const Cand& c = cands[i];
            Hyp h;
            h.tokens = live[c.parent].tokens;
            h.tokens.push_back(c.token);
            h.logp = c.logp;
            h.pending = c.token;
            if (--parent_uses[c.parent] == 0)
                h.session = std::move(live[c.parent].session);
            else
                h.session = live[c.parent].session;
            if (opts.stop_at_eos && c.token == kEos)
                complete(h.tokens, h.logp);
            else
                next.push_back(std::move(h));
        }
        live = std::move(next);
    }
    for (const Hyp& h : live) complete(h.tokens, h.logp);

    // Greedy floor: beam pruning can drop the greedy trajectory; returning
    // the better of the two keeps beam results at least as good as greedy.
    auto [g_tokens, g_logp] = detail::greedy_with_logp(p, src, max_len, opts);
    if (!g_tokens.empty()) complete(g_tokens, g_logp);
    return best_tokens;
}

}  // namespace san
