#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "san/mat.hpp"

namespace san {

// Per-head query-to-key attention distributions. Every query row of every
// head sums to 1 over the unmasked keys; under causal masking entry (i, j)
// is exactly 0 for j > i.
struct AttnWeights {
    int heads = 0;
    int lq = 0;
    int lk = 0;
    bool causal = false;
    std::vector<Mat> head;  // heads mats, each lq x lk

    AttnWeights() = default;
    AttnWeights(int h, int q, int k, bool c)
        : heads(h), lq(q), lk(k), causal(c), head(h, Mat(q, k)) {}
};

enum class ProjPresence {
    Full,         // q, k, v, o
    SharedSelf,   // v, o   (weights S come from the block bottom)
    SharedEncdec  // none   (the block bottom's output A is reused verbatim)
};

// Attention projections for one sub-layer. Discarded projections are absent,
// not zeroed; presence must match one of the three patterns above.
struct ProjectionSet {
    std::optional<Mat> wq, wk, wv, wo;

    ProjPresence presence() const {
        if (wq && wk && wv && wo) return ProjPresence::Full;
        if (!wq && !wk && wv && wo) return ProjPresence::SharedSelf;
        if (!wq && !wk && !wv && !wo) return ProjPresence::SharedEncdec;
        throw ConfigError("ProjectionSet: invalid presence pattern");
    }

    static ProjectionSet full(Mat q, Mat k, Mat v, Mat o) {
        ProjectionSet p;
        p.wq = std::move(q);
        p.wk = std::move(k);
        p.wv = std::move(v);
        p.wo = std::move(o);
        return p;
    }
    static ProjectionSet shared_self(Mat v, Mat o) {
        ProjectionSet p;
        p.wv = std::move(v);
        p.wo = std::move(o);
        return p;
    }
    static ProjectionSet shared_encdec() { return ProjectionSet{}; }
};

// Append-only rows with reserved capacity; the per-layer K/V stores.
struct RowStore {
    int cols = 0;
    int count = 0;
    std::vector<double> data;

    void reset(int c, int capacity) {
        cols = c;
        count = 0;
        data.clear();
        data.reserve(static_cast<size_t>(c) * capacity);
    }
    double* append_row() {
        data.resize(data.size() + cols);
        ++count;
        return data.data() + static_cast<size_t>(count - 1) * cols;
    }
    const double* row(int r) const { return data.data() + static_cast<size_t>(r) * cols; }
    bool active() const { return cols > 0; }
};

// Incremental decoding cache for one session. Self-attention layers append
// projected key rows (block bottoms only) and value rows (every layer that
// owns w_v). Enc-dec block bottoms hold the fixed projected encoder K and V;
// shared enc-dec layers hold nothing.
struct KVCache {
    struct SelfLayer {
        RowStore k;  // inactive unless the layer is a block bottom
        RowStore v;  // inactive for enc-dec-shared slots (unused there anyway)
    };
    struct EncdecLayer {
        Mat k_enc;  // l_src x d, block bottoms only
        Mat v_enc;
    };

    std::vector<SelfLayer> self_layers;
    std::vector<EncdecLayer> encdec_layers;
    int steps = 0;

    // owns_k[i]: layer i is a self-attention block bottom.
    void init(const std::vector<bool>& owns_k, int d, int capacity) {
        steps = 0;
        self_layers.assign(owns_k.size(), SelfLayer{});
        for (size_t i = 0; i < owns_k.size(); ++i) {
            if (owns_k[i]) self_layers[i].k.reset(d, capacity);
            self_layers[i].v.reset(d, capacity);
        }
        encdec_layers.assign(owns_k.size(), EncdecLayer{});
    }
};

namespace detail {

inline void check_div(int d_model, int h) {
    if (h <= 0 || d_model % h != 0)
        throw ConfigError("d_model " + std::to_string(d_model) +
                          " not divisible by heads " + std::to_string(h));
}

// out[j] = sum_k x[k] * w[k][j] over w columns [c0, c0+n).
inline void vecmat_cols(const double* x, const Mat& w, int c0, int n, double* out) {
    for (int j = 0; j < n; ++j) out[j] = 0.0;
    for (int k = 0; k < w.rows; ++k) {
        const double xk = x[k];
        const double* wr = w.row(k) + c0;
        for (int j = 0; j < n; ++j) out[j] += xk * wr[j];
    }
}

inline void vecmat(const double* x, const Mat& w, double* out) {
    vecmat_cols(x, w, 0, w.cols, out);
}

inline void softmax_inplace(double* v, int n) {
    double mx = v[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, v[j]);
    double z = 0.0;
    for (int j = 0; j < n; ++j) {
        v[j] = std::exp(v[j] - mx);
        z += v[j];
    }
    for (int j = 0; j < n; ++j) v[j] /= z;
}

}  // namespace detail

// Column-block slice [h*w, (h+1)*w) of m — one head's view.
inline Mat head_slice(const Mat& m, int h, int w) {
    Mat s(m.rows, w);
    for (int i = 0; i < m.rows; ++i) {
        const double* src = m.row(i) + h * w;
        double* dst = s.row(i);
        for (int j = 0; j < w; ++j) dst[j] = src[j];
    }
    return s;
}

// S = softmax(q k^T / sqrt(d_k)) for one head, optionally causal.
inline Mat attn_weights(const Mat& q, const Mat& k, int d_k, bool causal) {
    if (q.cols != d_k || k.cols != d_k)
        throw ShapeError("attn_weights: q " + shape_str(q) + ", k " + shape_str(k) +
                         " vs d_k " + std::to_string(d_k));
    Mat scores = matmul_nt(q, k);
    const double inv = 1.0 / std::sqrt(static_cast<double>(d_k));
    for (double& v : scores.data) v *= inv;
    if (causal) {
        if (q.rows != k.rows)
            throw ShapeError("attn_weights: causal mask needs l_q == l_k");
        BoolMask mask = BoolMask::causal(q.rows);
        return softmax_rows(scores, &mask);
    }
    return softmax_rows(scores);
}

// A = S V; each output row is a convex combination of v rows.
inline Mat attn_apply(const Mat& s, const Mat& v) {
    if (s.cols != v.rows)
        throw ShapeError("attn_apply: s " + shape_str(s) + " * v " + shape_str(v));
    return matmul(s, v);
}

// Batched multi-head attention. Without shared_s this is the standard path:
// project, split into heads, per-head attn_weights + attn_apply, concat, w_o.
// With shared_s the Q/K projections are skipped and the given weights are
// applied to this layer's own projected values.
inline std::pair<Mat, AttnWeights> multi_head(const Mat& x_q, const Mat& x_kv,
                                              const ProjectionSet& proj, int h,
                                              bool causal,
                                              const AttnWeights* shared_s = nullptr) {
    const ProjPresence pres = proj.presence();
    if (shared_s && pres != ProjPresence::SharedSelf)
        throw ConfigError("multi_head: shared weights given but projections not SHARED_SELF");
    if (!shared_s && pres != ProjPresence::Full)
        throw ConfigError("multi_head: no shared weights but Q/K projections absent");

    const int d_model = x_q.cols;
    detail::check_div(d_model, h);
    const int dk = d_model / h;

    Mat v_all = matmul(x_kv, *proj.wv);
    Mat ctx(x_q.rows, v_all.cols);
    AttnWeights s_out;

    if (!shared_s) {
        Mat q_all = matmul(x_q, *proj.wq);
        Mat k_all = matmul(x_kv, *proj.wk);
        s_out = AttnWeights(h, x_q.rows, x_kv.rows, causal);
        for (int head = 0; head < h; ++head) {
            Mat s = attn_weights(head_slice(q_all, head, dk),
                                 head_slice(k_all, head, dk), dk, causal);
            Mat c = attn_apply(s, head_slice(v_all, head, dk));
            for (int i = 0; i < ctx.rows; ++i) {
                double* dst = ctx.row(i) + head * dk;
                const double* src = c.row(i);
                for (int j = 0; j < dk; ++j) dst[j] = src[j];
            }
            s_out.head[head] = std::move(s);
        }
    } else {
        if (shared_s->heads != h || shared_s->lq != x_q.rows || shared_s->lk != x_kv.rows)
            throw ShapeError("multi_head: shared weights shape mismatch");
        s_out = *shared_s;
        for (int head = 0; head < h; ++head) {
            Mat c = attn_apply(shared_s->head[head], head_slice(v_all, head, dk));
            for (int i = 0; i < ctx.rows; ++i) {
                double* dst = ctx.row(i) + head * dk;
                const double* src = c.row(i);
                for (int j = 0; j < dk; ++j) dst[j] = src[j];
            }
        }
    }
    return {matmul(ctx, *proj.wo), std::move(s_out)};
}

// One incremental self-attention step for a single layer. x_new is the
// newest position (1 x d_model, already layer-normed by the caller). Block
// bottoms project and cache a key row and compute the step's attention row;
// shared layers append only their value row and apply shared_s_row to it.
// Returns the sub-layer output row and the attention row (h x t).
inline std::pair<Mat, Mat> self_attn_step(KVCache& cache, int layer, const Mat& x_new,
                                          const ProjectionSet& proj, int h,
                                          const Mat* shared_s_row = nullptr) {
    if (x_new.rows != 1) throw ShapeError("self_attn_step: x_new must be a single row");
    const int d_model = x_new.cols;
    detail::check_div(d_model, h);
    const int dk = d_model / h;
    const ProjPresence pres = proj.presence();
    auto& lay = cache.self_layers.at(layer);

    if (pres == ProjPresence::Full) {
        if (shared_s_row)
            throw ConfigError("self_attn_step: shared row given to a FULL layer");
        if (!lay.k.active()) throw StateError("self_attn_step: layer owns no key store");
        if (lay.k.count != lay.v.count)
            throw StateError("self_attn_step: key/value stores out of step");
        detail::vecmat(x_new.row(0), *proj.wk, lay.k.append_row());
        detail::vecmat(x_new.row(0), *proj.wv, lay.v.append_row());
        const int t = lay.k.count;

        std::vector<double> q(d_model);
        detail::vecmat(x_new.row(0), *proj.wq, q.data());

        Mat s_row(h, t);
        Mat ctx(1, d_model);
        const double inv = 1.0 / std::sqrt(static_cast<double>(dk));
        for (int head = 0; head < h; ++head) {
            double* s = s_row.row(head);
            const double* qh = q.data() + head * dk;
            for (int r = 0; r < t; ++r) {
                const double* kr = lay.k.row(r) + head * dk;
                double acc = 0.0;
                for (int j = 0; j < dk; ++j) acc += qh[j] * kr[j];
                s[r] = acc * inv;
            }
            detail::softmax_inplace(s, t);
            double* c = ctx.row(0) + head * dk;
            for (int r = 0; r < t; ++r) {
                const double* vr = lay.v.row(r) + head * dk;
                const double sr = s[r];
                for (int j = 0; j < dk; ++j) c[j] += sr * vr[j];
            }
        }
        Mat out(1, d_model);
        detail::vecmat(ctx.row(0), *proj.wo, out.row(0));
        return {std::move(out), std::move(s_row)};
    }

    if (pres != ProjPresence::SharedSelf)
        throw ConfigError("self_attn_step: layer has no value projection");
    if (!shared_s_row)
        throw ConfigError("self_attn_step: SHARED_SELF layer needs the block row");
    detail::vecmat(x_new.row(0), *proj.wv, lay.v.append_row());
    const int t = lay.v.count;
    if (shared_s_row->rows != h || shared_s_row->cols != t)
        throw StateError("self_attn_step: shared row covers " +
                         std::to_string(shared_s_row->cols) + " steps, cache has " +
                         std::to_string(t));

    Mat ctx(1, d_model);
    for (int head = 0; head < h; ++head) {
        const double* s = shared_s_row->row(head);
        double* c = ctx.row(0) + head * dk;
        for (int r = 0; r < t; ++r) {
            const double* vr = lay.v.row(r) + head * dk;
            const double sr = s[r];
            for (int j = 0; j < dk; ++j) c[j] += sr * vr[j];
        }
    }
    Mat out(1, d_model);
    detail::vecmat(ctx.row(0), *proj.wo, out.row(0));
    return {std::move(out), *shared_s_row};
}

// Enc-dec attention at a block bottom: S from x_q vs the projected encoder
// keys, A = concat-heads(S V) w_o. A is the tensor reused verbatim by the
// shared layers above.
inline std::pair<Mat, AttnWeights> encdec_block_bottom(const Mat& x_q, const Mat& enc_out,
                                                       const ProjectionSet& proj, int h) {
    if (proj.presence() != ProjPresence::Full)
        throw ConfigError("encdec_block_bottom: projections must be FULL");
    return multi_head(x_q, enc_out, proj, h, /*causal=*/false);
}

}  // namespace san
