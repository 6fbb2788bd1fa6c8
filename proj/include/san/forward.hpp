#pragma once

#include <vector>

#include "san/model.hpp"

namespace san {

namespace detail {

inline void check_tokens(const std::vector<int>& ids, const ModelConfig& cfg) {
    if (static_cast<int>(ids.size()) > cfg.max_len)
        throw CapacityError("sequence length " + std::to_string(ids.size()) +
                            " exceeds max_len " + std::to_string(cfg.max_len));
    for (int id : ids)
        if (id < 0 || id >= cfg.vocab)
            throw InputError("token id " + std::to_string(id) + " out of range [0, " +
                             std::to_string(cfg.vocab) + ")");
}

// Token embedding rows scaled by sqrt(d_model), plus position encodings.
inline Mat embed_sequence(const ModelParams& p, const std::vector<int>& ids) {
    const int d = p.config.d_model;
    const double s = std::sqrt(static_cast<double>(d));
    static thread_local Mat pe;
    if (pe.rows < p.config.max_len || pe.cols != d)
        pe = position_encodings(p.config.max_len, d);
    Mat x(static_cast<int>(ids.size()), d);
    for (size_t i = 0; i < ids.size(); ++i) {
        const double* e = p.embed.row(ids[i]);
        const double* pos = pe.row(static_cast<int>(i));
        double* xi = x.row(static_cast<int>(i));
        for (int j = 0; j < d; ++j) xi[j] = s * e[j] + pos[j];
    }
    return x;
}

inline Mat apply_ffn(const Mat& x, const FfnParams& f) {
    Mat h = matmul(x, f.w1);
    for (int i = 0; i < h.rows; ++i) {
        double* hi = h.row(i);
        for (int j = 0; j < h.cols; ++j) {
            hi[j] += f.b1.data[j];
            if (hi[j] < 0) hi[j] = 0;
        }
    }
    Mat y = matmul(h, f.w2);
    for (int i = 0; i < y.rows; ++i) {
        double* yi = y.row(i);
        for (int j = 0; j < y.cols; ++j) yi[j] += f.b2.data[j];
    }
    return y;
}

inline void add_inplace(Mat& x, const Mat& delta) {
    for (size_t i = 0; i < x.data.size(); ++i) x.data[i] += delta.data[i];
}

}  // namespace detail

// Encoder stack output for a source sentence (pre-norm wiring, honors
// encoder-side sharing). Optionally captures per-layer self-attention.
inline Mat encode(const ModelParams& p, const std::vector<int>& src,
                  std::vector<AttnWeights>* capture = nullptr) {
    detail::check_tokens(src, p.config);
    if (src.empty()) throw InputError("encode: empty source");
    Mat x = detail::embed_sequence(p, src);
    std::vector<AttnWeights> block_s(p.config.enc_layers);
    for (int i = 0; i < p.config.enc_layers; ++i) {
        const auto& lay = p.enc[i];
        const int bottom = p.enc_bottoms[i];
        Mat u = layer_norm(x, lay.ln_self.gain, lay.ln_self.bias, kLayerNormEps);
        auto [out, s] =
            (bottom == i)
                ? multi_head(u, u, lay.self, p.config.heads, /*causal=*/false)
                : multi_head(u, u, lay.self, p.config.heads, /*causal=*/false,
                             &block_s[bottom]);
        if (bottom == i) block_s[i] = s;
        detail::add_inplace(x, out);
        Mat f = detail::apply_ffn(
            layer_norm(x, lay.ln_ffn.gain, lay.ln_ffn.bias, kLayerNormEps), lay.ffn);
        detail::add_inplace(x, f);
        if (capture) capture->push_back(std::move(s));
    }
    return layer_norm(x, p.enc_final.gain, p.enc_final.bias, kLayerNormEps);
}

struct TeacherForward {
    Mat logits;                        // n x vocab, one row per decoder position
    std::vector<AttnWeights> self_s;   // per decoder layer (shared layers report
    std::vector<AttnWeights> encdec_s; // the block bottom's weights)
};

// Full-sequence teacher-forced forward with causal masking. The decoder input
// is [BOS, tgt_0, ..., tgt_{n-2}]; row i of logits predicts tgt_i. Used for
// training targets, divergence analysis, and as the incremental-decoding
// oracle.
inline TeacherForward forward_teacher(const ModelParams& p, const std::vector<int>& src,
                                      const std::vector<int>& tgt) {
    detail::check_tokens(tgt, p.config);
    if (tgt.empty()) throw InputError("forward_teacher: empty target");
    Mat enc_out = encode(p, src);

    std::vector<int> dec_in(tgt.size());
    dec_in[0] = kBos;
    for (size_t i = 1; i < tgt.size(); ++i) dec_in[i] = tgt[i - 1];
    detail::check_tokens(dec_in, p.config);

    TeacherForward r;
    Mat x = detail::embed_sequence(p, dec_in);
    std::vector<AttnWeights> self_block(p.config.dec_layers);
    std::vector<Mat> a_block(p.config.dec_layers);  // shared enc-dec outputs
    std::vector<AttnWeights> encdec_block(p.config.dec_layers);

    for (int i = 0; i < p.config.dec_layers; ++i) {
        const auto& lay = p.dec[i];
        const int sb = p.self_bottoms[i];
        const int eb = p.encdec_bottoms[i];

        Mat u = layer_norm(x, lay.ln_self.gain, lay.ln_self.bias, kLayerNormEps);
        auto [self_out, s] =
            (sb == i) ? multi_head(u, u, lay.self, p.config.heads, /*causal=*/true)
                      : multi_head(u, u, lay.self, p.config.heads, /*causal=*/true,
                                   &self_block[sb]);
        if (sb == i) self_block[i] = s;
        detail::add_inplace(x, self_out);
        r.self_s.push_back(std::move(s));

        if (eb == i) {
            Mat v = layer_norm(x, lay.ln_encdec.gain, lay.ln_encdec.bias, kLayerNormEps);
            auto [a, es] = encdec_block_bottom(v, enc_out, lay.encdec, p.config.heads);
            a_block[i] = a;
            encdec_block[i] = es;
            detail::add_inplace(x, a);
            r.encdec_s.push_back(std::move(es));
        } else {
            // Shared layer: the block bottom's A is added verbatim; the
            // sub-layer ignores its own input (its norm parameters are dead).
            detail::add_inplace(x, a_block[eb]);
            r.encdec_s.push_back(encdec_block[eb]);
        }

        Mat f = detail::apply_ffn(
            layer_norm(x, lay.ln_ffn.gain, lay.ln_ffn.bias, kLayerNormEps), lay.ffn);
        detail::add_inplace(x, f);
    }

    Mat y = layer_norm(x, p.dec_final.gain, p.dec_final.bias, kLayerNormEps);
    r.logits = matmul(y, p.out_w);
    for (int i = 0; i < r.logits.rows; ++i) {
        double* row = r.logits.row(i);
        for (int j = 0; j < r.logits.cols; ++j) row[j] += p.out_b.data[j];
    }
    return r;
}

}  // namespace san
