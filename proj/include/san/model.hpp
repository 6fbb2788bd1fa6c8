#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "san/attention.hpp"
#include "san/mat.hpp"

namespace san {

// Reserved token ids. Content tokens start at kContentBase.
inline constexpr int kBos = 0;
inline constexpr int kEos = 1;
inline constexpr int kContentBase = 2;

inline constexpr double kLayerNormEps = 1e-6;

struct ModelConfig {
    int enc_layers = 6;
    int dec_layers = 6;
    int heads = 8;
    int d_model = 512;
    int d_k = 64;
    int d_v = 64;
    int d_ff = 2048;
    int vocab = 1024;
    int max_len = 128;

    void validate() const {
        if (enc_layers < 1 || dec_layers < 1 || heads < 1 || d_model < 1 ||
            d_ff < 1 || vocab < 3 || max_len < 1)
            throw ConfigError("ModelConfig: non-positive field");
        if (d_model != heads * d_k || d_model != heads * d_v)
            throw ConfigError("ModelConfig: d_model must equal heads*d_k and heads*d_v");
    }

    static ModelConfig paper_base() { return ModelConfig{}; }

    static ModelConfig make(int enc, int dec, int h, int dm, int dff, int vocab,
                            int max_len) {
        ModelConfig c;
        c.enc_layers = enc;
        c.dec_layers = dec;
        c.heads = h;
        c.d_model = dm;
        c.d_k = dm / h;
        c.d_v = dm / h;
        c.d_ff = dff;
        c.vocab = vocab;
        c.max_len = max_len;
        c.validate();
        return c;
    }
};

// Ordered block sizes partitioning a layer stack, kept separately for
// decoder self-attention, decoder enc-dec attention, and encoder
// self-attention. The sizes of each list sum to the stack depth.
struct SharingPolicy {
    std::vector<int> self_blocks;
    std::vector<int> encdec_blocks;
    std::vector<int> enc_blocks;

    static std::vector<int> all_ones(int m) { return std::vector<int>(m, 1); }

    static SharingPolicy baseline(const ModelConfig& cfg) {
        SharingPolicy p;
        p.self_blocks = all_ones(cfg.dec_layers);
        p.encdec_blocks = all_ones(cfg.dec_layers);
        p.enc_blocks = all_ones(cfg.enc_layers);
        return p;
    }

    bool is_baseline() const {
        auto ones = [](const std::vector<int>& b) {
            for (int x : b)
                if (x != 1) return false;
            return true;
        };
        return ones(self_blocks) && ones(encdec_blocks) && ones(enc_blocks);
    }

    bool operator==(const SharingPolicy& o) const {
        return self_blocks == o.self_blocks && encdec_blocks == o.encdec_blocks &&
               enc_blocks == o.enc_blocks;
    }

    void validate(const ModelConfig& cfg) const {
        check_partition(self_blocks, cfg.dec_layers, "self");
        check_partition(encdec_blocks, cfg.dec_layers, "encdec");
        check_partition(enc_blocks, cfg.enc_layers, "enc");
    }

    static void check_partition(const std::vector<int>& blocks, int m,
                                const std::string& kind) {
        int sum = 0;
        for (int b : blocks) {
            if (b < 1) throw ConfigError("policy: block size < 1 in " + kind);
            sum += b;
        }
        if (sum != m)
            throw ConfigError("policy: " + kind + " blocks sum to " +
                              std::to_string(sum) + ", stack has " + std::to_string(m));
    }

    // bottoms[i] = index of the block-bottom layer that layer i belongs to.
    static std::vector<int> bottoms_of(const std::vector<int>& blocks) {
        std::vector<int> out;
        int layer = 0;
        for (int b : blocks) {
            for (int i = 0; i < b; ++i) out.push_back(layer);
            layer += b;
        }
        return out;
    }
};

struct LayerNormParams {
    Mat gain;  // 1 x d
    Mat bias;  // 1 x d
};

struct FfnParams {
    Mat w1;  // d x d_ff
    Mat b1;  // 1 x d_ff
    Mat w2;  // d_ff x d
    Mat b2;  // 1 x d
};

struct EncLayerParams {
    LayerNormParams ln_self;
    ProjectionSet self;
    LayerNormParams ln_ffn;
    FfnParams ffn;
};

struct DecLayerParams {
    LayerNormParams ln_self;
    ProjectionSet self;
    LayerNormParams ln_encdec;
    ProjectionSet encdec;  // SHARED_ENCDEC layers own no projections at all
    LayerNormParams ln_ffn;
    FfnParams ffn;
};

// All model parameters. Layers at a block bottom hold FULL projections;
// other layers hold the reduced pattern their sharing mode dictates.
// Layer-norm gains/biases exist for every sub-layer regardless of sharing.
struct ModelParams {
    ModelConfig config;
    SharingPolicy policy;
    Mat embed;  // vocab x d, shared source/target embedding
    std::vector<EncLayerParams> enc;
    LayerNormParams enc_final;
    std::vector<DecLayerParams> dec;
    LayerNormParams dec_final;
    Mat out_w;  // d x vocab (untied)
    Mat out_b;  // 1 x vocab

    std::vector<int> enc_bottoms;     // per encoder layer
    std::vector<int> self_bottoms;    // per decoder layer
    std::vector<int> encdec_bottoms;  // per decoder layer

    // Visit every present tensor in canonical (manifest) order.
    void for_each_tensor(const std::function<void(const std::string&, Mat&)>& fn) {
        auto ln = [&](const std::string& p, LayerNormParams& n) {
            fn(p + ".g", n.gain);
            fn(p + ".b", n.bias);
        };
        auto proj = [&](const std::string& p, ProjectionSet& ps) {
            if (ps.wq) fn(p + ".wq", *ps.wq);
            if (ps.wk) fn(p + ".wk", *ps.wk);
            if (ps.wv) fn(p + ".wv", *ps.wv);
            if (ps.wo) fn(p + ".wo", *ps.wo);
        };
        auto ffn = [&](const std::string& p, FfnParams& f) {
            fn(p + ".w1", f.w1);
            fn(p + ".b1", f.b1);
            fn(p + ".w2", f.w2);
            fn(p + ".b2", f.b2);
        };
        fn("embed", embed);
        for (size_t i = 0; i < enc.size(); ++i) {
            std::string base = "enc." + std::to_string(i);
            ln(base + ".self.ln", enc[i].ln_self);
            proj(base + ".self", enc[i].self);
            ln(base + ".ffn.ln", enc[i].ln_ffn);
            ffn(base + ".ffn", enc[i].ffn);
        }
        ln("enc.final_ln", enc_final);
        for (size_t i = 0; i < dec.size(); ++i) {
            std::string base = "dec." + std::to_string(i);
            ln(base + ".self.ln", dec[i].ln_self);
            proj(base + ".self", dec[i].self);
            ln(base + ".encdec.ln", dec[i].ln_encdec);
            proj(base + ".encdec", dec[i].encdec);
            ln(base + ".ffn.ln", dec[i].ln_ffn);
            ffn(base + ".ffn", dec[i].ffn);
        }
        ln("dec.final_ln", dec_final);
        fn("out.w", out_w);
        fn("out.b", out_b);
    }

    void for_each_tensor(
        const std::function<void(const std::string&, const Mat&)>& fn) const {
        const_cast<ModelParams*>(this)->for_each_tensor(
            [&](const std::string& n, Mat& m) { fn(n, m); });
    }
};

// Sinusoidal position encodings, rows 0..max_len-1.
inline Mat position_encodings(int max_len, int d_model) {
    Mat pe(max_len, d_model);
    for (int pos = 0; pos < max_len; ++pos) {
        for (int i = 0; i < d_model / 2; ++i) {
            double angle = pos * std::exp(-std::log(10000.0) * (2.0 * i) / d_model);
            pe.at(pos, 2 * i) = std::sin(angle);
            if (2 * i + 1 < d_model) pe.at(pos, 2 * i + 1) = std::cos(angle);
        }
    }
    return pe;
}

// Deterministic initialization: Gaussian std = d_model^{-1/2} for weight
// matrices, ones/zeros for norms, zeros for biases. Discarded projections
// are absent, not zeroed.
inline ModelParams build(const ModelConfig& config, const SharingPolicy& policy,
                         uint64_t seed) {
    config.validate();
    policy.validate(config);

    const int d = config.d_model;
    const double std_dev = 1.0 / std::sqrt(static_cast<double>(d));
    Rng rng(seed);

    ModelParams p;
    p.config = config;
    p.policy = policy;
    p.enc_bottoms = SharingPolicy::bottoms_of(policy.enc_blocks);
    p.self_bottoms = SharingPolicy::bottoms_of(policy.self_blocks);
    p.encdec_bottoms = SharingPolicy::bottoms_of(policy.encdec_blocks);

    auto gauss = [&](int r, int c) { return seeded_gaussian(r, c, std_dev, rng); };
    auto norm = [&] {
        LayerNormParams n;
        n.gain = Mat(1, d);
        for (double& v : n.gain.data) v = 1.0;
        n.bias = Mat(1, d);
        return n;
    };
    auto ffn = [&] {
        FfnParams f;
        f.w1 = gauss(d, config.d_ff);
        f.b1 = Mat(1, config.d_ff);
        f.w2 = gauss(config.d_ff, d);
        f.b2 = Mat(1, d);
        return f;
    };

    p.embed = gauss(config.vocab, d);
    for (int i = 0; i < config.enc_layers; ++i) {
        EncLayerParams lay;
        lay.ln_self = norm();
        if (p.enc_bottoms[i] == i)
            lay.self = ProjectionSet::full(gauss(d, d), gauss(d, d), gauss(d, d),
                                           gauss(d, d));
        else
            lay.self = ProjectionSet::shared_self(gauss(d, d), gauss(d, d));
        lay.ln_ffn = norm();
        lay.ffn = ffn();
        p.enc.push_back(std::move(lay));
    }
    p.enc_final = norm();
    for (int i = 0; i < config.dec_layers; ++i) {
        DecLayerParams lay;
        lay.ln_self = norm();
        if (p.self_bottoms[i] == i)
            lay.self = ProjectionSet::full(gauss(d, d), gauss(d, d), gauss(d, d),
                                           gauss(d, d));
        else
            lay.self = ProjectionSet::shared_self(gauss(d, d), gauss(d, d));
        lay.ln_encdec = norm();
        if (p.encdec_bottoms[i] == i)
            lay.encdec = ProjectionSet::full(gauss(d, d), gauss(d, d), gauss(d, d),
                                             gauss(d, d));
        else
            lay.encdec = ProjectionSet::shared_encdec();
        lay.ln_ffn = norm();
        lay.ffn = ffn();
        p.dec.push_back(std::move(lay));
    }
    p.dec_final = norm();
    p.out_w = gauss(d, config.vocab);
    p.out_b = Mat(1, config.vocab);
    return p;
}

// ---------------------------------------------------------------------------
// Accounting
// ---------------------------------------------------------------------------

// Exact parameter count under a policy. Shared layers exclude their absent
// projections; everything else (embeddings, FFN, norms, biases) is counted.
inline int64_t count_params(const ModelConfig& cfg, const SharingPolicy& policy) {
    cfg.validate();
    policy.validate(cfg);
    const int64_t d = cfg.d_model;
    const int64_t dff = cfg.d_ff;
    const int64_t proj = d * d;
    const int64_t norm = 2 * d;
    const int64_t ffn = d * dff + dff + dff * d + d;

    auto enc_bottoms = SharingPolicy::bottoms_of(policy.enc_blocks);
    auto self_bottoms = SharingPolicy::bottoms_of(policy.self_blocks);
    auto encdec_bottoms = SharingPolicy::bottoms_of(policy.encdec_blocks);

    int64_t total = static_cast<int64_t>(cfg.vocab) * d;  // embed
    for (int i = 0; i < cfg.enc_layers; ++i) {
        int64_t self_proj = (enc_bottoms[i] == i) ? 4 * proj : 2 * proj;
        total += norm + self_proj + norm + ffn;
    }
    total += norm;  // enc final
    for (int i = 0; i < cfg.dec_layers; ++i) {
        int64_t self_proj = (self_bottoms[i] == i) ? 4 * proj : 2 * proj;
        int64_t encdec_proj = (encdec_bottoms[i] == i) ? 4 * proj : 0;
        total += norm + self_proj + norm + encdec_proj + norm + ffn;
    }
    total += norm;                                     // dec final
    total += d * static_cast<int64_t>(cfg.vocab) + cfg.vocab;  // out proj + bias
    return total;
}

// Multiply-accumulate count of decode step t under caching: per-step
// projections, the new QK^T row, the S V row, and the FFN. The enc-dec terms
// assume a source as long as the generated prefix (l_src = t); per-sentence
// costs (encoder stack, enc-dec K/V projections) are excluded — see
// estimate_encode_flops. Output-vocab projection is policy-independent and
// excluded as well.
inline int64_t estimate_step_flops(const ModelConfig& cfg, const SharingPolicy& policy,
                                   int t) {
    if (t < 1) throw RangeError("estimate_step_flops: t must be >= 1");
    cfg.validate();
    policy.validate(cfg);
    const int64_t d = cfg.d_model;
    const int64_t l_src = t;

    auto self_bottoms = SharingPolicy::bottoms_of(policy.self_blocks);
    auto encdec_bottoms = SharingPolicy::bottoms_of(policy.encdec_blocks);

    int64_t total = 0;
    for (int i = 0; i < cfg.dec_layers; ++i) {
        if (self_bottoms[i] == i)
            total += 4 * d * d + 2 * t * d;  // q,k,v,o projections + scores + S V
        else
            total += 2 * d * d + t * d;  // v,o projections + S V
        if (encdec_bottoms[i] == i)
            total += 2 * d * d + 2 * l_src * d;  // q,o projections + scores + S V
        // shared enc-dec layers reuse A: zero per-step MACs
        total += 2 * d * cfg.d_ff;
    }
    return total;
}

// Per-sentence encoder MACs for a source of length l_src, honoring
// encoder-side sharing. Pairs with estimate_step_flops for per-token
// comparisons between encoder- and decoder-side savings.
inline int64_t estimate_encode_flops(const ModelConfig& cfg, const SharingPolicy& policy,
                                     int l_src) {
    if (l_src < 1) throw RangeError("estimate_encode_flops: l_src must be >= 1");
    cfg.validate();
    policy.validate(cfg);
    const int64_t d = cfg.d_model;
    const int64_t l = l_src;
    auto bottoms = SharingPolicy::bottoms_of(policy.enc_blocks);

    int64_t total = 0;
    for (int i = 0; i < cfg.enc_layers; ++i) {
        if (bottoms[i] == i)
            total += 4 * l * d * d + 2 * l * l * d;
        else
            total += 2 * l * d * d + l * l * d;
        total += 2 * l * d * cfg.d_ff;
    }
    return total;
}

}  // namespace san
