#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "san/decode.hpp"
#include "san/forward.hpp"
#include "san/policy.hpp"
#include "san/tape.hpp"

namespace san {

struct TrainConfig {
    int steps = 2000;
    int batch_tokens = 256;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double adam_eps = 1e-9;
    int warmup = 4000;
    double label_smoothing = 0.0;
    uint64_t seed = 1;
    int checkpoint_every = 200;

    void validate() const {
        if (steps < 0 || batch_tokens < 1) throw ConfigError("TrainConfig: steps/batch");
        if (!(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1))
            throw ConfigError("TrainConfig: betas must be in (0,1)");
        if (warmup < 1) throw ConfigError("TrainConfig: warmup must be >= 1");
        if (label_smoothing < 0 || label_smoothing >= 1)
            throw ConfigError("TrainConfig: label_smoothing in [0,1)");
        if (checkpoint_every < 1) throw ConfigError("TrainConfig: checkpoint_every");
    }
};

// Inverse-sqrt schedule with linear warmup; peaks at t == warmup.
inline double lr_at(int t, int d_model, int warmup) {
    if (t < 1) throw RangeError("lr_at: t must be >= 1");
    const double td = static_cast<double>(t);
    const double w = static_cast<double>(warmup);
    return std::pow(static_cast<double>(d_model), -0.5) *
           std::min(std::pow(td, -0.5), td * std::pow(w, -1.5));
}

// ---------------------------------------------------------------------------
// Teacher-forced graph on the tape
// ---------------------------------------------------------------------------

namespace detail {

struct LnRefs {
    Tape::Ref g, b;
};
struct ProjRefs {
    Tape::Ref wq, wk, wv, wo;
};
struct FfnRefs {
    Tape::Ref w1, b1, w2, b2;
};
struct EncLayerRefs {
    LnRefs ln_self;
    ProjRefs self;
    LnRefs ln_ffn;
    FfnRefs ffn;
};
struct DecLayerRefs {
    LnRefs ln_self;
    ProjRefs self;
    LnRefs ln_encdec;
    ProjRefs encdec;
    LnRefs ln_ffn;
    FfnRefs ffn;
};

// Leaf bindings for every present tensor, in canonical order. GradSet
// extraction walks `slots` so gradients come out aligned with ModelParams.
struct TapeModel {
    const ModelParams* params = nullptr;
    Tape::Ref embed;
    std::vector<EncLayerRefs> enc;
    LnRefs enc_final;
    std::vector<DecLayerRefs> dec;
    LnRefs dec_final;
    Tape::Ref out_w, out_b;
    Tape::Ref pe;  // constant
    std::vector<std::pair<std::string, Tape::Ref>> slots;
};

inline TapeModel bind_model(Tape& t, const ModelParams& p) {
    TapeModel tm;
    tm.params = &p;
    // for_each_tensor yields canonical order; bind a leaf per tensor and
    // mirror the structure for convenient access below.
    std::vector<std::pair<std::string, Tape::Ref>> by_name;
    const_cast<ModelParams&>(p).for_each_tensor([&](const std::string& name, Mat& m) {
        Tape::Ref r = t.leaf(m, /*needs_grad=*/true);
        by_name.emplace_back(name, r);
    });
    tm.slots = by_name;
    size_t i = 0;
    auto next = [&](const char* suffix) {
        (void)suffix;
        return by_name[i++].second;
    };
    tm.embed = next("embed");
    tm.enc.resize(p.enc.size());
    for (size_t l = 0; l < p.enc.size(); ++l) {
        auto& e = tm.enc[l];
        e.ln_self = {next("g"), next("b")};
        if (p.enc[l].self.wq) e.self.wq = next("wq");
        if (p.enc[l].self.wk) e.self.wk = next("wk");
        e.self.wv = next("wv");
        e.self.wo = next("wo");
        e.ln_ffn = {next("g"), next("b")};
        e.ffn = {next("w1"), next("b1"), next("w2"), next("b2")};
    }
    tm.enc_final = {next("g"), next("b")};
    tm.dec.resize(p.dec.size());
    for (size_t l = 0; l < p.dec.size(); ++l) {
        auto& dref = tm.dec[l];
        dref.ln_self = {next("g"), next("b")};
        if (p.dec[l].self.wq) dref.self.wq = next("wq");
        if (p.dec[l].self.wk) dref.self.wk = next("wk");
        dref.self.wv = next("wv");
        dref.self.wo = next("wo");
        dref.ln_encdec = {next("g"), next("b")};
        if (p.dec[l].encdec.wq) {
            dref.encdec.wq = next("wq");
            dref.encdec.wk = next("wk");
            dref.encdec.wv = next("wv");
            dref.encdec.wo = next("wo");
        }
        dref.ln_ffn = {next("g"), next("b")};
        dref.ffn = {next("w1"), next("b1"), next("w2"), next("b2")};
    }
    tm.dec_final = {next("g"), next("b")};
    tm.out_w = next("out.w");
    tm.out_b = next("out.b");

    tm.pe = t.constant(position_encodings(p.config.max_len, p.config.d_model));
    return tm;
}

inline Tape::Ref embed_sequence_tape(Tape& t, const TapeModel& tm,
                                     const std::vector<int>& ids) {
    const int d = tm.params->config.d_model;
    Tape::Ref x = ops::gather_rows(t, tm.embed, ids);
    x = ops::scale(t, x, std::sqrt(static_cast<double>(d)));
    Mat pe_slice(static_cast<int>(ids.size()), d);
    for (size_t i = 0; i < ids.size(); ++i)
        for (int j = 0; j < d; ++j)
            pe_slice.at(static_cast<int>(i), j) = t.value(tm.pe).at(static_cast<int>(i), j);
    return ops::add(t, x, t.constant(std::move(pe_slice)));
}

struct MhOut {
    Tape::Ref out;
    std::vector<Tape::Ref> s_heads;
};

inline MhOut multi_head_tape(Tape& t, Tape::Ref x_q, Tape::Ref x_kv,
                             const ProjRefs& proj, int h, int dk, bool causal,
                             const std::vector<Tape::Ref>* shared_s = nullptr) {
    MhOut r;
    Tape::Ref v_all = ops::matmul(t, x_kv, proj.wv);
    std::vector<Tape::Ref> ctx;
    if (!shared_s) {
        Tape::Ref q_all = ops::matmul(t, x_q, proj.wq);
        Tape::Ref k_all = ops::matmul(t, x_kv, proj.wk);
        for (int head = 0; head < h; ++head) {
            Tape::Ref qh = ops::slice_cols(t, q_all, head * dk, dk);
            Tape::Ref kh = ops::slice_cols(t, k_all, head * dk, dk);
            Tape::Ref vh = ops::slice_cols(t, v_all, head * dk, dk);
            Tape::Ref scores =
                ops::scale(t, ops::matmul_nt(t, qh, kh), 1.0 / std::sqrt(double(dk)));
            Tape::Ref s = ops::softmax_rows(t, scores, causal);
            r.s_heads.push_back(s);
            ctx.push_back(ops::matmul(t, s, vh));
        }
    } else {
        r.s_heads = *shared_s;
        for (int head = 0; head < h; ++head) {
            Tape::Ref vh = ops::slice_cols(t, v_all, head * dk, dk);
            ctx.push_back(ops::matmul(t, (*shared_s)[head], vh));
        }
    }
    r.out = ops::matmul(t, ops::concat_cols(t, ctx), proj.wo);
    return r;
}

inline Tape::Ref ffn_tape(Tape& t, Tape::Ref x, const FfnRefs& f) {
    Tape::Ref h = ops::relu(t, ops::add_rowvec(t, ops::matmul(t, x, f.w1), f.b1));
    return ops::add_rowvec(t, ops::matmul(t, h, f.w2), f.b2);
}

inline Tape::Ref encoder_tape(Tape& t, const TapeModel& tm, const std::vector<int>& src) {
    const ModelParams& p = *tm.params;
    const int h = p.config.heads;
    const int dk = p.config.d_model / h;
    Tape::Ref x = embed_sequence_tape(t, tm, src);
    std::vector<std::vector<Tape::Ref>> block_s(p.enc.size());
    for (size_t i = 0; i < p.enc.size(); ++i) {
        const auto& lay = tm.enc[i];
        const int bottom = p.enc_bottoms[i];
        Tape::Ref u = ops::layer_norm(t, x, lay.ln_self.g, lay.ln_self.b, kLayerNormEps);
        MhOut mh = (bottom == static_cast<int>(i))
                       ? multi_head_tape(t, u, u, lay.self, h, dk, false)
                       : multi_head_tape(t, u, u, lay.self, h, dk, false,
                                         &block_s[bottom]);
        if (bottom == static_cast<int>(i)) block_s[i] = mh.s_heads;
        x = ops::add(t, x, mh.out);
        Tape::Ref f = ffn_tape(
            t, ops::layer_norm(t, x, lay.ln_ffn.g, lay.ln_ffn.b, kLayerNormEps), lay.ffn);
        x = ops::add(t, x, f);
    }
    return ops::layer_norm(t, x, tm.enc_final.g, tm.enc_final.b, kLayerNormEps);
}

// Decoder input is [BOS] + tgt; logits row i predicts (tgt + [EOS])[i].
inline Tape::Ref decoder_logits_tape(Tape& t, const TapeModel& tm, Tape::Ref enc_out,
                                     const std::vector<int>& dec_in) {
    const ModelParams& p = *tm.params;
    const int h = p.config.heads;
    const int dk = p.config.d_model / h;
    Tape::Ref x = embed_sequence_tape(t, tm, dec_in);
    std::vector<std::vector<Tape::Ref>> self_block(p.dec.size());
    std::vector<Tape::Ref> a_block(p.dec.size());
    for (size_t i = 0; i < p.dec.size(); ++i) {
        const auto& lay = tm.dec[i];
        const int sb = p.self_bottoms[i];
        const int eb = p.encdec_bottoms[i];

        Tape::Ref u = ops::layer_norm(t, x, lay.ln_self.g, lay.ln_self.b, kLayerNormEps);
        MhOut mh = (sb == static_cast<int>(i))
                       ? multi_head_tape(t, u, u, lay.self, h, dk, true)
                       : multi_head_tape(t, u, u, lay.self, h, dk, true,
                                         &self_block[sb]);
        if (sb == static_cast<int>(i)) self_block[i] = mh.s_heads;
        x = ops::add(t, x, mh.out);

        if (eb == static_cast<int>(i)) {
            Tape::Ref v =
                ops::layer_norm(t, x, lay.ln_encdec.g, lay.ln_encdec.b, kLayerNormEps);
            MhOut ed = multi_head_tape(t, v, enc_out, lay.encdec, h, dk, false);
            a_block[i] = ed.out;
        }
        // Shared layers add the block bottom's A verbatim; gradients route
        // to the bottom's projections through the reused node.
        x = ops::add(t, x, a_block[eb]);

        Tape::Ref f = ffn_tape(
            t, ops::layer_norm(t, x, lay.ln_ffn.g, lay.ln_ffn.b, kLayerNormEps), lay.ffn);
        x = ops::add(t, x, f);
    }
    Tape::Ref y = ops::layer_norm(t, x, tm.dec_final.g, tm.dec_final.b, kLayerNormEps);
    return ops::add_rowvec(t, ops::matmul(t, y, tm.out_w), tm.out_b);
}

}  // namespace detail

// A labeled pair for training.
struct TrainPair {
    std::vector<int> src;
    std::vector<int> tgt;  // content tokens, no BOS/EOS
};

// Named gradients in canonical parameter order. Absent (discarded)
// projections have no entry; present-but-unused parameters carry zeros.
struct GradSet {
    std::vector<std::pair<std::string, Mat>> grads;
};

struct LossAndGrads {
    double loss = 0.0;
    int tokens = 0;
    GradSet grads;
};

// Mean token cross-entropy over the batch and analytic gradients for every
// present parameter.
inline LossAndGrads loss_and_grads(const ModelParams& params,
                                   const std::vector<TrainPair>& batch,
                                   double label_smoothing = 0.0) {
    if (batch.empty()) throw InputError("loss_and_grads: empty batch");
    Tape t;
    detail::TapeModel tm = detail::bind_model(t, params);

    Tape::Ref total{};
    int total_tokens = 0;
    for (const auto& pair : batch) {
        if (pair.tgt.empty()) throw InputError("loss_and_grads: empty target");
        std::vector<int> dec_in;
        dec_in.reserve(pair.tgt.size() + 1);
        dec_in.push_back(kBos);
        dec_in.insert(dec_in.end(), pair.tgt.begin(), pair.tgt.end());
        std::vector<int> labels = pair.tgt;
        labels.push_back(kEos);
        detail::check_tokens(dec_in, params.config);
        detail::check_tokens(labels, params.config);

        Tape::Ref enc_out = detail::encoder_tape(t, tm, pair.src);
        Tape::Ref logits = detail::decoder_logits_tape(t, tm, enc_out, dec_in);
        Tape::Ref ce = ops::cross_entropy_sum(t, logits, labels, label_smoothing);
        total = total ? ops::scalar_axpby(t, 1.0, total, 1.0, ce) : ce;
        total_tokens += static_cast<int>(labels.size());
    }
    Tape::Ref loss = ops::scale(t, total, 1.0 / total_tokens);
    t.backward(loss);

    LossAndGrads out;
    out.loss = t.value(loss).data[0];
    out.tokens = total_tokens;
    for (const auto& [name, ref] : tm.slots) {
        const Mat& g = t.grad(ref);
        if (g.rows == 0)
            out.grads.grads.emplace_back(name, Mat(t.value(ref).rows, t.value(ref).cols));
        else
            out.grads.grads.emplace_back(name, g);
    }
    return out;
}

// Same loss through the plain (tape-free) forward. This is the function the
// finite-difference gradient check perturbs, so the check also ties the two
// forward implementations together.
inline double batch_loss_plain(const ModelParams& params,
                               const std::vector<TrainPair>& batch,
                               double label_smoothing = 0.0) {
    if (batch.empty()) throw InputError("batch_loss_plain: empty batch");
    double total = 0.0;
    int total_tokens = 0;
    for (const auto& pair : batch) {
        std::vector<int> labels = pair.tgt;
        labels.push_back(kEos);
        TeacherForward tf = forward_teacher(params, pair.src, labels);
        const int vsz = tf.logits.cols;
        for (size_t i = 0; i < labels.size(); ++i) {
            const double* r = tf.logits.row(static_cast<int>(i));
            double mx = r[0];
            for (int j = 1; j < vsz; ++j) mx = std::max(mx, r[j]);
            double lse = 0.0;
            for (int j = 0; j < vsz; ++j) lse += std::exp(r[j] - mx);
            lse = mx + std::log(lse);
            double ce = lse - r[labels[i]];
            if (label_smoothing > 0.0) {
                double sum_z = 0.0;
                for (int j = 0; j < vsz; ++j) sum_z += r[j];
                ce = lse - (1.0 - label_smoothing) * r[labels[i]] -
                     label_smoothing * sum_z / vsz;
            }
            total += ce;
        }
        total_tokens += static_cast<int>(labels.size());
    }
    return total / total_tokens;
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    bool passed(double tol) const { return max_rel_err <= tol; }
};

// Central finite differences against the analytic gradients.
// rel = |a - n| / max(|a|, |n|, 1e-3).
inline GradCheckReport grad_check(ModelParams& params, const std::vector<TrainPair>& batch,
                                  double fd_eps = 1e-5, double label_smoothing = 0.0,
                                  bool corrupt = false) {
    LossAndGrads lg = loss_and_grads(params, batch, label_smoothing);
    if (corrupt && !lg.grads.grads.empty())
        lg.grads.grads.front().second.data[0] += 1e-2;

    GradCheckReport rep;
    size_t slot = 0;
    params.for_each_tensor([&](const std::string& name, Mat& m) {
        const Mat& g = lg.grads.grads[slot++].second;
        for (size_t i = 0; i < m.data.size(); ++i) {
            const double keep = m.data[i];
            m.data[i] = keep + fd_eps;
            const double up = batch_loss_plain(params, batch, label_smoothing);
            m.data[i] = keep - fd_eps;
            const double down = batch_loss_plain(params, batch, label_smoothing);
            m.data[i] = keep;
            const double numeric = (up - down) / (2.0 * fd_eps);
            const double analytic = g.data[i];
            const double rel = std::abs(analytic - numeric) /
                               std::max({std::abs(analytic), std::abs(numeric), 1e-3});
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_param = name + "[" + std::to_string(i) + "]";
                rep.worst_analytic = analytic;
                rep.worst_numeric = numeric;
            }
        }
    });
    return rep;
}

// ---------------------------------------------------------------------------
// Adam + toy trainer
// ---------------------------------------------------------------------------

struct AdamState {
    std::vector<Mat> m, v;
    int t = 0;
};

inline void adam_step(ModelParams& params, const GradSet& grads, AdamState& state,
                      double lr, const TrainConfig& cfg) {
    size_t slot = 0;
    if (state.m.empty()) {
        params.for_each_tensor([&](const std::string&, Mat& m) {
            state.m.emplace_back(m.rows, m.cols);
            state.v.emplace_back(m.rows, m.cols);
        });
    }
    ++state.t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, state.t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, state.t);
    params.for_each_tensor([&](const std::string&, Mat& w) {
        Mat& m = state.m[slot];
        Mat& v = state.v[slot];
        const Mat& g = grads.grads[slot].second;
        ++slot;
        for (size_t i = 0; i < w.data.size(); ++i) {
            m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * g.data[i];
            v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * g.data[i] * g.data[i];
            const double mhat = m.data[i] / bc1;
            const double vhat = v.data[i] / bc2;
            w.data[i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
    });
}

// Synthetic sequence tasks: tgt is src copied or reversed.
enum class ToyTask { Copy, Reverse };

inline std::vector<TrainPair> make_toy_dataset(ToyTask task, int sentences, int vocab,
                                               int min_len, int max_len, uint64_t seed) {
    if (vocab <= kContentBase) throw ConfigError("make_toy_dataset: vocab too small");
    if (min_len < 1 || max_len < min_len) throw ConfigError("make_toy_dataset: lengths");
    Rng rng(seed);
    std::vector<TrainPair> out;
    out.reserve(sentences);
    for (int s = 0; s < sentences; ++s) {
        const int len =
            min_len + static_cast<int>(rng.next_below(max_len - min_len + 1));
        TrainPair p;
        p.src.reserve(len);
        for (int i = 0; i < len; ++i)
            p.src.push_back(kContentBase +
                            static_cast<int>(rng.next_below(vocab - kContentBase)));
        p.tgt = p.src;
        if (task == ToyTask::Reverse) std::reverse(p.tgt.begin(), p.tgt.end());
        out.push_back(std::move(p));
    }
    return out;
}

struct LossPoint {
    int outer = 1;
    int step = 0;
    double loss = 0.0;
};

// Adam training with the inverse-sqrt schedule. Deterministic given the
// seed; the checkpoint hook fires every cfg.checkpoint_every steps and at
// the final step.
inline std::vector<LossPoint> toy_train(
    ModelParams& params, const std::vector<TrainPair>& dataset, const TrainConfig& cfg,
    const std::function<void(int step, const ModelParams&)>& checkpoint = nullptr) {
    cfg.validate();
    if (dataset.empty()) throw InputError("toy_train: empty dataset");
    Rng rng(cfg.seed);
    AdamState adam;
    std::vector<LossPoint> curve;
    curve.reserve(cfg.steps);
    for (int step = 1; step <= cfg.steps; ++step) {
        std::vector<TrainPair> batch;
        int tokens = 0;
        while (tokens < cfg.batch_tokens) {
            const auto& p = dataset[rng.next_below(dataset.size())];
            batch.push_back(p);
            tokens += static_cast<int>(p.tgt.size()) + 1;
        }
        LossAndGrads lg;
        try {
            lg = loss_and_grads(params, batch, cfg.label_smoothing);
        } catch (const DegenerateRowError&) {
            // a fixed causal mask can only degenerate when activations went
            // non-finite, i.e. training blew up
            throw TrainError("non-finite activations at step " + std::to_string(step));
        }
        if (!std::isfinite(lg.loss))
            throw TrainError("non-finite loss at step " + std::to_string(step));
        adam_step(params, lg.grads, adam, lr_at(step, params.config.d_model, cfg.warmup),
                  cfg);
        curve.push_back({1, step, lg.loss});
        if (checkpoint && (step % cfg.checkpoint_every == 0 || step == cfg.steps))
            checkpoint(step, params);
    }
    return curve;
}

// ---------------------------------------------------------------------------
// Joint loop: alternate training and policy search until the policy repeats
// ---------------------------------------------------------------------------

struct JsCurveRow {
    int outer = 1;
    int step = 0;
    std::vector<double> adjacent_self_js;  // dec_layers - 1 values
};

struct OuterIteration {
    SharingPolicy trained_under;
    SharingPolicy derived;
    double final_loss = 0.0;
};

struct LearnToShareResult {
    SharingPolicy policy;
    ModelParams params;
    std::vector<OuterIteration> log;
    bool converged = false;
    std::vector<LossPoint> loss_curve;
    std::vector<JsCurveRow> js_curve;
};

namespace detail {

// Layer-pair JS matrices over a held-out sample. kind 0 = decoder self,
// 1 = decoder enc-dec, 2 = encoder self.
inline JsMatrix measure_js(const ModelParams& p, const std::vector<TrainPair>& sample,
                           int kind) {
    std::vector<std::vector<AttnWeights>> per_sentence;
    for (const auto& pair : sample) {
        if (kind == 2) {
            std::vector<AttnWeights> enc_s;
            encode(p, pair.src, &enc_s);
            per_sentence.push_back(std::move(enc_s));
        } else {
            std::vector<int> labels = pair.tgt;
            labels.push_back(kEos);
            TeacherForward tf = forward_teacher(p, pair.src, labels);
            per_sentence.push_back(kind == 0 ? std::move(tf.self_s)
                                             : std::move(tf.encdec_s));
        }
    }
    return js_matrix(per_sentence, kind == 1 ? "encdec" : "self");
}

}  // namespace detail

// Alternate: train the model under the current policy (starting from
// all-ones), re-measure layer similarities on held-out sentences, re-derive
// the policy; stop when both policies repeat or max_outer is reached. Each
// iteration restarts from fresh initialization (parameter shapes change when
// projections are discarded).
inline LearnToShareResult learn_to_share(const std::vector<TrainPair>& dataset,
                                         const ModelConfig& model_cfg,
                                         const PolicyConfig& policy_cfg,
                                         const TrainConfig& train_cfg, int max_outer) {
    if (max_outer < 1) throw ConfigError("learn_to_share: max_outer must be >= 1");
    policy_cfg.validate();
    train_cfg.validate();
    if (static_cast<int>(dataset.size()) <= policy_cfg.sample_sentences)
        throw InputError("learn_to_share: dataset smaller than held-out sample");

    std::vector<TrainPair> heldout(dataset.end() - policy_cfg.sample_sentences,
                                   dataset.end());
    std::vector<TrainPair> train_set(dataset.begin(),
                                     dataset.end() - policy_cfg.sample_sentences);

    LearnToShareResult res;
    SharingPolicy current = SharingPolicy::baseline(model_cfg);

    for (int outer = 1; outer <= max_outer; ++outer) {
        ModelParams params = build(model_cfg, current, train_cfg.seed + outer);
        auto checkpoint = [&](int step, const ModelParams& p) {
            JsMatrix jm = detail::measure_js(p, heldout, 0);
            JsCurveRow row;
            row.outer = outer;
            row.step = step;
            for (int i = 0; i + 1 < jm.layers; ++i)
                row.adjacent_self_js.push_back(jm.values.at(i, i + 1));
            res.js_curve.push_back(std::move(row));
        };
        auto curve = toy_train(params, train_set, train_cfg, checkpoint);
        for (auto& pt : curve) pt.outer = outer;
        res.loss_curve.insert(res.loss_curve.end(), curve.begin(), curve.end());

        SharingPolicy next;
        next.self_blocks = find_policy(mu_matrix(detail::measure_js(params, heldout, 0)),
                                       policy_cfg.theta_self);
        next.encdec_blocks = find_policy(
            mu_matrix(detail::measure_js(params, heldout, 1)), policy_cfg.theta_encdec);
        next.enc_blocks = policy_cfg.theta_enc
                              ? find_policy(mu_matrix(detail::measure_js(params, heldout, 2)),
                                            *policy_cfg.theta_enc)
                              : SharingPolicy::all_ones(model_cfg.enc_layers);

        res.log.push_back({current, next, curve.empty() ? 0.0 : curve.back().loss});
        res.params = std::move(params);
        res.policy = current;
        if (next == current) {
            res.converged = true;
            break;
        }
        current = next;
    }
    if (!res.converged) res.policy = res.log.back().trained_under;
    return res;
}

}  // namespace san
