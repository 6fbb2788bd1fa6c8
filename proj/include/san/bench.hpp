#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <thread>
#include <vector>

#include <json.hpp>

#include "san/decode.hpp"
#include "san/weights_io.hpp"

namespace san {

// Re-interpret a stored model under a different runtime sharing policy.
// Layers that stop being block bottoms drop the projections the new policy
// discards; layers that would need projections the stored model lacks are a
// configuration error. This lets one weight container be benchmarked under
// several policies.
inline ModelParams apply_runtime_policy(const ModelParams& src,
                                        const SharingPolicy& policy) {
    policy.validate(src.config);
    ModelParams p = src;
    p.policy = policy;
    p.enc_bottoms = SharingPolicy::bottoms_of(policy.enc_blocks);
    p.self_bottoms = SharingPolicy::bottoms_of(policy.self_blocks);
    p.encdec_bottoms = SharingPolicy::bottoms_of(policy.encdec_blocks);

    auto drop_qk = [](ProjectionSet& ps, const std::string& where) {
        if (!ps.wv || !ps.wo)
            throw ConfigError("runtime policy: " + where + " lacks value projections");
        ps.wq.reset();
        ps.wk.reset();
    };
    auto need_full = [](const ProjectionSet& ps, const std::string& where) {
        if (!(ps.wq && ps.wk && ps.wv && ps.wo))
            throw ConfigError("runtime policy: " + where +
                              " must be a block bottom but the stored model "
                              "discarded its projections");
    };

    for (int i = 0; i < p.config.enc_layers; ++i) {
        std::string where = "enc layer " + std::to_string(i);
        if (p.enc_bottoms[i] == i)
            need_full(p.enc[i].self, where);
        else
            drop_qk(p.enc[i].self, where);
    }
    for (int i = 0; i < p.config.dec_layers; ++i) {
        std::string where = "dec layer " + std::to_string(i);
        if (p.self_bottoms[i] == i)
            need_full(p.dec[i].self, where + " (self)");
        else
            drop_qk(p.dec[i].self, where + " (self)");
        if (p.encdec_bottoms[i] == i) {
            need_full(p.dec[i].encdec, where + " (encdec)");
        } else {
            p.dec[i].encdec.wq.reset();
            p.dec[i].encdec.wk.reset();
            p.dec[i].encdec.wv.reset();
            p.dec[i].encdec.wo.reset();
        }
    }
    return p;
}

struct BenchVariant {
    std::string id;
    SharingPolicy policy;
};

struct BenchRecord {
    std::string policy_id;
    int beam = 1;
    int batch = 0;
    int workers = 1;
    int64_t tokens = 0;
    double wall_seconds = 0.0;
    double tokens_per_sec = 0.0;
    double flops_per_token = 0.0;
    std::string checksum;
    double speedup_vs_baseline = 1.0;
};

struct BenchRequest {
    std::vector<BenchVariant> variants;  // index 0 is the baseline
    std::vector<int> beams{1};
    int batch = 8;
    int src_len = 32;
    int tgt_len = 64;
    int workers = 1;
    int repeats = 3;
    uint64_t seed = 1;
};

struct BenchReport {
    nlohmann::json config;
    std::vector<BenchRecord> records;
};

inline std::string policy_id(const SharingPolicy& p) {
    if (p.is_baseline()) return "baseline";
    auto fmt = [](const std::vector<int>& blocks) {
        std::string s = "{";
        for (size_t i = 0; i < blocks.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(blocks[i]);
        }
        return s + "}";
    };
    return "self" + fmt(p.self_blocks) + " encdec" + fmt(p.encdec_blocks) + " enc" +
           fmt(p.enc_blocks);
}

namespace detail {

inline std::string fnv1a_hex(const std::vector<int>& tokens) {
    uint64_t h = 1469598103934665603ULL;
    for (int t : tokens) {
        for (int b = 0; b < 4; ++b) {
            h ^= static_cast<uint64_t>((static_cast<uint32_t>(t) >> (8 * b)) & 0xff);
            h *= 1099511628211ULL;
        }
    }
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// Decode every sentence to exactly tgt_len tokens (no EOS stop: the bench
// compares fixed workloads). Returns the concatenated outputs.
inline std::vector<int> decode_workload(const ModelParams& p,
                                        const std::vector<std::vector<int>>& sources,
                                        int beam, int tgt_len, int workers) {
    std::vector<std::vector<int>> outs(sources.size());
    DecodeOptions opts;
    opts.stop_at_eos = false;
    auto work = [&](size_t begin, size_t end) {
        for (size_t i = begin; i < end; ++i) {
            outs[i] = (beam == 1) ? greedy_decode(p, sources[i], tgt_len, opts)
                                  : beam_decode(p, sources[i], beam, tgt_len, opts);
        }
    };
    if (workers <= 1) {
        work(0, sources.size());
    } else {
        std::vector<std::thread> pool;
        const size_t per = (sources.size() + workers - 1) / workers;
        for (int w = 0; w < workers; ++w) {
            const size_t b = std::min(sources.size(), w * per);
            const size_t e = std::min(sources.size(), b + per);
            if (b < e) pool.emplace_back(work, b, e);
        }
        for (auto& th : pool) th.join();
    }
    std::vector<int> flat;
    for (const auto& o : outs) flat.insert(flat.end(), o.begin(), o.end());
    return flat;
}

}  // namespace detail

// Time each variant at each beam width: one warm-up run, `repeats` timed
// runs, median reported. Token outputs are checksummed so speed variants can
// be cross-checked for drift across repeats.
inline BenchReport run_bench(const ModelParams& base_model, const BenchRequest& req) {
    if (req.variants.empty()) throw ConfigError("run_bench: no variants");
    if (req.repeats < 3) throw ConfigError("run_bench: repeats must be >= 3");
    if (req.src_len < 1 || req.tgt_len < 1 || req.batch < 1)
        throw ConfigError("run_bench: empty workload");
    const ModelConfig& cfg = base_model.config;
    if (req.src_len > cfg.max_len || req.tgt_len > cfg.max_len)
        throw ConfigError("run_bench: workload exceeds model max_len");

    Rng rng(req.seed);
    std::vector<std::vector<int>> sources(req.batch);
    for (auto& s : sources) {
        s.resize(req.src_len);
        for (int& t : s)
            t = kContentBase + static_cast<int>(rng.next_below(cfg.vocab - kContentBase));
    }

    BenchReport report;
    report.config = {{"d_model", cfg.d_model},   {"heads", cfg.heads},
                     {"enc_layers", cfg.enc_layers}, {"dec_layers", cfg.dec_layers},
                     {"vocab", cfg.vocab},       {"batch", req.batch},
                     {"src_len", req.src_len},   {"tgt_len", req.tgt_len},
                     {"workers", req.workers},   {"repeats", req.repeats},
                     {"seed", req.seed},         {"baseline", req.variants[0].id}};

    for (const auto& variant : req.variants) {
        ModelParams model = apply_runtime_policy(base_model, variant.policy);
        double flops_per_token = 0.0;
        for (int t = 1; t <= req.tgt_len; ++t)
            flops_per_token +=
                static_cast<double>(estimate_step_flops(cfg, variant.policy, t));
        flops_per_token /= req.tgt_len;

        for (int beam : req.beams) {
            if (beam < 1) throw ConfigError("run_bench: beam must be >= 1");
            detail::decode_workload(model, sources, beam, req.tgt_len, req.workers);

            std::vector<double> walls;
            std::string checksum;
            for (int rep = 0; rep < req.repeats; ++rep) {
                const auto t0 = std::chrono::steady_clock::now();
                auto tokens =
                    detail::decode_workload(model, sources, beam, req.tgt_len, req.workers);
                const auto t1 = std::chrono::steady_clock::now();
                walls.push_back(std::chrono::duration<double>(t1 - t0).count());
                std::string sum = detail::fnv1a_hex(tokens);
                if (checksum.empty())
                    checksum = sum;
                else if (checksum != sum)
                    throw BenchError("nondeterministic outputs for " + variant.id);
            }
            std::sort(walls.begin(), walls.end());
            const double median = walls[walls.size() / 2];
            if (median < 1e-3)
                throw BenchError(
                    "timer resolution insufficient for this workload; increase "
                    "batch, lengths, or beam");

            BenchRecord rec;
            rec.policy_id = variant.id;
            rec.beam = beam;
            rec.batch = req.batch;
            rec.workers = req.workers;
            rec.tokens = static_cast<int64_t>(req.batch) * req.tgt_len;
            rec.wall_seconds = median;
            rec.tokens_per_sec = static_cast<double>(rec.tokens) / median;
            rec.flops_per_token = flops_per_token;
            rec.checksum = checksum;
            report.records.push_back(std::move(rec));
        }
    }

    // Speedups against the baseline record at the same beam.
    for (auto& rec : report.records) {
        for (const auto& base : report.records) {
            if (base.policy_id == req.variants[0].id && base.beam == rec.beam) {
                rec.speedup_vs_baseline = rec.tokens_per_sec / base.tokens_per_sec;
                break;
            }
        }
    }
    return report;
}

inline std::string bench_report_to_json(const BenchReport& report) {
    nlohmann::json j;
    j["config"] = report.config;
    j["records"] = nlohmann::json::array();
    for (const auto& r : report.records) {
        j["records"].push_back({{"policy", r.policy_id},
                                {"beam", r.beam},
                                {"batch", r.batch},
                                {"workers", r.workers},
                                {"tokens", r.tokens},
                                {"wall_seconds", r.wall_seconds},
                                {"tokens_per_sec", r.tokens_per_sec},
                                {"flops_per_token", r.flops_per_token},
                                {"checksum", r.checksum},
                                {"speedup_vs_baseline", r.speedup_vs_baseline}});
    }
    return j.dump(2) + "\n";
}

}  // namespace san
