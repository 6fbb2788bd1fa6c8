#include <catch2/catch_amalgamated.hpp>

#include "san/bench.hpp"
#include "san/decode.hpp"

using namespace san;

namespace {

SharingPolicy make_policy(const ModelConfig& cfg, std::vector<int> self,
                          std::vector<int> encdec) {
    SharingPolicy p;
    p.self_blocks = std::move(self);
    p.encdec_blocks = std::move(encdec);
    p.enc_blocks = SharingPolicy::all_ones(cfg.enc_layers);
    return p;
}

double logprob_of(const ModelParams& p, const std::vector<int>& src,
                  const std::vector<int>& seq) {
    TeacherForward tf = forward_teacher(p, src, seq);
    double total = 0.0;
    for (size_t i = 0; i < seq.size(); ++i) {
        const double* r = tf.logits.row(static_cast<int>(i));
        double mx = r[0];
        for (int j = 1; j < tf.logits.cols; ++j) mx = std::max(mx, r[j]);
        double z = 0.0;
        for (int j = 0; j < tf.logits.cols; ++j) z += std::exp(r[j] - mx);
        total += r[seq[i]] - (mx + std::log(z));
    }
    return total;
}

}  // namespace

TEST_CASE("first decode step equals the first teacher-forced row") {
    ModelConfig cfg = ModelConfig::make(2, 3, 2, 16, 32, 18, 16);
    ModelParams p = build(cfg, SharingPolicy::baseline(cfg), 31);
    std::vector<int> src = {4, 9, 2};
    TeacherForward tf = forward_teacher(p, src, {7});
    DecodeSession s = make_session(p, src);
    const Mat& logits = decode_step(s, kBos);
    for (int j = 0; j < cfg.vocab; ++j)
        REQUIRE(std::abs(logits.at(0, j) - tf.logits.at(0, j)) <= 1e-9);
}

TEST_CASE("incremental decoding equals teacher forcing for every policy") {
    ModelConfig cfg = ModelConfig::make(2, 6, 2, 24, 48, 18, 16);
    std::vector<int> src = {4, 9, 2, 13};
    std::vector<int> tgt = {7, 3, 11, 2, 16, 5};
    for (auto blocks : {std::vector<int>{1, 1, 1, 1, 1, 1}, std::vector<int>{6},
                        std::vector<int>{3, 3}, std::vector<int>{2, 2, 2}}) {
        SharingPolicy pol = make_policy(cfg, blocks, blocks);
        ModelParams p = build(cfg, pol, 37);
        TeacherForward tf = forward_teacher(p, src, tgt);

        DecodeSession s = make_session(p, src);
        std::vector<int> dec_in = {kBos};
        dec_in.insert(dec_in.end(), tgt.begin(), tgt.end() - 1);
        for (size_t t = 0; t < dec_in.size(); ++t) {
            const Mat& logits = decode_step(s, dec_in[t]);
            for (int j = 0; j < cfg.vocab; ++j)
                REQUIRE(std::abs(logits.at(0, j) - tf.logits.at(static_cast<int>(t), j)) <=
                        1e-9);
        }
    }
}

TEST_CASE("two sessions with the same inputs produce identical logits") {
    ModelConfig cfg = ModelConfig::make(1, 2, 2, 12, 24, 14, 8);
    ModelParams p = build(cfg, make_policy(cfg, {2}, {2}), 41);
    std::vector<int> src = {5, 7};
    DecodeSession a = make_session(p, src);
    DecodeSession b = make_session(p, src);
    for (int tok : {kBos, 6, 9}) {
        const Mat la = decode_step(a, tok);
        const Mat lb = decode_step(b, tok);
        REQUIRE(la.data == lb.data);
    }
}

TEST_CASE("sharing changes the computation when weights differ") {
    ModelConfig cfg = ModelConfig::make(1, 4, 2, 16, 32, 14, 8);
    ModelParams base = build(cfg, SharingPolicy::baseline(cfg), 43);
    ModelParams shared = apply_runtime_policy(base, make_policy(cfg, {4}, {2, 2}));
    std::vector<int> src = {5, 7, 3};
    DecodeSession a = make_session(base, src);
    DecodeSession b = make_session(shared, src);
    const Mat la = decode_step(a, kBos);
    const Mat lb = decode_step(b, kBos);
    double diff = 0.0;
    for (size_t i = 0; i < la.data.size(); ++i)
        diff = std::max(diff, std::abs(la.data[i] - lb.data[i]));
    REQUIRE(diff > 1e-6);
}

TEST_CASE("decode_step past max_len is a capacity error") {
    ModelConfig cfg = ModelConfig::make(1, 1, 1, 8, 16, 10, 4);
    ModelParams p = build(cfg, SharingPolicy::baseline(cfg), 47);
    DecodeSession s = make_session(p, {3});
    for (int t = 0; t < 4; ++t) decode_step(s, 2);
    REQUIRE_THROWS_AS(decode_step(s, 2), CapacityError);
}

TEST_CASE("greedy stops immediately on a rigged end-symbol model") {
    ModelConfig cfg = ModelConfig::make(1, 1, 1, 8, 16, 10, 8);
    ModelParams p = build(cfg, SharingPolicy::baseline(cfg), 53);
    for (double& v : p.out_w.data) v = 0.0;
    for (double& v : p.out_b.data) v = 0.0;
    p.out_b.at(0, kEos) = 5.0;
    auto out = greedy_decode(p, {4, 6}, 8);
    REQUIRE(out.size() == 1);
    REQUIRE(out[0] == kEos);
}

TEST_CASE("greedy decoding is deterministic across runs") {
    ModelConfig cfg = ModelConfig::make(1, 2, 2, 12, 24, 14, 12);
    ModelParams p = build(cfg, make_policy(cfg, {1, 1}, {2}), 59);
    auto a = greedy_decode(p, {3, 9, 5}, 10);
    auto b = greedy_decode(p, {3, 9, 5}, 10);
    REQUIRE(a == b);
    REQUIRE(!a.empty());
}

TEST_CASE("beam width one equals greedy") {
    ModelConfig cfg = ModelConfig::make(1, 2, 2, 12, 24, 14, 12);
    for (uint64_t seed : {61, 67, 71}) {
        ModelParams p = build(cfg, make_policy(cfg, {2}, {1, 1}), seed);
        auto g = greedy_decode(p, {3, 9, 5}, 10);
        auto b = beam_decode(p, {3, 9, 5}, 1, 10);
        REQUIRE(g == b);
    }
}

TEST_CASE("beam as wide as the vocabulary matches exhaustive search on 2 steps") {
    ModelConfig cfg = ModelConfig::make(1, 1, 1, 8, 16, 6, 4);
    ModelParams p = build(cfg, SharingPolicy::baseline(cfg), 73);
    std::vector<int> src = {3, 5};

    // enumerate every complete sequence of at most 2 steps
    std::vector<std::vector<int>> candidates;
    candidates.push_back({kEos});
    for (int a = 0; a < cfg.vocab; ++a) {
        if (a == kEos) continue;
        for (int b = 0; b < cfg.vocab; ++b) candidates.push_back({a, b});
    }
    double best_score = -1e300;
    std::vector<int> best;
    for (const auto& seq : candidates) {
        double score = logprob_of(p, src, seq) / seq.size();
        if (score > best_score) {
            best_score = score;
            best = seq;
        }
    }

    auto got = beam_decode(p, src, cfg.vocab, 2);
    REQUIRE(got == best);
}

TEST_CASE("beam result never scores below greedy") {
    ModelConfig cfg = ModelConfig::make(1, 2, 2, 12, 24, 12, 8);
    for (uint64_t seed = 80; seed < 90; ++seed) {
        ModelParams p = build(cfg, make_policy(cfg, {1, 1}, {2}), seed);
        std::vector<int> src = {4, 7, 9};
        auto g = greedy_decode(p, src, 8);
        for (int beam : {2, 3, 5}) {
            auto b = beam_decode(p, src, beam, 8);
            double gs = logprob_of(p, src, g) / g.size();
            double bs = logprob_of(p, src, b) / b.size();
            REQUIRE(bs >= gs - 1e-12);
        }
    }
}

TEST_CASE("beam zero is a configuration error") {
    ModelConfig cfg = ModelConfig::make(1, 1, 1, 8, 16, 10, 4);
    ModelParams p = build(cfg, SharingPolicy::baseline(cfg), 97);
    REQUIRE_THROWS_AS(beam_decode(p, {3}, 0, 4), ConfigError);
}

TEST_CASE("fixed-length decode ignores the end symbol when asked") {
    ModelConfig cfg = ModelConfig::make(1, 1, 1, 8, 16, 10, 8);
    ModelParams p = build(cfg, SharingPolicy::baseline(cfg), 53);
    for (double& v : p.out_w.data) v = 0.0;
    for (double& v : p.out_b.data) v = 0.0;
    p.out_b.at(0, kEos) = 5.0;
    DecodeOptions opts;
    opts.stop_at_eos = false;
    auto out = greedy_decode(p, {4, 6}, 6, opts);
    REQUIRE(out.size() == 6);
}
