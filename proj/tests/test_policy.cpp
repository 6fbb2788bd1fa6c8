#include <catch2/catch_amalgamated.hpp>

#include "fixtures.hpp"
#include "san/policy.hpp"

using namespace san;

namespace {

MuMatrix uniform_mu(int layers, double off_diag) {
    MuMatrix mu;
    mu.layers = layers;
    mu.values = Mat(layers, layers);
    for (int i = 0; i < layers; ++i)
        for (int j = 0; j < layers; ++j)
            mu.values.at(i, j) = (i == j) ? kLn2 : off_diag;
    return mu;
}

int sum_blocks(const std::vector<int>& b) {
    int s = 0;
    for (int x : b) s += x;
    return s;
}

}  // namespace

TEST_CASE("all-identical layers merge into a single block even at theta = ln 2") {
    MuMatrix mu = uniform_mu(5, kLn2);  // zero divergence everywhere
    auto blocks = find_policy(mu, kLn2);
    REQUIRE(blocks == std::vector<int>{5});
}

TEST_CASE("all dissimilar layers yield the all-ones policy") {
    MuMatrix mu = uniform_mu(6, 0.1);
    auto blocks = find_policy(mu, 0.3);
    REQUIRE(blocks == std::vector<int>(6, 1));
}

TEST_CASE("published self-attention matrix at theta 0.35 gives {1, 5}") {
    MuMatrix mu = mu_matrix(fixtures::self_attention_js_6layer());
    auto blocks = find_policy(mu, 0.35);
    REQUIRE(blocks == std::vector<int>{1, 5});
    // the derivation's intermediates
    REQUIRE(mu.values.at(0, 1) == Catch::Approx(0.1502).margin(1e-4));
    REQUIRE(block_sim(mu, 2, 6) == Catch::Approx(0.644877).margin(1e-5));
}

TEST_CASE("find_policy always partitions the stack") {
    Rng rng(61);
    for (int trial = 0; trial < 30; ++trial) {
        const int layers = 2 + static_cast<int>(rng.next_below(7));
        MuMatrix mu;
        mu.layers = layers;
        mu.values = Mat(layers, layers);
        for (int i = 0; i < layers; ++i) {
            mu.values.at(i, i) = kLn2;
            for (int j = i + 1; j < layers; ++j) {
                double v = rng.next_unit() * kLn2;
                mu.values.at(i, j) = v;
                mu.values.at(j, i) = v;
            }
        }
        const double theta = std::max(1e-6, rng.next_unit() * kLn2);
        auto blocks = find_policy(mu, theta);
        REQUIRE(sum_blocks(blocks) == layers);
        for (int b : blocks) REQUIRE(b >= 1);
        // deterministic
        REQUIRE(find_policy(mu, theta) == blocks);
    }
}

TEST_CASE("raising theta never grows the block at the same starting layer") {
    Rng rng(67);
    for (int trial = 0; trial < 20; ++trial) {
        const int layers = 6;
        MuMatrix mu;
        mu.layers = layers;
        mu.values = Mat(layers, layers);
        for (int i = 0; i < layers; ++i) {
            mu.values.at(i, i) = kLn2;
            for (int j = i + 1; j < layers; ++j) {
                double v = rng.next_unit() * kLn2;
                mu.values.at(i, j) = v;
                mu.values.at(j, i) = v;
            }
        }
        double lo = 0.1, hi = 0.4;
        auto blocks_lo = find_policy(mu, lo);
        auto blocks_hi = find_policy(mu, hi);
        // compare block sizes at matching starting layers
        int start_lo = 0;
        size_t idx_lo = 0;
        int start_hi = 0;
        for (size_t idx_hi = 0; idx_hi < blocks_hi.size(); ++idx_hi) {
            while (start_lo < start_hi && idx_lo < blocks_lo.size()) {
                start_lo += blocks_lo[idx_lo];
                ++idx_lo;
            }
            if (start_lo == start_hi && idx_lo < blocks_lo.size())
                REQUIRE(blocks_hi[idx_hi] <= blocks_lo[idx_lo]);
            start_hi += blocks_hi[idx_hi];
        }
    }
}

TEST_CASE("theta at or below the minimum off-diagonal mu keeps one block") {
    MuMatrix mu = mu_matrix(fixtures::self_attention_js_6layer());
    double min_mu = kLn2;
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j)
            if (i != j) min_mu = std::min(min_mu, mu.values.at(i, j));
    auto blocks = find_policy(mu, min_mu);
    REQUIRE(blocks == std::vector<int>{6});
}

TEST_CASE("find_policy theta domain") {
    MuMatrix mu = uniform_mu(3, 0.2);
    REQUIRE_THROWS_AS(find_policy(mu, 0.0), ConfigError);
    REQUIRE_THROWS_AS(find_policy(mu, kLn2 + 0.01), ConfigError);
}

TEST_CASE("PolicyConfig validation") {
    PolicyConfig ok;
    ok.validate();
    PolicyConfig bad = ok;
    bad.theta_self = 0.0;
    REQUIRE_THROWS_AS(bad.validate(), ConfigError);
    bad = ok;
    bad.theta_encdec = kLn2 + 1e-3;
    REQUIRE_THROWS_AS(bad.validate(), ConfigError);
    bad = ok;
    bad.sample_sentences = 0;
    REQUIRE_THROWS_AS(bad.validate(), ConfigError);
}
