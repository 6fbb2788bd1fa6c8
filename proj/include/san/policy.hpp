#pragma once

#include <string>
#include <vector>

#include "san/divergence.hpp"

namespace san {

// Thresholds driving policy search, plus the held-out sample size used to
// estimate attention weights during the joint loop.
struct PolicyConfig {
    double theta_self = 0.35;
    double theta_encdec = 0.45;
    std::optional<double> theta_enc;  // encoder-side sharing off by default
    int sample_sentences = 16;

    void validate() const {
        auto check = [](double t, const char* name) {
            if (!(t > 0.0) || t > kLn2)
                throw ConfigError(std::string("PolicyConfig: ") + name +
                                  " must be in (0, ln 2]");
        };
        check(theta_self, "theta_self");
        check(theta_encdec, "theta_encdec");
        if (theta_enc) check(*theta_enc, "theta_enc");
        if (sample_sentences < 1)
            throw ConfigError("PolicyConfig: sample_sentences must be >= 1");
    }
};

// Greedy block search over a similarity matrix: start a block at the lowest
// unassigned layer and extend it upward while the extended block still
// satisfies block_sim >= theta. Size-1 blocks are always admissible. The
// result is an ordered partition of [1, M].
inline std::vector<int> find_policy(const MuMatrix& mu, double theta) {
    if (!(theta > 0.0) || theta > kLn2)
        throw ConfigError("find_policy: theta must be in (0, ln 2]");
    std::vector<int> blocks;
    int m = 1;
    while (m <= mu.layers) {
        int n = m;
        while (n < mu.layers && block_sim(mu, m, n + 1) >= theta) ++n;
        blocks.push_back(n - m + 1);
        m = n + 1;
    }
    return blocks;
}

}  // namespace san
