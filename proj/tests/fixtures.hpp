#pragma once

#include <vector>

#include "san/attention.hpp"
#include "san/divergence.hpp"

namespace fixtures {

// Published layer-pair JS divergences for a 6-layer decoder's self-attention
// (the worked example the policy tests reproduce).
inline san::JsMatrix self_attention_js_6layer() {
    const double v[6][6] = {
        {0.0000, 0.5429, 0.5138, 0.4650, 0.5005, 0.5531},
        {0.5429, 0.0000, 0.0606, 0.0630, 0.0703, 0.0332},
        {0.5138, 0.0606, 0.0000, 0.0671, 0.0472, 0.0296},
        {0.4650, 0.0630, 0.0671, 0.0000, 0.0176, 0.0552},
        {0.5005, 0.0703, 0.0472, 0.0176, 0.0000, 0.0389},
        {0.5531, 0.0332, 0.0296, 0.0552, 0.0389, 0.0000},
    };
    san::JsMatrix m(6, "self");
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) m.values.at(i, j) = v[i][j];
    return m;
}

// Row-stochastic attention weights from random logits.
inline san::AttnWeights random_attn(int heads, int lq, int lk, bool causal,
                                    san::Rng& rng) {
    san::AttnWeights w(heads, lq, lk, causal);
    for (int h = 0; h < heads; ++h) {
        san::Mat logits(lq, lk);
        for (double& v : logits.data) v = rng.next_gaussian();
        if (causal) {
            san::BoolMask mask = san::BoolMask::causal(lq);
            w.head[h] = san::softmax_rows(logits, &mask);
        } else {
            w.head[h] = san::softmax_rows(logits);
        }
    }
    return w;
}

}  // namespace fixtures
