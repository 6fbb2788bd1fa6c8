#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "san/attention.hpp"
#include "san/mat.hpp"

namespace san {

inline constexpr double kLn2 = std::numbers::ln2;

// Kullback-Leibler divergence in nats, convention 0*ln(0/x) = 0.
inline double kl(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size()) throw ShapeError("kl: length mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) {
            if (q[i] <= 0.0)
                throw SupportError("kl: q has zero mass where p > 0 (index " +
                                   std::to_string(i) + ")");
            acc += p[i] * std::log(p[i] / q[i]);
        }
    }
    return acc;
}

// Jensen-Shannon divergence: symmetric, bounded by ln 2. The mixture covers
// the support of both arguments, so no support error can occur here.
inline double js(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size()) throw ShapeError("js: length mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        const double m = 0.5 * (p[i] + q[i]);
        // combine both terms before accumulating so swapping the arguments
        // produces a bit-identical result
        const double pt = p[i] > 0.0 ? p[i] * std::log(p[i] / m) : 0.0;
        const double qt = q[i] > 0.0 ? q[i] * std::log(q[i] / m) : 0.0;
        acc += 0.5 * (pt + qt);
    }
    return acc;
}

// Mean JS between two attention-weight tensors: per head, per query row,
// JS over the unmasked support; averaged over rows, then over heads. Heads
// are treated as separate channels.
inline double head_avg_js(const AttnWeights& a, const AttnWeights& b) {
    if (a.heads != b.heads || a.lq != b.lq || a.lk != b.lk || a.causal != b.causal)
        throw ShapeError("head_avg_js: weight tensors differ in shape or mask");
    double head_sum = 0.0;
    for (int h = 0; h < a.heads; ++h) {
        double row_sum = 0.0;
        for (int i = 0; i < a.lq; ++i) {
            const int support = a.causal ? i + 1 : a.lk;
            std::vector<double> p(a.head[h].row(i), a.head[h].row(i) + support);
            std::vector<double> q(b.head[h].row(i), b.head[h].row(i) + support);
            row_sum += js(p, q);
        }
        head_sum += row_sum / a.lq;
    }
    return head_sum / a.heads;
}

// Symmetric M x M matrix of layer-pair JS divergences, entries in [0, ln 2].
struct JsMatrix {
    int layers = 0;
    std::string kind = "self";  // "self" or "encdec"
    Mat values;

    JsMatrix() = default;
    JsMatrix(int m, std::string k) : layers(m), kind(std::move(k)), values(m, m) {}
};

// mu(i, j) = ln 2 - JS(i, j); diagonal is exactly ln 2.
struct MuMatrix {
    int layers = 0;
    Mat values;
};

// Layer-pair JS over a corpus. Outer index: sentence; inner: layer.
// Aggregation is token-weighted: every query position counts once, pooled
// across sentences. Per-sentence contributions are sorted before summation
// so the result is exactly invariant under sentence reordering.
inline JsMatrix js_matrix(const std::vector<std::vector<AttnWeights>>& corpus,
                          const std::string& kind = "self") {
    if (corpus.empty()) throw InputError("js_matrix: empty corpus");
    const int m = static_cast<int>(corpus[0].size());
    for (const auto& sent : corpus)
        if (static_cast<int>(sent.size()) != m)
            throw InputError("js_matrix: ragged per-layer weight lists");

    JsMatrix out(m, kind);
    int64_t total_rows = 0;
    for (const auto& sent : corpus) total_rows += sent[0].lq;

    for (int i = 0; i < m; ++i) {
        for (int j = i + 1; j < m; ++j) {
            std::vector<double> contrib;
            contrib.reserve(corpus.size());
            for (const auto& sent : corpus) {
                // head_avg_js is already the per-row mean; re-weight by the
                // sentence's row count to pool tokens across sentences.
                contrib.push_back(head_avg_js(sent[i], sent[j]) * sent[i].lq);
            }
            std::sort(contrib.begin(), contrib.end());
            double sum = 0.0, comp = 0.0;
            for (double c : contrib) {  // Kahan
                double y = c - comp;
                double t = sum + y;
                comp = (t - sum) - y;
                sum = t;
            }
            const double v = sum / static_cast<double>(total_rows);
            out.values.at(i, j) = v;
            out.values.at(j, i) = v;
        }
    }
    return out;
}

inline MuMatrix mu_matrix(const JsMatrix& jsm) {
    MuMatrix mu;
    mu.layers = jsm.layers;
    mu.values = Mat(jsm.layers, jsm.layers);
    for (int i = 0; i < jsm.layers; ++i)
        for (int j = 0; j < jsm.layers; ++j)
            mu.values.at(i, j) = (i == j) ? kLn2 : kLn2 - jsm.values.at(i, j);
    return mu;
}

// Mean off-diagonal mu over the block of layers [m, n], 1-based inclusive.
// Equals mu(m, n) for a two-layer block. Size-1 blocks never call this.
inline double block_sim(const MuMatrix& mu, int m, int n) {
    if (m < 1 || n > mu.layers || m >= n)
        throw RangeError("block_sim: need 1 <= m < n <= layers, got m=" +
                         std::to_string(m) + " n=" + std::to_string(n));
    double sum = 0.0;
    for (int i = m; i <= n; ++i)
        for (int j = m; j <= n; ++j)
            if (i != j) sum += mu.values.at(i - 1, j - 1);
    const double size = static_cast<double>(n - m + 1);
    return sum / (size * (size - 1.0));
}

}  // namespace san
