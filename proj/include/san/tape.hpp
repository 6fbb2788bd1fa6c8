#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "san/mat.hpp"

namespace san {

// Minimal eager reverse-mode tape over Mat. Forward values are computed on
// op application; backward() replays the recorded closures in reverse.
// Node 0 is reserved (invalid handle).
class Tape {
public:
    struct Node {
        Mat value;
        Mat grad;  // allocated lazily in backward()
        std::function<void(Tape&, const Mat&)> pull;  // accumulates into parents
        bool needs_grad = false;
    };

    // Handle into the tape.
    struct Ref {
        int idx = 0;
        explicit operator bool() const { return idx != 0; }
    };

    Tape() { nodes_.emplace_back(); }

    const Mat& value(Ref r) const { return nodes_[r.idx].value; }
    const Mat& grad(Ref r) const { return nodes_[r.idx].grad; }
    size_t size() const { return nodes_.size(); }

    Ref leaf(Mat v, bool needs_grad) {
        Node n;
        n.value = std::move(v);
        n.needs_grad = needs_grad;
        nodes_.push_back(std::move(n));
        return Ref{static_cast<int>(nodes_.size() - 1)};
    }

    Ref constant(Mat v) { return leaf(std::move(v), false); }

    // Record an op: value plus a closure that routes the output gradient to
    // the parents. needs_grad propagates so dead subgraphs stay dead.
    Ref op(Mat value, std::vector<Ref> parents,
           std::function<void(Tape&, const Mat&)> pull) {
        bool ng = false;
        for (Ref p : parents) ng = ng || nodes_[p.idx].needs_grad;
        Node n;
        n.value = std::move(value);
        n.needs_grad = ng;
        if (ng) n.pull = std::move(pull);
        nodes_.push_back(std::move(n));
        return Ref{static_cast<int>(nodes_.size() - 1)};
    }

    void accumulate(Ref r, const Mat& g) {
        Node& n = nodes_[r.idx];
        if (!n.needs_grad) return;
        if (n.grad.rows == 0) n.grad = Mat(n.value.rows, n.value.cols);
        for (size_t i = 0; i < g.data.size(); ++i) n.grad.data[i] += g.data[i];
    }

    // Seed the scalar root with 1 and sweep the tape in reverse.
    void backward(Ref root) {
        if (nodes_[root.idx].value.rows != 1 || nodes_[root.idx].value.cols != 1)
            throw ShapeError("Tape::backward: root must be 1x1");
        Mat seed(1, 1);
        seed.data[0] = 1.0;
        accumulate(root, seed);
        for (int i = root.idx; i > 0; --i) {
            Node& n = nodes_[i];
            if (n.pull && n.grad.rows != 0) n.pull(*this, n.grad);
        }
    }

private:
    std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

namespace ops {

inline Tape::Ref matmul(Tape& t, Tape::Ref a, Tape::Ref b) {
    Mat v = san::matmul(t.value(a), t.value(b));
    return t.op(std::move(v), {a, b}, [a, b](Tape& t, const Mat& g) {
        t.accumulate(a, matmul_nt(g, t.value(b)));
        t.accumulate(b, matmul_tn(t.value(a), g));
    });
}

// a * b^T
inline Tape::Ref matmul_nt(Tape& t, Tape::Ref a, Tape::Ref b) {
    Mat v = san::matmul_nt(t.value(a), t.value(b));
    return t.op(std::move(v), {a, b}, [a, b](Tape& t, const Mat& g) {
        t.accumulate(a, san::matmul(g, t.value(b)));
        t.accumulate(b, matmul_tn(g, t.value(a)));
    });
}

inline Tape::Ref add(Tape& t, Tape::Ref a, Tape::Ref b) {
    Mat v = san::add(t.value(a), t.value(b));
    return t.op(std::move(v), {a, b}, [a, b](Tape& t, const Mat& g) {
        t.accumulate(a, g);
        t.accumulate(b, g);
    });
}

// x + broadcast row bias (bias is 1 x C).
inline Tape::Ref add_rowvec(Tape& t, Tape::Ref x, Tape::Ref bias) {
    const Mat& xv = t.value(x);
    const Mat& bv = t.value(bias);
    if (bv.rows != 1 || bv.cols != xv.cols)
        throw ShapeError("add_rowvec: bias " + shape_str(bv) + " vs x " + shape_str(xv));
    Mat v = xv;
    for (int i = 0; i < v.rows; ++i) {
        double* r = v.row(i);
        for (int j = 0; j < v.cols; ++j) r[j] += bv.data[j];
    }
    return t.op(std::move(v), {x, bias}, [x, bias](Tape& t, const Mat& g) {
        t.accumulate(x, g);
        Mat gb(1, g.cols);
        for (int i = 0; i < g.rows; ++i) {
            const double* r = g.row(i);
            for (int j = 0; j < g.cols; ++j) gb.data[j] += r[j];
        }
        t.accumulate(bias, gb);
    });
}

inline Tape::Ref scale(Tape& t, Tape::Ref a, double s) {
    Mat v = san::scale(t.value(a), s);
    return t.op(std::move(v), {a},
                [a, s](Tape& t, const Mat& g) { t.accumulate(a, san::scale(g, s)); });
}

inline Tape::Ref relu(Tape& t, Tape::Ref a) {
    Mat v = t.value(a);
    for (double& x : v.data)
        if (x < 0) x = 0;
    return t.op(std::move(v), {a}, [a](Tape& t, const Mat& g) {
        Mat gx = g;
        const Mat& x = t.value(a);
        for (size_t i = 0; i < gx.data.size(); ++i)
            if (x.data[i] <= 0) gx.data[i] = 0;
        t.accumulate(a, gx);
    });
}

// Row-wise softmax, optionally causal (requires square input). The closure
// holds a copy of the output: dz = y .* (g - rowdot(g, y)), which is already
// zero at masked positions because y is.
inline Tape::Ref softmax_rows(Tape& t, Tape::Ref a, bool causal) {
    const Mat& x = t.value(a);
    Mat v;
    if (causal) {
        BoolMask mask = BoolMask::causal(x.rows);
        v = san::softmax_rows(x, &mask);
    } else {
        v = san::softmax_rows(x);
    }
    auto y = std::make_shared<Mat>(v);
    return t.op(std::move(v), {a}, [a, y](Tape& t, const Mat& g) {
        const Mat& yv = *y;
        Mat gx(yv.rows, yv.cols);
        for (int i = 0; i < yv.rows; ++i) {
            const double* yi = yv.row(i);
            const double* gi = g.row(i);
            double dot = 0.0;
            for (int j = 0; j < yv.cols; ++j) dot += gi[j] * yi[j];
            double* go = gx.row(i);
            for (int j = 0; j < yv.cols; ++j) go[j] = yi[j] * (gi[j] - dot);
        }
        t.accumulate(a, gx);
    });
}

inline Tape::Ref layer_norm(Tape& t, Tape::Ref x, Tape::Ref gain, Tape::Ref bias,
                            double eps) {
    Mat v = san::layer_norm(t.value(x), t.value(gain), t.value(bias), eps);
    return t.op(std::move(v), {x, gain, bias},
                [x, gain, bias, eps](Tape& t, const Mat& g) {
                    const Mat& xv = t.value(x);
                    const Mat& gv = t.value(gain);
                    const int n = xv.cols;
                    Mat gx(xv.rows, n);
                    Mat ggain(1, n);
                    Mat gbias(1, n);
                    for (int i = 0; i < xv.rows; ++i) {
                        const double* xi = xv.row(i);
                        const double* gi = g.row(i);
                        double mean = 0.0;
                        for (int j = 0; j < n; ++j) mean += xi[j];
                        mean /= n;
                        double var = 0.0;
                        for (int j = 0; j < n; ++j) {
                            double d = xi[j] - mean;
                            var += d * d;
                        }
                        var /= n;
                        const double inv = 1.0 / std::sqrt(var + eps);
                        // xhat, dL/dxhat, and the two row means the VJP needs
                        double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                        std::vector<double> xh(n), dxh(n);
                        for (int j = 0; j < n; ++j) {
                            xh[j] = (xi[j] - mean) * inv;
                            dxh[j] = gi[j] * gv.data[j];
                            mean_dxh += dxh[j];
                            mean_dxh_xh += dxh[j] * xh[j];
                            ggain.data[j] += gi[j] * xh[j];
                            gbias.data[j] += gi[j];
                        }
                        mean_dxh /= n;
                        mean_dxh_xh /= n;
                        double* go = gx.row(i);
                        for (int j = 0; j < n; ++j)
                            go[j] = (dxh[j] - mean_dxh - xh[j] * mean_dxh_xh) * inv;
                    }
                    t.accumulate(x, gx);
                    t.accumulate(gain, ggain);
                    t.accumulate(bias, gbias);
                });
}

// Embedding lookup: rows of table at ids. Backward scatter-adds.
inline Tape::Ref gather_rows(Tape& t, Tape::Ref table, const std::vector<int>& ids) {
    const Mat& e = t.value(table);
    Mat v(static_cast<int>(ids.size()), e.cols);
    for (size_t i = 0; i < ids.size(); ++i) {
        const double* src = e.row(ids[i]);
        double* dst = v.row(static_cast<int>(i));
        for (int j = 0; j < e.cols; ++j) dst[j] = src[j];
    }
    return t.op(std::move(v), {table}, [table, ids](Tape& t, const Mat& g) {
        const Mat& e = t.value(table);
        Mat ge(e.rows, e.cols);
        for (size_t i = 0; i < ids.size(); ++i) {
            const double* src = g.row(static_cast<int>(i));
            double* dst = ge.row(ids[i]);
            for (int j = 0; j < e.cols; ++j) dst[j] += src[j];
        }
        t.accumulate(table, ge);
    });
}

// Column slice [c0, c0+w).
inline Tape::Ref slice_cols(Tape& t, Tape::Ref a, int c0, int w) {
    const Mat& x = t.value(a);
    if (c0 < 0 || c0 + w > x.cols) throw ShapeError("slice_cols: out of range");
    Mat v(x.rows, w);
    for (int i = 0; i < x.rows; ++i) {
        const double* src = x.row(i) + c0;
        double* dst = v.row(i);
        for (int j = 0; j < w; ++j) dst[j] = src[j];
    }
    return t.op(std::move(v), {a}, [a, c0, w](Tape& t, const Mat& g) {
        const Mat& x = t.value(a);
        Mat gx(x.rows, x.cols);
        for (int i = 0; i < x.rows; ++i) {
            const double* src = g.row(i);
            double* dst = gx.row(i) + c0;
            for (int j = 0; j < w; ++j) dst[j] += src[j];
        }
        t.accumulate(a, gx);
    });
}

inline Tape::Ref concat_cols(Tape& t, const std::vector<Tape::Ref>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no parts");
    int rows = t.value(parts[0]).rows;
    int cols = 0;
    for (Tape::Ref p : parts) {
        if (t.value(p).rows != rows) throw ShapeError("concat_cols: row mismatch");
        cols += t.value(p).cols;
    }
    Mat v(rows, cols);
    int at = 0;
    for (Tape::Ref p : parts) {
        const Mat& x = t.value(p);
        for (int i = 0; i < rows; ++i) {
            const double* src = x.row(i);
            double* dst = v.row(i) + at;
            for (int j = 0; j < x.cols; ++j) dst[j] = src[j];
        }
        at += x.cols;
    }
    return t.op(std::move(v), parts, [parts](Tape& t, const Mat& g) {
        int at = 0;
        for (Tape::Ref p : parts) {
            const Mat& x = t.value(p);
            Mat gp(x.rows, x.cols);
            for (int i = 0; i < x.rows; ++i) {
                const double* src = g.row(i) + at;
                double* dst = gp.row(i);
                for (int j = 0; j < x.cols; ++j) dst[j] = src[j];
            }
            t.accumulate(p, gp);
            at += x.cols;
        }
    });
}

// Sum of per-row cross-entropies against integer labels, with optional
// uniform label smoothing. Output is 1x1.
inline Tape::Ref cross_entropy_sum(Tape& t, Tape::Ref logits,
                                   const std::vector<int>& labels, double smoothing) {
    const Mat& z = t.value(logits);
    if (static_cast<int>(labels.size()) != z.rows)
        throw ShapeError("cross_entropy_sum: label count != rows");
    const int vsz = z.cols;
    double total = 0.0;
    for (int i = 0; i < z.rows; ++i) {
        const double* r = z.row(i);
        double mx = r[0];
        for (int j = 1; j < vsz; ++j) mx = std::max(mx, r[j]);
        double lse = 0.0;
        for (int j = 0; j < vsz; ++j) lse += std::exp(r[j] - mx);
        lse = mx + std::log(lse);
        // target distribution q = (1-eps)*onehot + eps/V
        double ce = lse - r[labels[i]];
        if (smoothing > 0.0) {
            double sum_z = 0.0;
            for (int j = 0; j < vsz; ++j) sum_z += r[j];
            ce = lse - (1.0 - smoothing) * r[labels[i]] - smoothing * sum_z / vsz;
        }
        total += ce;
    }
    Mat v(1, 1);
    v.data[0] = total;
    return t.op(std::move(v), {logits},
                [logits, labels, smoothing](Tape& t, const Mat& g) {
                    const double s = g.data[0];
                    const Mat& z = t.value(logits);
                    const int vsz = z.cols;
                    Mat gz(z.rows, vsz);
                    for (int i = 0; i < z.rows; ++i) {
                        const double* r = z.row(i);
                        double* go = gz.row(i);
                        double mx = r[0];
                        for (int j = 1; j < vsz; ++j) mx = std::max(mx, r[j]);
                        double zsum = 0.0;
                        for (int j = 0; j < vsz; ++j) {
                            go[j] = std::exp(r[j] - mx);
                            zsum += go[j];
                        }
                        for (int j = 0; j < vsz; ++j) {
                            double q = (j == labels[i]) ? 1.0 - smoothing : 0.0;
                            q += smoothing / vsz;
                            go[j] = s * (go[j] / zsum - q);
                        }
                    }
                    t.accumulate(logits, gz);
                });
}

// w0*a + w1*b for 1x1 scalars.
inline Tape::Ref scalar_axpby(Tape& t, double w0, Tape::Ref a, double w1, Tape::Ref b) {
    Mat v(1, 1);
    v.data[0] = w0 * t.value(a).data[0] + w1 * t.value(b).data[0];
    return t.op(std::move(v), {a, b}, [a, b, w0, w1](Tape& t, const Mat& g) {
        Mat ga(1, 1), gb(1, 1);
        ga.data[0] = g.data[0] * w0;
        gb.data[0] = g.data[0] * w1;
        t.accumulate(a, ga);
        t.accumulate(b, gb);
    });
}

}  // namespace ops
}  // namespace san
