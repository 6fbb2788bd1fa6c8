#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "san/error.hpp"

namespace san {

// Dense row-major 2-D matrix of 64-bit reals. The universal numeric carrier:
// weights, activations, attention distributions all live in Mat.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;  // rows * cols, row-major

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {
        if (r < 0 || c < 0) throw ShapeError("Mat: negative dimension");
    }
    Mat(int r, int c, std::vector<double> v) : rows(r), cols(c), data(std::move(v)) {
        if (data.size() != static_cast<size_t>(r) * c)
            throw ShapeError("Mat: data length != rows*cols");
    }

    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

    double* row(int r) { return data.data() + static_cast<size_t>(r) * cols; }
    const double* row(int r) const { return data.data() + static_cast<size_t>(r) * cols; }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

    static Mat zeros(int r, int c) { return Mat(r, c); }

    static Mat identity(int n) {
        Mat m(n, n);
        for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
        return m;
    }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline std::string shape_str(const Mat& m) {
    return std::to_string(m.rows) + "x" + std::to_string(m.cols);
}

// Deterministic RNG: xoshiro256** seeded via splitmix64, plus a fixed
// Box-Muller gaussian. std:: distributions are implementation-defined, so
// everything here is hand-rolled to keep streams identical across platforms.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t x = seed;
        for (auto& si : s_) {
            // splitmix64
            x += 0x9e3779b97f4a7c15ULL;
            uint64_t z = x;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
            si = z ^ (z >> 31);
        }
    }

    uint64_t next_u64() {
        auto rotl = [](uint64_t v, int k) { return (v << k) | (v >> (64 - k)); };
        uint64_t result = rotl(s_[1] * 5, 7) * 9;
        uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in (0, 1]; never 0 so log() below is safe.
    double next_unit() {
        return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    }

    // Uniform integer in [0, n).
    uint64_t next_below(uint64_t n) { return next_u64() % n; }

    double next_gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = next_unit();
        double u2 = next_unit();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

private:
    uint64_t s_[4];
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

// C = A * B. ikj loop order: inner loop streams both B's row k and C's row i.
inline Mat matmul(const Mat& a, const Mat& b) {
    if (a.cols != b.rows)
        throw ShapeError("matmul: " + shape_str(a) + " * " + shape_str(b));
    Mat c(a.rows, b.cols);
    const int n = b.cols;
    for (int i = 0; i < a.rows; ++i) {
        double* ci = c.row(i);
        const double* ai = a.row(i);
        for (int k = 0; k < a.cols; ++k) {
            const double aik = ai[k];
            const double* bk = b.row(k);
            for (int j = 0; j < n; ++j) ci[j] += aik * bk[j];
        }
    }
    return c;
}

// C = A * B^T. Row-by-row dot products; both operands stream contiguously.
inline Mat matmul_nt(const Mat& a, const Mat& b) {
    if (a.cols != b.cols)
        throw ShapeError("matmul_nt: " + shape_str(a) + " * " + shape_str(b) + "^T");
    Mat c(a.rows, b.rows);
    for (int i = 0; i < a.rows; ++i) {
        const double* ai = a.row(i);
        double* ci = c.row(i);
        for (int j = 0; j < b.rows; ++j) {
            const double* bj = b.row(j);
            double acc = 0.0;
            for (int k = 0; k < a.cols; ++k) acc += ai[k] * bj[k];
            ci[j] = acc;
        }
    }
    return c;
}

// C = A^T * B.
inline Mat matmul_tn(const Mat& a, const Mat& b) {
    if (a.rows != b.rows)
        throw ShapeError("matmul_tn: " + shape_str(a) + "^T * " + shape_str(b));
    Mat c(a.cols, b.cols);
    for (int k = 0; k < a.rows; ++k) {
        const double* ak = a.row(k);
        const double* bk = b.row(k);
        for (int i = 0; i < a.cols; ++i) {
            double* ci = c.row(i);
            const double aki = ak[i];
            for (int j = 0; j < b.cols; ++j) ci[j] += aki * bk[j];
        }
    }
    return c;
}

inline Mat transpose(const Mat& a) {
    Mat t(a.cols, a.rows);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) t.at(j, i) = a.at(i, j);
    return t;
}

inline Mat add(const Mat& a, const Mat& b) {
    if (!a.same_shape(b))
        throw ShapeError("add: " + shape_str(a) + " + " + shape_str(b));
    Mat c = a;
    for (size_t i = 0; i < c.data.size(); ++i) c.data[i] += b.data[i];
    return c;
}

inline Mat scale(const Mat& a, double s) {
    Mat c = a;
    for (double& v : c.data) v *= s;
    return c;
}

// Boolean mask companion for softmax_rows. true = keep, false = exclude.
struct BoolMask {
    int rows = 0;
    int cols = 0;
    std::vector<uint8_t> keep;

    BoolMask() = default;
    BoolMask(int r, int c, bool fill = true)
        : rows(r), cols(c), keep(static_cast<size_t>(r) * c, fill ? 1 : 0) {}

    uint8_t& at(int r, int c) { return keep[static_cast<size_t>(r) * cols + c]; }
    uint8_t at(int r, int c) const { return keep[static_cast<size_t>(r) * cols + c]; }

    static BoolMask causal(int n) {
        BoolMask m(n, n, false);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j <= i; ++j) m.at(i, j) = 1;
        return m;
    }
};

// Row-wise softmax with max subtraction. Masked entries come out exactly 0
// and are excluded from the normalization; a fully masked row is an error.
inline Mat softmax_rows(const Mat& m, const BoolMask* mask = nullptr) {
    if (mask && (mask->rows != m.rows || mask->cols != m.cols))
        throw ShapeError("softmax_rows: mask shape mismatch");
    Mat out(m.rows, m.cols);
    for (int i = 0; i < m.rows; ++i) {
        const double* in = m.row(i);
        double* o = out.row(i);
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < m.cols; ++j)
            if (!mask || mask->at(i, j))
                mx = std::max(mx, in[j]);
        if (mx == -std::numeric_limits<double>::infinity())
            throw DegenerateRowError("softmax_rows: row " + std::to_string(i) +
                                     " fully masked");
        double z = 0.0;
        for (int j = 0; j < m.cols; ++j) {
            if (!mask || mask->at(i, j)) {
                o[j] = std::exp(in[j] - mx);
                z += o[j];
            } else {
                o[j] = 0.0;
            }
        }
        for (int j = 0; j < m.cols; ++j) o[j] /= z;
    }
    return out;
}

// Row-wise layer norm: zero mean, unit variance (eps-stabilized), then
// gain/bias. gain and bias are length-cols vectors given as 1xC mats.
inline Mat layer_norm(const Mat& x, const Mat& gain, const Mat& bias, double eps) {
    if (gain.rows != 1 || bias.rows != 1 || gain.cols != x.cols || bias.cols != x.cols)
        throw ShapeError("layer_norm: gain/bias length " + shape_str(gain) + "/" +
                         shape_str(bias) + " vs x " + shape_str(x));
    if (!(eps > 0)) throw ShapeError("layer_norm: eps must be positive");
    Mat out(x.rows, x.cols);
    const int n = x.cols;
    for (int i = 0; i < x.rows; ++i) {
        const double* xi = x.row(i);
        double* o = out.row(i);
        double mean = 0.0;
        for (int j = 0; j < n; ++j) mean += xi[j];
        mean /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) {
            double d = xi[j] - mean;
            var += d * d;
        }
        var /= n;
        double inv = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < n; ++j)
            o[j] = gain.data[j] * ((xi[j] - mean) * inv) + bias.data[j];
    }
    return out;
}

inline Mat seeded_gaussian(int rows, int cols, double std_dev, Rng& rng) {
    if (std_dev < 0) throw ShapeError("seeded_gaussian: std < 0");
    Mat m(rows, cols);
    if (std_dev == 0.0) return m;
    for (double& v : m.data) v = std_dev * rng.next_gaussian();
    return m;
}

}  // namespace san
