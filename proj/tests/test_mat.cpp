#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "san/mat.hpp"

using namespace san;

namespace {

Mat random_mat(int r, int c, Rng& rng) {
    Mat m(r, c);
    for (double& v : m.data) v = rng.next_gaussian();
    return m;
}

double max_abs_diff(const Mat& a, const oracle::Grid& b) {
    double worst = 0.0;
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j)
            worst = std::max(worst, std::abs(a.at(i, j) - b[i][j]));
    return worst;
}

}  // namespace

TEST_CASE("matmul identity and scalar cases") {
    Rng rng(7);
    Mat x = random_mat(3, 5, rng);
    Mat ix = matmul(Mat::identity(3), x);
    for (size_t i = 0; i < x.data.size(); ++i) REQUIRE(ix.data[i] == x.data[i]);

    Mat a(1, 1, {2.0});
    Mat b(1, 1, {3.0});
    REQUIRE(matmul(a, b).at(0, 0) == 6.0);
}

TEST_CASE("matmul matches triple-loop oracle") {
    Rng rng(11);
    Mat a = random_mat(5, 4, rng);
    Mat b = random_mat(4, 3, rng);
    Mat c = matmul(a, b);
    auto expect = oracle::matmul(oracle::from_mat(a), oracle::from_mat(b));
    REQUIRE(max_abs_diff(c, expect) <= 1e-12);
    REQUIRE(c.all_finite());
}

TEST_CASE("matmul shape error") {
    Mat a(2, 3);
    Mat b(2, 3);
    REQUIRE_THROWS_AS(matmul(a, b), ShapeError);
}

TEST_CASE("matmul transposed variants agree with explicit transpose") {
    Rng rng(23);
    Mat a = random_mat(4, 6, rng);
    Mat b = random_mat(5, 6, rng);
    Mat nt = matmul_nt(a, b);
    Mat ref = matmul(a, transpose(b));
    for (size_t i = 0; i < nt.data.size(); ++i)
        REQUIRE(std::abs(nt.data[i] - ref.data[i]) <= 1e-12);

    Mat c = random_mat(6, 4, rng);
    Mat d = random_mat(6, 5, rng);
    Mat tn = matmul_tn(c, d);
    Mat ref2 = matmul(transpose(c), d);
    for (size_t i = 0; i < tn.data.size(); ++i)
        REQUIRE(std::abs(tn.data[i] - ref2.data[i]) <= 1e-12);
}

TEST_CASE("matmul associativity property") {
    Rng rng(13);
    for (int trial = 0; trial < 5; ++trial) {
        Mat a = random_mat(4, 6, rng);
        Mat b = random_mat(6, 3, rng);
        Mat c = random_mat(3, 5, rng);
        Mat left = matmul(matmul(a, b), c);
        Mat right = matmul(a, matmul(b, c));
        for (size_t i = 0; i < left.data.size(); ++i) {
            double denom = std::max({std::abs(left.data[i]), std::abs(right.data[i]), 1.0});
            REQUIRE(std::abs(left.data[i] - right.data[i]) / denom <= 1e-9);
        }
    }
}

TEST_CASE("softmax constant row is uniform") {
    Mat m(1, 3, {4.2, 4.2, 4.2});
    Mat s = softmax_rows(m);
    for (int j = 0; j < 3; ++j) REQUIRE(s.at(0, j) == Catch::Approx(1.0 / 3).margin(1e-15));
}

TEST_CASE("softmax [0, ln 2] gives thirds") {
    Mat m(1, 2, {0.0, std::log(2.0)});
    Mat s = softmax_rows(m);
    REQUIRE(s.at(0, 0) == Catch::Approx(1.0 / 3).margin(1e-12));
    REQUIRE(s.at(0, 1) == Catch::Approx(2.0 / 3).margin(1e-12));
}

TEST_CASE("softmax masked entry matches direct two-entry formula") {
    Mat m(1, 3, {5.0, -1.0, 2.0});
    BoolMask mask(1, 3, true);
    mask.at(0, 2) = 0;
    Mat s = softmax_rows(m, &mask);
    auto expect = oracle::softmax_direct({5.0, -1.0, 2.0}, {true, true, false});
    for (int j = 0; j < 3; ++j) REQUIRE(std::abs(s.at(0, j) - expect[j]) <= 1e-12);
    REQUIRE(s.at(0, 2) == 0.0);
}

TEST_CASE("softmax fully masked row is a degenerate-row error") {
    Mat m(2, 2, {1.0, 2.0, 3.0, 4.0});
    BoolMask mask(2, 2, true);
    mask.at(1, 0) = 0;
    mask.at(1, 1) = 0;
    REQUIRE_THROWS_AS(softmax_rows(m, &mask), DegenerateRowError);
}

TEST_CASE("softmax rows sum to one with entries in [0,1], large logits included") {
    Rng rng(99);
    Mat m = random_mat(6, 9, rng);
    for (double& v : m.data) v *= 400.0;  // max subtraction keeps this finite
    Mat s = softmax_rows(m);
    REQUIRE(s.all_finite());
    for (int i = 0; i < s.rows; ++i) {
        double sum = 0.0;
        for (int j = 0; j < s.cols; ++j) {
            REQUIRE(s.at(i, j) >= 0.0);
            REQUIRE(s.at(i, j) <= 1.0);
            sum += s.at(i, j);
        }
        REQUIRE(std::abs(sum - 1.0) <= 1e-12);
    }
}

TEST_CASE("layer_norm constant row collapses to bias") {
    Mat x(1, 4, {3.0, 3.0, 3.0, 3.0});
    Mat gain(1, 4, {1.0, 1.0, 1.0, 1.0});
    Mat bias(1, 4);
    Mat y = layer_norm(x, gain, bias, 1e-6);
    for (int j = 0; j < 4; ++j) REQUIRE(y.at(0, j) == 0.0);
}

TEST_CASE("layer_norm on an already-normalized row is gain*row + bias") {
    // zero mean, unit (biased) variance
    Mat x(1, 4, {1.0, -1.0, 1.0, -1.0});
    Mat gain(1, 4, {2.0, 3.0, 4.0, 5.0});
    Mat bias(1, 4, {0.5, 0.5, 0.5, 0.5});
    Mat y = layer_norm(x, gain, bias, 1e-14);
    for (int j = 0; j < 4; ++j)
        REQUIRE(y.at(0, j) ==
                Catch::Approx(gain.at(0, j) * x.at(0, j) + 0.5).margin(1e-10));
}

TEST_CASE("layer_norm matches direct oracle") {
    Rng rng(5);
    Mat x = random_mat(3, 8, rng);
    Mat gain = random_mat(1, 8, rng);
    Mat bias = random_mat(1, 8, rng);
    Mat y = layer_norm(x, gain, bias, 1e-6);
    for (int i = 0; i < 3; ++i) {
        std::vector<double> row(x.row(i), x.row(i) + 8);
        auto expect = oracle::layer_norm_direct(row, oracle::from_mat(gain)[0],
                                                oracle::from_mat(bias)[0], 1e-6);
        for (int j = 0; j < 8; ++j) REQUIRE(std::abs(y.at(i, j) - expect[j]) <= 1e-10);
    }
}

TEST_CASE("layer_norm shape error") {
    Mat x(2, 4);
    Mat gain(1, 3);
    Mat bias(1, 4);
    REQUIRE_THROWS_AS(layer_norm(x, gain, bias, 1e-6), ShapeError);
}

TEST_CASE("seeded_gaussian std zero gives the zero matrix") {
    Rng rng(1);
    Mat m = seeded_gaussian(4, 5, 0.0, rng);
    for (double v : m.data) REQUIRE(v == 0.0);
}

TEST_CASE("seeded_gaussian deterministic per seed") {
    Rng a(42), b(42);
    Mat ma = seeded_gaussian(17, 13, 0.7, a);
    Mat mb = seeded_gaussian(17, 13, 0.7, b);
    REQUIRE(ma.data == mb.data);
}

TEST_CASE("seeded_gaussian sample statistics") {
    Rng rng(42);
    Mat m = seeded_gaussian(100, 100, 1.0, rng);
    const double n = 1e4;
    double mean = 0.0;
    for (double v : m.data) mean += v;
    mean /= n;
    REQUIRE(std::abs(mean) <= 5.0 / std::sqrt(n));
    double var = 0.0;
    for (double v : m.data) var += (v - mean) * (v - mean);
    var /= n - 1;
    double sd = std::sqrt(var);
    REQUIRE(sd >= 0.9);
    REQUIRE(sd <= 1.1);
}

TEST_CASE("rng stream is stable across constructions") {
    Rng a(123), b(123);
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
}
