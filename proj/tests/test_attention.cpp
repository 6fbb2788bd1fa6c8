#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "san/attention.hpp"

using namespace san;

namespace {

Mat random_mat(int r, int c, Rng& rng) {
    Mat m(r, c);
    for (double& v : m.data) v = rng.next_gaussian();
    return m;
}

}  // namespace

TEST_CASE("attn_weights single position") {
    Mat q(1, 4, {0.3, -0.2, 1.0, 0.5});
    Mat k = q;
    Mat s = attn_weights(q, k, 4, false);
    REQUIRE(s.rows == 1);
    REQUIRE(s.cols == 1);
    REQUIRE(s.at(0, 0) == 1.0);
}

TEST_CASE("attn_weights zero queries are uniform") {
    Rng rng(3);
    Mat q(2, 8);
    Mat k = random_mat(4, 8, rng);
    Mat s = attn_weights(q, k, 8, false);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 4; ++j)
            REQUIRE(s.at(i, j) == Catch::Approx(0.25).margin(1e-15));
}

TEST_CASE("attn_weights causal matches naive oracle and zeroes the future") {
    Rng rng(17);
    Mat q = random_mat(3, 8, rng);
    Mat k = random_mat(3, 8, rng);
    Mat s = attn_weights(q, k, 8, true);
    for (int i = 0; i < 3; ++i) {
        std::vector<double> scores(3);
        std::vector<bool> keep(3);
        for (int j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (int c = 0; c < 8; ++c) acc += q.at(i, c) * k.at(j, c);
            scores[j] = acc / std::sqrt(8.0);
            keep[j] = j <= i;
        }
        auto expect = oracle::softmax_direct(scores, keep);
        for (int j = 0; j < 3; ++j) {
            REQUIRE(std::abs(s.at(i, j) - expect[j]) <= 1e-12);
            if (j > i) REQUIRE(s.at(i, j) == 0.0);
        }
        double sum = 0.0;
        for (int j = 0; j < 3; ++j) sum += s.at(i, j);
        REQUIRE(std::abs(sum - 1.0) <= 1e-12);
    }
}

TEST_CASE("attn_apply identity and uniform rows") {
    Rng rng(5);
    Mat v = random_mat(3, 6, rng);
    Mat s = Mat::identity(3);
    Mat a = attn_apply(s, v);
    REQUIRE(a.data == v.data);

    Mat s2(1, 2, {0.5, 0.5});
    Mat v2 = random_mat(2, 4, rng);
    Mat a2 = attn_apply(s2, v2);
    for (int j = 0; j < 4; ++j)
        REQUIRE(a2.at(0, j) == Catch::Approx(0.5 * (v2.at(0, j) + v2.at(1, j))));
}

TEST_CASE("attn_apply outputs stay in the convex envelope of value rows") {
    Rng rng(29);
    Mat scores = random_mat(5, 7, rng);
    Mat s = softmax_rows(scores);
    Mat v = random_mat(7, 4, rng);
    Mat a = attn_apply(s, v);
    for (int j = 0; j < 4; ++j) {
        double lo = v.at(0, j), hi = v.at(0, j);
        for (int r = 1; r < 7; ++r) {
            lo = std::min(lo, v.at(r, j));
            hi = std::max(hi, v.at(r, j));
        }
        for (int i = 0; i < 5; ++i) {
            REQUIRE(a.at(i, j) >= lo - 1e-12);
            REQUIRE(a.at(i, j) <= hi + 1e-12);
        }
    }
}

TEST_CASE("attn_apply shape error") {
    REQUIRE_THROWS_AS(attn_apply(Mat(2, 3), Mat(4, 2)), ShapeError);
}

TEST_CASE("multi_head identity weights pass the input through") {
    Mat x(1, 4, {0.1, 0.2, -0.3, 0.4});
    ProjectionSet proj = ProjectionSet::full(Mat::identity(4), Mat::identity(4),
                                             Mat::identity(4), Mat::identity(4));
    auto [out, s] = multi_head(x, x, proj, 1, false);
    for (int j = 0; j < 4; ++j) REQUIRE(out.at(0, j) == Catch::Approx(x.at(0, j)));
    REQUIRE(s.head[0].at(0, 0) == 1.0);
}

TEST_CASE("multi_head with shared identity weights reproduces x_kv") {
    Mat x_q(2, 4, {9.0, 9.0, 9.0, 9.0, -9.0, -9.0, -9.0, -9.0});
    Rng rng(31);
    Mat x_kv = random_mat(2, 4, rng);
    AttnWeights shared(1, 2, 2, false);
    shared.head[0] = Mat::identity(2);
    ProjectionSet proj = ProjectionSet::shared_self(Mat::identity(4), Mat::identity(4));
    auto [out, s] = multi_head(x_q, x_kv, proj, 1, false, &shared);
    for (size_t i = 0; i < out.data.size(); ++i)
        REQUIRE(out.data[i] == Catch::Approx(x_kv.data[i]));
}

TEST_CASE("multi_head equals per-head single-head reference") {
    Rng rng(41);
    const int d = 8, h = 2, dk = 4, l = 4;
    Mat x = random_mat(l, d, rng);
    ProjectionSet proj = ProjectionSet::full(random_mat(d, d, rng), random_mat(d, d, rng),
                                             random_mat(d, d, rng), random_mat(d, d, rng));
    auto [out, s] = multi_head(x, x, proj, h, false);

    // reference: project, slice heads, run each head through the
    // single-head primitives, concat, then w_o
    Mat q = matmul(x, *proj.wq);
    Mat k = matmul(x, *proj.wk);
    Mat v = matmul(x, *proj.wv);
    Mat ctx(l, d);
    for (int head = 0; head < h; ++head) {
        Mat sh = attn_weights(head_slice(q, head, dk), head_slice(k, head, dk), dk, false);
        Mat ch = attn_apply(sh, head_slice(v, head, dk));
        for (int i = 0; i < l; ++i)
            for (int j = 0; j < dk; ++j) ctx.at(i, head * dk + j) = ch.at(i, j);
        for (size_t i = 0; i < sh.data.size(); ++i)
            REQUIRE(std::abs(s.head[head].data[i] - sh.data[i]) <= 1e-12);
    }
    Mat expect = matmul(ctx, *proj.wo);
    for (size_t i = 0; i < out.data.size(); ++i)
        REQUIRE(std::abs(out.data[i] - expect.data[i]) <= 1e-12);
}

TEST_CASE("multi_head presence pattern errors") {
    Rng rng(43);
    Mat x = random_mat(2, 4, rng);
    ProjectionSet shared = ProjectionSet::shared_self(Mat::identity(4), Mat::identity(4));
    REQUIRE_THROWS_AS(multi_head(x, x, shared, 1, false), ConfigError);

    AttnWeights s(1, 2, 2, false);
    s.head[0] = Mat::identity(2);
    ProjectionSet full = ProjectionSet::full(Mat::identity(4), Mat::identity(4),
                                             Mat::identity(4), Mat::identity(4));
    REQUIRE_THROWS_AS(multi_head(x, x, full, 1, false, &s), ConfigError);
}

TEST_CASE("ProjectionSet rejects mixed presence") {
    ProjectionSet p;
    p.wq = Mat::identity(2);
    p.wv = Mat::identity(2);
    p.wo = Mat::identity(2);
    REQUIRE_THROWS_AS(p.presence(), ConfigError);
}

TEST_CASE("self_attn_step first step") {
    Rng rng(51);
    const int d = 6, h = 2;
    Mat x = random_mat(1, d, rng);
    ProjectionSet proj = ProjectionSet::full(random_mat(d, d, rng), random_mat(d, d, rng),
                                             random_mat(d, d, rng), random_mat(d, d, rng));
    KVCache cache;
    cache.init({true}, d, 8);
    auto [out, s_row] = self_attn_step(cache, 0, x, proj, h);
    REQUIRE(s_row.rows == h);
    REQUIRE(s_row.cols == 1);
    for (int head = 0; head < h; ++head) REQUIRE(s_row.at(head, 0) == 1.0);
    Mat expect = matmul(matmul(x, *proj.wv), *proj.wo);
    for (int j = 0; j < d; ++j) REQUIRE(out.at(0, j) == Catch::Approx(expect.at(0, j)));
    REQUIRE(cache.self_layers[0].k.count == 1);
    REQUIRE(cache.self_layers[0].v.count == 1);
}

TEST_CASE("self_attn_step shared layer applies the given row to its own values") {
    Rng rng(53);
    const int d = 6, h = 2, dk = 3;
    ProjectionSet shared = ProjectionSet::shared_self(random_mat(d, d, rng),
                                                      random_mat(d, d, rng));
    KVCache cache;
    cache.init({false}, d, 8);
    // two prior steps
    Mat x1 = random_mat(1, d, rng);
    Mat x2 = random_mat(1, d, rng);
    Mat row1(h, 1, {1.0, 1.0});
    self_attn_step(cache, 0, x1, shared, h, &row1);
    Mat row2 = random_mat(h, 2, rng);
    for (int head = 0; head < h; ++head) {
        double a = std::exp(row2.at(head, 0)), b = std::exp(row2.at(head, 1));
        row2.at(head, 0) = a / (a + b);
        row2.at(head, 1) = b / (a + b);
    }
    auto [out, s_row] = self_attn_step(cache, 0, x2, shared, h, &row2);
    REQUIRE(s_row.data == row2.data);
    REQUIRE(cache.self_layers[0].k.count == 0);  // no key rows on shared layers

    // equals attn_apply over the cached projected values, head by head
    Mat v1 = matmul(x1, *shared.wv);
    Mat v2 = matmul(x2, *shared.wv);
    Mat ctx(1, d);
    for (int head = 0; head < h; ++head)
        for (int j = 0; j < dk; ++j)
            ctx.at(0, head * dk + j) = row2.at(head, 0) * v1.at(0, head * dk + j) +
                                       row2.at(head, 1) * v2.at(0, head * dk + j);
    Mat expect = matmul(ctx, *shared.wo);
    for (int j = 0; j < d; ++j)
        REQUIRE(out.at(0, j) == Catch::Approx(expect.at(0, j)).margin(1e-12));
}

TEST_CASE("self_attn_step incremental equals batched multi_head rows") {
    Rng rng(57);
    const int d = 8, h = 2, steps = 6;
    Mat xs = random_mat(steps, d, rng);
    ProjectionSet proj = ProjectionSet::full(random_mat(d, d, rng), random_mat(d, d, rng),
                                             random_mat(d, d, rng), random_mat(d, d, rng));
    auto [batch_out, batch_s] = multi_head(xs, xs, proj, h, true);

    KVCache cache;
    cache.init({true}, d, steps);
    for (int t = 0; t < steps; ++t) {
        Mat x_new(1, d);
        for (int j = 0; j < d; ++j) x_new.at(0, j) = xs.at(t, j);
        auto [out, s_row] = self_attn_step(cache, 0, x_new, proj, h);
        for (int j = 0; j < d; ++j)
            REQUIRE(std::abs(out.at(0, j) - batch_out.at(t, j)) <= 1e-9);
        for (int head = 0; head < h; ++head)
            for (int r = 0; r <= t; ++r)
                REQUIRE(std::abs(s_row.at(head, r) - batch_s.head[head].at(t, r)) <= 1e-12);
    }
}

TEST_CASE("self_attn_step stale shared row is a state error") {
    Rng rng(61);
    const int d = 4, h = 1;
    ProjectionSet shared = ProjectionSet::shared_self(random_mat(d, d, rng),
                                                      random_mat(d, d, rng));
    KVCache cache;
    cache.init({false}, d, 4);
    Mat x = random_mat(1, d, rng);
    Mat short_row(h, 2, {0.5, 0.5});  // cache will hold 1 row, not 2
    REQUIRE_THROWS_AS(self_attn_step(cache, 0, x, shared, h, &short_row), StateError);
}

TEST_CASE("encdec_block_bottom single source position") {
    Rng rng(67);
    const int d = 6, h = 2;
    Mat x_q = random_mat(3, d, rng);
    Mat enc_out = random_mat(1, d, rng);
    ProjectionSet proj = ProjectionSet::full(random_mat(d, d, rng), random_mat(d, d, rng),
                                             random_mat(d, d, rng), random_mat(d, d, rng));
    auto [a, s] = encdec_block_bottom(x_q, enc_out, proj, h);
    for (int head = 0; head < h; ++head)
        for (int i = 0; i < 3; ++i) REQUIRE(s.head[head].at(i, 0) == 1.0);
    Mat expect_row = matmul(matmul(enc_out, *proj.wv), *proj.wo);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < d; ++j)
            REQUIRE(a.at(i, j) == Catch::Approx(expect_row.at(0, j)));
}

TEST_CASE("encdec_block_bottom matches the naive oracle") {
    Rng rng(71);
    const int d = 8, h = 2;
    Mat x_q = random_mat(2, d, rng);
    Mat enc_out = random_mat(3, d, rng);
    ProjectionSet proj = ProjectionSet::full(random_mat(d, d, rng), random_mat(d, d, rng),
                                             random_mat(d, d, rng), random_mat(d, d, rng));
    auto [a, s] = encdec_block_bottom(x_q, enc_out, proj, h);

    auto q = oracle::matmul(oracle::from_mat(x_q), oracle::from_mat(*proj.wq));
    auto k = oracle::matmul(oracle::from_mat(enc_out), oracle::from_mat(*proj.wk));
    auto v = oracle::matmul(oracle::from_mat(enc_out), oracle::from_mat(*proj.wv));
    auto at = oracle::attention_direct(q, k, v, h, false);
    auto expect = oracle::matmul(at.out, oracle::from_mat(*proj.wo));
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < d; ++j)
            REQUIRE(std::abs(a.at(i, j) - expect[i][j]) <= 1e-12);
}

TEST_CASE("encdec_block_bottom requires FULL projections") {
    Rng rng(73);
    Mat x = random_mat(1, 4, rng);
    REQUIRE_THROWS_AS(encdec_block_bottom(x, x, ProjectionSet::shared_encdec(), 1),
                      ConfigError);
}
