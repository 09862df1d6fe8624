#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "refblend/semantic_seg.hpp"

using namespace refblend;

namespace {

TokenGrouping two_concepts() {
    TokenGrouping g;
    g.concept_tokens = {{1}, {2, 3}};
    return g;
}

} // namespace

TEST_CASE("refine: identity transition leaves maps unchanged") {
    Rng rng(91);
    Tensor c = oracle::random_row_stochastic(rng, 6, 4);
    Tensor s({6, 6});
    for (int i = 0; i < 6; ++i) s(i, i) = 1.0;
    auto out = refine_with_self_attention({s}, {c});
    CHECK(oracle::max_abs_diff(out[0], c) < 1e-15);
}

TEST_CASE("refine: uniform transition averages every row") {
    Rng rng(92);
    Tensor c = oracle::random_row_stochastic(rng, 6, 4);
    Tensor s = Tensor::full({6, 6}, 1.0 / 6.0);
    auto out = refine_with_self_attention({s}, {c});
    for (int tok = 0; tok < 4; ++tok) {
        double mean = 0.0;
        for (int i = 0; i < 6; ++i) mean += c(i, tok);
        mean /= 6.0;
        for (int i = 0; i < 6; ++i) CHECK(out[0](i, tok) == doctest::Approx(mean).epsilon(1e-12));
    }
}

TEST_CASE("refine: matches the scalar matmul oracle and stays row-stochastic") {
    Rng rng(93);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor s = oracle::random_row_stochastic(rng, 6, 6);
        Tensor c = oracle::random_row_stochastic(rng, 6, 4);
        auto out = refine_with_self_attention({s}, {c});
        CHECK(oracle::max_abs_diff(out[0], oracle::matmul(s, c)) < 1e-12);
        for (int i = 0; i < 6; ++i) {
            double sum = 0.0;
            for (int j = 0; j < 4; ++j) sum += out[0](i, j);
            CHECK(std::abs(sum - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("refine: shape mismatch is a usage error") {
    Tensor s({4, 4}), c({6, 3});
    CHECK_THROWS_AS(refine_with_self_attention({s}, {c}), UsageError);
    CHECK_THROWS_AS(refine_with_self_attention({s}, {}), UsageError);
}

TEST_CASE("aggregate_cross: single map at target resolution is unchanged") {
    Rng rng(94);
    Tensor m = oracle::random_row_stochastic(rng, 16, 3);
    Tensor out = aggregate_cross({m}, 4, 4);
    CHECK(oracle::max_abs_diff(out, m) < 1e-10);
}

TEST_CASE("aggregate_cross: averaging a map with itself is the identity") {
    Rng rng(95);
    Tensor m = oracle::random_row_stochastic(rng, 16, 5);
    Tensor out = aggregate_cross({m, m}, 4, 4);
    CHECK(oracle::max_abs_diff(out, m) < 1e-10);
}

TEST_CASE("aggregate_cross: mixed resolutions match the composition oracle") {
    Rng rng(96);
    int K = 3;
    Tensor coarse = oracle::random_row_stochastic(rng, 16, K); // 4x4
    Tensor fine = oracle::random_row_stochastic(rng, 64, K);   // 8x8
    Tensor out = aggregate_cross({coarse, fine}, 8, 8);

    // Hand-evaluated upsample-average-renormalize.
    Tensor acc({64, K});
    for (int tok = 0; tok < K; ++tok) {
        Tensor plane({4, 4});
        for (int i = 0; i < 16; ++i) plane.data[static_cast<size_t>(i)] = coarse(i, tok);
        Tensor up = oracle::bilinear_resize(plane, 8, 8);
        for (int i = 0; i < 64; ++i) acc(i, tok) = 0.5 * (up.data[static_cast<size_t>(i)] + fine(i, tok));
    }
    for (int i = 0; i < 64; ++i) {
        long double sum = 0.0L;
        for (int tok = 0; tok < K; ++tok) sum += acc(i, tok);
        for (int tok = 0; tok < K; ++tok)
            CHECK(std::abs(out(i, tok) - static_cast<double>(acc(i, tok) / sum)) < 1e-10);
    }
}

TEST_CASE("aggregate_cross: empty input and non-stochastic maps are rejected") {
    CHECK_THROWS_AS(aggregate_cross({}, 4, 4), UsageError);
    Tensor bad = Tensor::full({16, 2}, 2.0);
    CHECK_THROWS_AS(aggregate_cross({bad}, 4, 4), UsageError);
}

TEST_CASE("segment_latent: one-hot rows label their concept") {
    TokenGrouping g = two_concepts();
    Tensor c({4, 4});
    for (int i = 0; i < 4; ++i) c(i, 1) = 1.0; // token 1 -> concept 1
    SemanticMap map = segment_latent(c, g, 2, 2);
    for (int l : map.labels) CHECK(l == 1);
}

TEST_CASE("segment_latent: non-concept argmax merges into background") {
    TokenGrouping g = two_concepts();
    Tensor c({4, 4});
    for (int i = 0; i < 4; ++i) c(i, 0) = 1.0; // token 0 is nobody's concept
    SemanticMap map = segment_latent(c, g, 2, 2);
    for (int l : map.labels) CHECK(l == 0);
}

TEST_CASE("segment_latent: matches the brute-force argmax oracle, ties included") {
    Rng rng(97);
    TokenGrouping g = two_concepts();
    for (int trial = 0; trial < 100; ++trial) {
        Tensor c({16, 5});
        for (double& v : c.data) v = rng.next_uniform();
        // Force exact ties on a few rows.
        for (int i = 0; i < 4; ++i) {
            int a = rng.next_int(0, 4), b = rng.next_int(0, 4);
            c(i, a) = 0.9;
            c(i, b) = 0.9;
            for (int j = 0; j < 5; ++j)
                if (j != a && j != b) c(i, j) = std::min(c(i, j), 0.8);
        }
        SemanticMap map = segment_latent(c, g, 4, 4);
        for (int i = 0; i < 16; ++i) {
            int best = 0;
            for (int j = 1; j < 5; ++j)
                if (c(i, j) > c(i, best)) best = j;
            int expect = best == 1 ? 1 : (best == 2 || best == 3) ? 2 : 0;
            CHECK(map.labels[static_cast<size_t>(i)] == expect);
        }
    }
}

TEST_CASE("segment_latent: labels are scale-invariant per row") {
    Rng rng(98);
    TokenGrouping g = two_concepts();
    Tensor c({16, 5});
    for (double& v : c.data) v = rng.next_uniform() + 1e-3;
    SemanticMap base = segment_latent(c, g, 4, 4);
    Tensor scaled = c;
    for (int i = 0; i < 16; ++i) {
        double f = 0.1 + rng.next_uniform() * 10.0;
        for (int j = 0; j < 5; ++j) scaled(i, j) *= f;
    }
    SemanticMap after = segment_latent(scaled, g, 4, 4);
    CHECK(base.labels == after.labels);
}

TEST_CASE("segment_latent: every patch gets exactly one label") {
    Rng rng(99);
    TokenGrouping g = two_concepts();
    Tensor c({36, 5});
    for (double& v : c.data) v = rng.next_uniform();
    SemanticMap map = segment_latent(c, g, 6, 6);
    CHECK(map.labels.size() == 36);
    for (int l : map.labels) {
        CHECK(l >= 0);
        CHECK(l <= 2);
    }
}

TEST_CASE("refinement flips an isolated mislabeled pixel to its region") {
    // Fixture family: a 4x4 patch grid, uniform concept-1 region with one
    // interior pixel pointing at a background token, S encoding strong
    // local smoothing. After C_hat = S*C the flipped pixel's argmax must
    // rejoin the region.
    TokenGrouping g;
    g.concept_tokens = {{1}};
    Rng rng(100);
    int flipped_fixed = 0;
    for (int fixture = 0; fixture < 20; ++fixture) {
        int hw = 16, K = 3;
        Tensor c({hw, K});
        int hole = 5 + fixture % 6; // interior positions on the 4x4 grid
        for (int i = 0; i < hw; ++i) {
            double conf = 0.7 + 0.25 * rng.next_uniform();
            if (i == hole) {
                c(i, 0) = conf;
                c(i, 1) = (1.0 - conf) / 2;
                c(i, 2) = (1.0 - conf) / 2;
            } else {
                c(i, 1) = conf;
                c(i, 0) = (1.0 - conf) / 2;
                c(i, 2) = (1.0 - conf) / 2;
            }
        }
        SemanticMap before = segment_latent(c, g, 4, 4);
        CHECK(before.labels[static_cast<size_t>(hole)] == 0);

        // Local smoothing over the 4-neighborhood.
        Tensor s({hw, hw});
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) {
                int i = y * 4 + x;
                std::vector<int> nbrs = {i};
                if (y > 0) nbrs.push_back(i - 4);
                if (y < 3) nbrs.push_back(i + 4);
                if (x > 0) nbrs.push_back(i - 1);
                if (x < 3) nbrs.push_back(i + 1);
                for (int j : nbrs) s(i, j) = 1.0 / nbrs.size();
            }
        auto refined = refine_with_self_attention({s}, {c});
        SemanticMap after = segment_latent(refined[0], g, 4, 4);
        if (after.labels[static_cast<size_t>(hole)] == 1) ++flipped_fixed;
        for (int i = 0; i < hw; ++i)
            if (i != hole) CHECK(after.labels[static_cast<size_t>(i)] == 1);
    }
    CHECK(flipped_fixed == 20);
}

TEST_CASE("downsample_majority: majority wins, ties go to the lowest label") {
    SemanticMap map;
    map.h = 4;
    map.w = 4;
    map.labels = {1, 1, 2, 2,
                  1, 0, 2, 1,
                  0, 0, 1, 2,
                  0, 0, 2, 1};
    SemanticMap down = downsample_majority(map, 2, 2);
    CHECK(down.labels == std::vector<int>{1, 2, 0, 1}); // bottom-right 2x2 ties 2/2 -> 1
    CHECK_THROWS_AS(downsample_majority(map, 3, 3), UsageError);
}

TEST_CASE("grouping validation rejects overlap and bad indices") {
    TokenGrouping g;
    g.concept_tokens = {{1, 2}, {2}};
    CHECK_THROWS_AS(g.validate(4), UsageError);
    g.concept_tokens = {{5}};
    CHECK_THROWS_AS(g.validate(4), UsageError);
    g.concept_tokens = {{}};
    CHECK_THROWS_AS(g.validate(4), UsageError);
}
