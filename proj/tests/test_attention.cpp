#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "glab/attention.hpp"
#include "glab/rng.hpp"

using namespace glab;

namespace {

AttnLayerWeights random_weights(RngStream& rng, std::size_t heads, std::size_t c,
                                std::size_t d) {
    AttnLayerWeights w;
    w.heads = heads;
    w.key_dim = d;
    for (std::size_t h = 0; h < heads; ++h) {
        Matrix q(c, d), k(c, d), v(c, d);
        for (double& x : q.v) x = rng.normal();
        for (double& x : k.v) x = rng.normal();
        for (double& x : v.v) x = rng.normal();
        w.wq.push_back(q);
        w.wk.push_back(k);
        w.wv.push_back(v);
    }
    return w;
}

}  // namespace

TEST_CASE("single token attends only to itself") {
    RngStream rng(1);
    const auto w = random_weights(rng, 2, 4, 2);
    Matrix x(1, 4);
    for (double& v : x.v) v = rng.normal();
    const auto res = self_attention(x, w);
    CHECK(res.attn.at(0, 0, 0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(res.attn.at(1, 0, 0) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("identical rows give uniform attention") {
    RngStream rng(2);
    const auto w = random_weights(rng, 2, 6, 3);
    Matrix x(5, 6);
    for (std::size_t j = 0; j < 6; ++j) {
        const double v = rng.normal();
        for (std::size_t i = 0; i < 5; ++i) x(i, j) = v;
    }
    const auto res = self_attention(x, w);
    for (std::size_t h = 0; h < 2; ++h) {
        for (std::size_t q = 0; q < 5; ++q) {
            for (std::size_t k = 0; k < 5; ++k) {
                CHECK(res.attn.at(h, q, k) == doctest::Approx(0.2).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("attention rows sum to one on random inputs") {
    RngStream rng(3);
    const auto w = random_weights(rng, 4, 8, 2);
    Matrix x(9, 8);
    for (double& v : x.v) v = rng.normal();
    const auto res = self_attention(x, w);
    for (std::size_t h = 0; h < 4; ++h) {
        for (std::size_t q = 0; q < 9; ++q) {
            double s = 0.0;
            for (std::size_t k = 0; k < 9; ++k) s += res.attn.at(h, q, k);
            CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("random 4-token 2-head instance matches a direct matrix oracle") {
    RngStream rng(4);
    const std::size_t tokens = 4, c = 6, d = 3, heads = 2;
    const auto w = random_weights(rng, heads, c, d);
    Matrix x(tokens, c);
    for (double& v : x.v) v = rng.normal();

    const auto res = self_attention(x, w);

    // naive reimplementation with explicit loops
    for (std::size_t h = 0; h < heads; ++h) {
        Matrix q(tokens, d), k(tokens, d), v(tokens, d);
        for (std::size_t i = 0; i < tokens; ++i) {
            for (std::size_t e = 0; e < d; ++e) {
                double sq = 0.0, sk = 0.0, sv = 0.0;
                for (std::size_t cc = 0; cc < c; ++cc) {
                    sq += x(i, cc) * w.wq[h](cc, e);
                    sk += x(i, cc) * w.wk[h](cc, e);
                    sv += x(i, cc) * w.wv[h](cc, e);
                }
                q(i, e) = sq;
                k(i, e) = sk;
                v(i, e) = sv;
            }
        }
        for (std::size_t i = 0; i < tokens; ++i) {
            std::vector<double> logits(tokens);
            double denom = 0.0;
            for (std::size_t j = 0; j < tokens; ++j) {
                double s = 0.0;
                for (std::size_t e = 0; e < d; ++e) s += q(i, e) * k(j, e);
                logits[j] = std::exp(s / std::sqrt(static_cast<double>(d)));
                denom += logits[j];
            }
            for (std::size_t j = 0; j < tokens; ++j) {
                CHECK(res.attn.at(h, i, j) == doctest::Approx(logits[j] / denom).epsilon(1e-12));
            }
            for (std::size_t e = 0; e < d; ++e) {
                double expected = 0.0;
                for (std::size_t j = 0; j < tokens; ++j) {
                    expected += logits[j] / denom * v(j, e);
                }
                CHECK(res.y(i, h * d + e) == doctest::Approx(expected).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("dimension mismatches are rejected") {
    RngStream rng(5);
    auto w = random_weights(rng, 2, 6, 3);
    Matrix x(4, 8);  // channels disagree with weights
    CHECK_THROWS_AS(self_attention(x, w), std::invalid_argument);

    auto w2 = random_weights(rng, 2, 6, 2);  // heads*d != c
    Matrix x2(4, 6);
    CHECK_THROWS_AS(self_attention(x2, w2), std::invalid_argument);
}
