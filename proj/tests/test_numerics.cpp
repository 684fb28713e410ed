#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "glab/grid.hpp"
#include "glab/numerics.hpp"
#include "glab/rng.hpp"
#include "glab/sym.hpp"

using namespace glab;

namespace {

Grid random_grid(RngStream& rng, std::size_t c, std::size_t h, std::size_t w) {
    Grid g(c, h, w);
    for (double& v : g.data) v = 2.0 * rng.uniform01() - 1.0;
    return g;
}

// Independent O(n^4) double-sum DFT used as the oracle for dft_magnitude.
Grid naive_dft_magnitude(const Grid& patch) {
    const std::size_t n = patch.height;
    Grid mag(1, n, n);
    const double two_pi = 2.0 * 3.14159265358979323846;
    for (std::size_t u = 0; u < n; ++u) {
        for (std::size_t v = 0; v < n; ++v) {
            double re = 0.0, im = 0.0;
            for (std::size_t y = 0; y < n; ++y) {
                for (std::size_t x = 0; x < n; ++x) {
                    const double ang = two_pi * (static_cast<double>(u * y) +
                                                 static_cast<double>(v * x)) /
                                       static_cast<double>(n);
                    re += patch.at(0, y, x) * std::cos(ang);
                    im -= patch.at(0, y, x) * std::sin(ang);
                }
            }
            mag.at(0, u, v) = std::sqrt(re * re + im * im);
        }
    }
    return mag;
}

}  // namespace

TEST_CASE("gaussian_kernel delta limit") {
    const auto k = gaussian_kernel(1e-6);
    REQUIRE(k.size() == 3);
    CHECK(k[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(k[0] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("gaussian_kernel sigma=3 has length 19") {
    CHECK(gaussian_kernel(3.0).size() == 19);
}

TEST_CASE("gaussian_kernel sigma=1 center weight matches direct summation") {
    // oracle: evaluate the density at taps -3..3and normalize by their sum
    double taps[7];
    double sum = 0.0;
    for (int i = -3; i <= 3; ++i) {
        taps[i + 3] = std::exp(-0.5 * i * i);
        sum += taps[i + 3];
    }
    const double expected_center = taps[3] / sum;
    const auto k = gaussian_kernel(1.0);
    REQUIRE(k.size() == 7);
    CHECK(k[3] == doctest::Approx(expected_center).epsilon(1e-14));
    double total = 0.0;
    for (double w : k) total += w;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("gaussian_kernel rejects bad sigma") {
    CHECK_THROWS_AS(gaussian_kernel(0.0), std::invalid_argument);
    CHECK_THROWS_AS(gaussian_kernel(-1.0), std::invalid_argument);
    CHECK_THROWS_AS(gaussian_kernel(std::nan("")), std::invalid_argument);
    CHECK_THROWS_AS(gaussian_kernel(std::numeric_limits<double>::infinity()),
                    std::invalid_argument);
}

TEST_CASE("blur sigma=0 is the identity") {
    RngStream rng(1);
    const Grid x = random_grid(rng, 2, 5, 7);
    const Grid y = blur(x, 0.0);
    CHECK(max_abs_diff(x, y) == 0.0);
}

TEST_CASE("blur keeps constant grids constant") {
    Grid x(1, 6, 6, 0.37);
    for (double sigma : {0.5, 1.0, 2.5}) {
        const Grid y = blur(x, sigma);
        for (double v : y.data) CHECK(v == doctest::Approx(0.37).epsilon(1e-12));
    }
}

TEST_CASE("blur of a centered impulse is the separable kernel outer product") {
    const std::size_t n = 15;
    Grid x(1, n, n, 0.0);
    x.at(0, 7, 7) = 1.0;
    const auto k = gaussian_kernel(1.0);
    const long r = static_cast<long>(k.size() / 2);
    const Grid y = blur(x, 1.0);
    for (std::size_t yy = 0; yy < n; ++yy) {
        for (std::size_t xx = 0; xx < n; ++xx) {
            const long dy = static_cast<long>(yy) - 7;
            const long dx = static_cast<long>(xx) - 7;
            double expected = 0.0;
            if (std::abs(dy) <= r && std::abs(dx) <= r) {
                expected = k[dy + r] * k[dx + r];
            }
            CHECK(y.at(0, yy, xx) == doctest::Approx(expected).epsilon(1e-12));
        }
    }
}

TEST_CASE("blur rejects negative sigma") {
    Grid x(1, 4, 4, 0.0);
    CHECK_THROWS_AS(blur(x, -0.5), std::invalid_argument);
}

TEST_CASE("blur is linear") {
    RngStream rng(7);
    for (int trial = 0; trial < 10; ++trial) {
        const Grid x = random_grid(rng, 1, 9, 9);
        const Grid y = random_grid(rng, 1, 9, 9);
        const double a = 2.0 * rng.uniform01() - 1.0;
        const double b = 2.0 * rng.uniform01() - 1.0;
        const double sigma = 0.3 + 2.0 * rng.uniform01();
        Grid combo = a * x + b * y;
        const Grid lhs = blur(combo, sigma);
        const Grid rhs = a * blur(x, sigma) + b * blur(y, sigma);
        CHECK(max_abs_diff(lhs, rhs) < 1e-10);
    }
}

TEST_CASE("blur contracts variance monotonically in sigma") {
    RngStream rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        const Grid x = random_grid(rng, 1, 16, 16);
        double prev = variance(x);
        for (double sigma : {0.5, 1.0, 2.0, 4.0}) {
            const double v = variance(blur(x, sigma));
            CHECK(v <= prev + 1e-12);
            prev = v;
        }
    }
}

TEST_CASE("blur sigma=inf fills each channel with its mean") {
    RngStream rng(3);
    const Grid x = random_grid(rng, 2, 8, 8);
    const Grid y = blur(x, std::numeric_limits<double>::infinity());
    for (std::size_t c = 0; c < 2; ++c) {
        double m = 0.0;
        for (std::size_t i = 0; i < 64; ++i) m += x.data[c * 64 + i];
        m /= 64.0;
        for (std::size_t i = 0; i < 64; ++i) {
            CHECK(y.data[c * 64 + i] == doctest::Approx(m).epsilon(1e-12));
        }
    }
}

TEST_CASE("dft_magnitude of a constant patch is concentrated at DC") {
    Grid patch(1, 8, 8, 0.5);
    const Grid mag = dft_magnitude(patch);
    CHECK(mag.at(0, 0, 0) == doctest::Approx(64.0 * 0.5).epsilon(1e-10));
    for (std::size_t u = 0; u < 8; ++u) {
        for (std::size_t v = 0; v < 8; ++v) {
            if (u == 0 && v == 0) continue;
            CHECK(mag.at(0, u, v) == doctest::Approx(0.0).epsilon(1e-9));
        }
    }
}

TEST_CASE("dft_magnitude of a pure cosine has exactly two bins") {
    const std::size_t n = 16;
    Grid patch(1, n, n);
    const std::size_t f = 3;
    for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
            patch.at(0, y, x) =
                std::cos(2.0 * 3.14159265358979323846 * static_cast<double>(f * x) / n);
        }
    }
    const Grid mag = dft_magnitude(patch);
    std::size_t nonzero = 0;
    for (std::size_t u = 0; u < n; ++u) {
        for (std::size_t v = 0; v < n; ++v) {
            if (mag.at(0, u, v) > 1e-8) {
                ++nonzero;
                CHECK(u == 0);
                CHECK((v == f || v == n - f));
            }
        }
    }
    CHECK(nonzero == 2);
}

TEST_CASE("dft_magnitude matches the naive double-sum oracle") {
    RngStream rng(13);
    const Grid patch = random_grid(rng, 1, 8, 8);
    const Grid fast = dft_magnitude(patch);
    const Grid slow = naive_dft_magnitude(patch);
    CHECK(max_abs_diff(fast, slow) < 1e-8);
}

TEST_CASE("dft_magnitude satisfies Parseval") {
    RngStream rng(17);
    for (std::size_t side : {8u, 16u, 32u}) {
        const Grid patch = random_grid(rng, 1, side, side);
        const Grid mag = dft_magnitude(patch);
        double freq_energy = 0.0;
        for (double v : mag.data) freq_energy += v * v;
        double pix_energy = 0.0;
        for (double v : patch.data) pix_energy += v * v;
        const double expected = static_cast<double>(side * side) * pix_energy;
        CHECK(std::abs(freq_energy - expected) / expected < 1e-6);
    }
}

TEST_CASE("dft_magnitude rejects non-square and unsupported sides") {
    CHECK_THROWS_AS(dft_magnitude(Grid(1, 8, 4, 0.0)), std::invalid_argument);
    CHECK_THROWS_AS(dft_magnitude(Grid(1, 7, 7, 0.0)), std::invalid_argument);
    CHECK_THROWS_AS(dft_magnitude(Grid(2, 8, 8, 0.0)), std::invalid_argument);
}

TEST_CASE("sym_eig identity") {
    const auto e = sym_eig(SymMatrix::identity(3));
    for (double v : e.values) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("sym_eig diag(4,1)") {
    SymMatrix m(2);
    m.at(0, 0) = 4.0;
    m.at(1, 1) = 1.0;
    const auto e = sym_eig(m);
    CHECK(e.values[0] == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(e.values[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(e.vectors(0, 0)) == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(std::abs(e.vectors(1, 1)) == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("sym_eig reconstructs a random symmetric matrix") {
    RngStream rng(19);
    SymMatrix m(8);
    for (std::size_t r = 0; r < 8; ++r)
        for (std::size_t c = r; c < 8; ++c) m.at(r, c) = 2.0 * rng.uniform01() - 1.0;
    const auto e = sym_eig(m);

    // residual oracle: rebuild V diag(lambda) V^T and compare in Frobenius norm
    Matrix rebuilt(8, 8);
    for (std::size_t i = 0; i < 8; ++i)
        for (std::size_t j = 0; j < 8; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < 8; ++k)
                s += e.vectors(i, k) * e.values[k] * e.vectors(j, k);
            rebuilt(i, j) = s;
        }
    const Matrix dense = m.dense();
    CHECK(frobenius_norm(rebuilt - dense) / frobenius_norm(dense) < 1e-8);

    // orthonormality
    const Matrix vtv = matmul(transpose(e.vectors), e.vectors);
    CHECK(frobenius_norm(vtv - Matrix::identity(8)) < 1e-10);

    // descending order
    for (std::size_t i = 0; i + 1 < 8; ++i) CHECK(e.values[i] >= e.values[i + 1]);
}

TEST_CASE("sym_eig handles the dim-64 contract boundary") {
    RngStream rng(23);
    SymMatrix m(64);
    for (std::size_t r = 0; r < 64; ++r)
        for (std::size_t c = r; c < 64; ++c) m.at(r, c) = 2.0 * rng.uniform01() - 1.0;
    const auto e = sym_eig(m);
    const Matrix dense = m.dense();
    Matrix rebuilt(64, 64);
    for (std::size_t i = 0; i < 64; ++i)
        for (std::size_t j = 0; j < 64; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < 64; ++k)
                s += e.vectors(i, k) * e.values[k] * e.vectors(j, k);
            rebuilt(i, j) = s;
        }
    CHECK(frobenius_norm(rebuilt - dense) / frobenius_norm(dense) < 1e-8);
    CHECK(frobenius_norm(matmul(transpose(e.vectors), e.vectors) - Matrix::identity(64)) <
          1e-10);
}

TEST_CASE("standard_normal is deterministic per state") {
    RngStream a(42, 5);
    RngStream b(42, 5);
    const Grid ga = standard_normal(a, 1, 4, 4);
    const Grid gb = standard_normal(b, 1, 4, 4);
    CHECK(max_abs_diff(ga, gb) == 0.0);
    CHECK(a.counter == b.counter);
}

TEST_CASE("standard_normal moments over 1e6 draws") {
    RngStream rng(2024, 0);
    const std::size_t n = 1000000;
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double z = rng.normal();
        sum += z;
        sq += z * z;
    }
    const double m = sum / n;
    const double var = sq / n - m * m;
    // standard errors: sd(mean) = 1/sqrt(n), sd(var) ~= sqrt(2/n)
    CHECK(std::abs(m) < 5.0 / std::sqrt(static_cast<double>(n)));
    CHECK(std::abs(var - 1.0) < 5.0 * std::sqrt(2.0 / static_cast<double>(n)));
}

TEST_CASE("distinct stream ids decorrelate") {
    RngStream a(99, 1);
    RngStream b(99, 2);
    const std::size_t n = 100000;
    double sa = 0.0, sb = 0.0, sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = a.normal();
        const double y = b.normal();
        sa += x;
        sb += y;
        sab += x * y;
        saa += x * x;
        sbb += y * y;
    }
    const double ma = sa / n, mb = sb / n;
    const double cov = sab / n - ma * mb;
    const double corr = cov / std::sqrt((saa / n - ma * ma) * (sbb / n - mb * mb));
    CHECK(std::abs(corr) < 0.01);
}

TEST_CASE("tensor dump round-trips through the binary format") {
    RngStream rng(5);
    Grid g = random_grid(rng, 3, 4, 5);
    std::stringstream ss;
    write_tensor(ss, {3, 4, 5}, g.data);
    const TensorBlob blob = read_tensor(ss);
    REQUIRE(blob.dims.size() == 3);
    CHECK(blob.dims[0] == 3);
    CHECK(blob.dims[1] == 4);
    CHECK(blob.dims[2] == 5);
    for (std::size_t i = 0; i < g.data.size(); ++i) {
        // payload is f32, so only float precision survives
        CHECK(blob.values[i] == doctest::Approx(g.data[i]).epsilon(1e-6));
    }
}

TEST_CASE("tensor dump header layout is bit-exact") {
    std::stringstream ss;
    write_tensor(ss, {2}, {1.0, -1.0});
    const std::string bytes = ss.str();
    REQUIRE(bytes.size() == 4 + 2 + 1 + 4 + 8);
    CHECK(bytes.substr(0, 4) == "GLAB");
    CHECK(static_cast<unsigned char>(bytes[4]) == 1);  // version lo
    CHECK(static_cast<unsigned char>(bytes[5]) == 0);  // version hi
    CHECK(static_cast<unsigned char>(bytes[6]) == 1);  // rank
    CHECK(static_cast<unsigned char>(bytes[7]) == 2);  // dim lo byte
}
