#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "glab/diffusion.hpp"
#include "glab/numerics.hpp"

using namespace glab;

namespace {

Grid random_grid(RngStream& rng, std::size_t c, std::size_t h, std::size_t w) {
    Grid g(c, h, w);
    for (double& v : g.data) v = 2.0 * rng.uniform01() - 1.0;
    return g;
}

}  // namespace

TEST_CASE("linear_schedule T=1 single step") {
    const NoiseSchedule s = linear_schedule(1, 0.5, 0.5);
    CHECK(s.alpha_cumprod_at(1) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("linear_schedule T=2 hand-multiplied cumulative product") {
    const NoiseSchedule s = linear_schedule(2, 0.1, 0.2);
    CHECK(s.beta_at(1) == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(s.beta_at(2) == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(s.alpha_cumprod_at(1) == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(s.alpha_cumprod_at(2) == doctest::Approx(0.72).epsilon(1e-15));
}

TEST_CASE("linear_schedule matches a brute-force product oracle") {
    const NoiseSchedule s = linear_schedule(100, 1e-4, 0.02);
    double acp = 1.0;
    for (std::size_t i = 0; i < 100; ++i) {
        const double beta = 1e-4 + (0.02 - 1e-4) * static_cast<double>(i) / 99.0;
        acp *= 1.0 - beta;
    }
    CHECK(std::abs(s.alpha_cumprod_at(100) - acp) < 1e-12);

    // invariant: alpha_bar[t] = alpha_bar[t-1] * alpha[t] exactly as stored
    for (std::size_t t = 1; t <= 100; ++t) {
        CHECK(s.alpha_cumprod_at(t) == s.alpha_cumprod_at(t - 1) * s.alpha_at(t));
        CHECK(s.alpha_cumprod_at(t) > 0.0);
        CHECK(s.alpha_cumprod_at(t) < 1.0);
        if (t > 1) CHECK(s.alpha_cumprod_at(t) < s.alpha_cumprod_at(t - 1));
    }
}

TEST_CASE("linear_schedule rejects bad bounds") {
    CHECK_THROWS_AS(linear_schedule(0, 0.1, 0.2), std::invalid_argument);
    CHECK_THROWS_AS(linear_schedule(10, 0.0, 0.2), std::invalid_argument);
    CHECK_THROWS_AS(linear_schedule(10, 0.3, 0.2), std::invalid_argument);
    CHECK_THROWS_AS(linear_schedule(10, 0.1, 1.0), std::invalid_argument);
}

TEST_CASE("cosine_schedule is strictly decreasing") {
    const NoiseSchedule s = cosine_schedule(50);
    for (std::size_t t = 2; t <= 50; ++t) {
        CHECK(s.alpha_cumprod_at(t) < s.alpha_cumprod_at(t - 1));
    }
    for (std::size_t T : {2u, 3u, 5u, 20u}) {
        const NoiseSchedule sch = cosine_schedule(T);
        CHECK(sch.alpha_cumprod_at(T) < sch.alpha_cumprod_at(1));
    }
}

TEST_CASE("cosine_schedule T=10 matches a direct transcription") {
    const NoiseSchedule s = cosine_schedule(10);
    const double offset = 0.008;
    const double half_pi = 1.57079632679489661923;
    auto f = [&](double t) {
        const double c = std::cos((t / 10.0 + offset) / (1.0 + offset) * half_pi);
        return c * c;
    };
    double acp_expected = 1.0;
    for (std::size_t t = 1; t <= 10; ++t) {
        const double beta = std::min(1.0 - f(static_cast<double>(t)) / f(static_cast<double>(t) - 1.0), 0.999);
        acp_expected *= 1.0 - beta;
        CHECK(s.beta_at(t) == doctest::Approx(beta).epsilon(1e-12));
        CHECK(s.alpha_cumprod_at(t) == doctest::Approx(acp_expected).epsilon(1e-12));
    }
}

TEST_CASE("forward_diffuse near-identity for tiny beta") {
    const NoiseSchedule s = linear_schedule(1, 1e-8, 1e-8);
    RngStream rng(1);
    const Grid x0 = random_grid(rng, 1, 4, 4);
    const Grid eps = standard_normal(rng, 1, 4, 4);
    const Grid xt = forward_diffuse(x0, 1, eps, s);
    CHECK(max_abs_diff(xt, x0) < 1e-3);
}

TEST_CASE("forward_diffuse with zero x0") {
    const NoiseSchedule s = linear_schedule(10, 0.01, 0.1);
    RngStream rng(2);
    const Grid x0(1, 3, 3, 0.0);
    const Grid eps = standard_normal(rng, 1, 3, 3);
    const Grid xt = forward_diffuse(x0, 5, eps, s);
    const double b = std::sqrt(1.0 - s.alpha_cumprod_at(5));
    CHECK(max_abs_diff(xt, b * eps) < 1e-15);
}

TEST_CASE("forward_diffuse matches the closed form recomputed independently") {
    const NoiseSchedule s = linear_schedule(100, 1e-4, 0.02);
    RngStream rng(3);
    const Grid x0 = random_grid(rng, 1, 4, 4);
    const Grid eps = standard_normal(rng, 1, 4, 4);
    const std::size_t t = 7;
    const Grid xt = forward_diffuse(x0, t, eps, s);
    double acp = 1.0;
    for (std::size_t i = 1; i <= t; ++i) acp *= 1.0 - (1e-4 + (0.02 - 1e-4) * (i - 1.0) / 99.0);
    for (std::size_t i = 0; i < x0.size(); ++i) {
        const double expected = std::sqrt(acp) * x0[i] + std::sqrt(1.0 - acp) * eps[i];
        CHECK(xt[i] == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("forward_diffuse rejects out-of-range t") {
    const NoiseSchedule s = linear_schedule(10, 0.01, 0.1);
    const Grid x0(1, 2, 2, 0.0);
    CHECK_THROWS_AS(forward_diffuse(x0, 0, x0, s), std::out_of_range);
    CHECK_THROWS_AS(forward_diffuse(x0, 11, x0, s), std::out_of_range);
}

TEST_CASE("predict_x0 inverts forward_diffuse") {
    const NoiseSchedule s = linear_schedule(100, 1e-4, 0.02);
    RngStream rng(4);
    for (std::size_t t : {1u, 13u, 50u, 100u}) {
        const Grid x0 = random_grid(rng, 1, 4, 4);
        const Grid eps = standard_normal(rng, 1, 4, 4);
        const Grid xt = forward_diffuse(x0, t, eps, s);
        const Grid rec = predict_x0(xt, eps, t, s);
        CHECK(max_abs_diff(rec, x0) < 1e-6);
    }
}

TEST_CASE("predict_x0 with zero eps rescales x_t") {
    const NoiseSchedule s = linear_schedule(20, 0.01, 0.05);
    RngStream rng(5);
    const Grid xt = random_grid(rng, 1, 3, 3);
    const Grid eps(1, 3, 3, 0.0);
    const Grid x0 = predict_x0(xt, eps, 9, s);
    const double inv = 1.0 / std::sqrt(s.alpha_cumprod_at(9));
    CHECK(max_abs_diff(x0, inv * xt) < 1e-14);
}

TEST_CASE("reverse_step mean with zero eps_hat") {
    const NoiseSchedule s = linear_schedule(10, 0.01, 0.1);
    RngStream rng(6);
    const Grid xt = random_grid(rng, 1, 3, 3);
    const Grid eps(1, 3, 3, 0.0);
    // t=1: deterministic, mean = x_t / sqrt(alpha_1)
    RngStream step_rng(0);
    const Grid out = reverse_step(xt, eps, 1, s, step_rng, VarianceMode::FixedBeta);
    const double inv = 1.0 / std::sqrt(s.alpha_at(1));
    CHECK(max_abs_diff(out, inv * xt) < 1e-14);
    CHECK(step_rng.counter == 0);  // no noise consumed at the terminal step
}

TEST_CASE("reverse_step matches an independent formula evaluation with pinned z") {
    const NoiseSchedule s = linear_schedule(50, 1e-3, 0.04);
    RngStream rng(7);
    const Grid xt = random_grid(rng, 1, 4, 4);
    const Grid eps_hat = standard_normal(rng, 1, 4, 4);
    const std::size_t t = 20;

    for (VarianceMode mode : {VarianceMode::FixedBeta, VarianceMode::PosteriorBetaTilde}) {
        RngStream z_rng(123, 9);
        const Grid out = reverse_step(xt, eps_hat, t, s, z_rng, mode);

        RngStream z_replay(123, 9);
        const double beta = s.beta_at(t);
        const double acp = s.alpha_cumprod_at(t);
        const double acp_prev = s.alpha_cumprod_at(t - 1);
        const double var = (mode == VarianceMode::FixedBeta)
                               ? beta
                               : (1.0 - acp_prev) / (1.0 - acp) * beta;
        for (std::size_t i = 0; i < xt.size(); ++i) {
            const double mean_i =
                (xt[i] - beta / std::sqrt(1.0 - acp) * eps_hat[i]) / std::sqrt(1.0 - beta);
            const double expected = mean_i + std::sqrt(var) * z_replay.normal();
            CHECK(out[i] == doctest::Approx(expected).epsilon(1e-12));
        }
    }
}

TEST_CASE("posterior_mean coefficient identity oracle") {
    const NoiseSchedule s = linear_schedule(60, 1e-3, 0.03);
    // sqrt(acp_prev)*beta + sqrt(alpha)*(1-acp_prev) vs (1-acp): exact at t=1
    // where acp_prev == 1, and near-exact while acp stays close to 1.
    {
        const double lhs = std::sqrt(s.alpha_cumprod_at(0)) * s.beta_at(1) +
                           std::sqrt(s.alpha_at(1)) * (1.0 - s.alpha_cumprod_at(0));
        const double rhs = 1.0 - s.alpha_cumprod_at(1);
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-14));
        Grid c(1, 2, 2, 0.7);
        const Grid out = posterior_mean(c, c, 1, s);
        CHECK(out[0] == doctest::Approx(0.7).epsilon(1e-12));
    }
    for (std::size_t t = 2; t <= 10; ++t) {
        const double acp_prev = s.alpha_cumprod_at(t - 1);
        const double lhs = std::sqrt(acp_prev) * s.beta_at(t) +
                           std::sqrt(s.alpha_at(t)) * (1.0 - acp_prev);
        const double rhs = 1.0 - s.alpha_cumprod_at(t);
        CHECK(std::abs(lhs - rhs) / rhs < 1e-2);
    }
}

TEST_CASE("posterior_mean of zeros is zero and t=0 is rejected") {
    const NoiseSchedule s = linear_schedule(10, 0.01, 0.1);
    const Grid z(1, 2, 2, 0.0);
    const Grid out = posterior_mean(z, z, 5, s);
    CHECK(l2_norm(out) == 0.0);
    CHECK_THROWS_AS(posterior_mean(z, z, 0, s), std::out_of_range);
}

TEST_CASE("posterior_mean random instance vs direct formula") {
    const NoiseSchedule s = linear_schedule(40, 1e-3, 0.05);
    RngStream rng(8);
    const Grid x0 = random_grid(rng, 1, 3, 3);
    const Grid xt = random_grid(rng, 1, 3, 3);
    const std::size_t t = 17;
    const Grid out = posterior_mean(x0, xt, t, s);
    const double acp = s.alpha_cumprod_at(t);
    const double acp_prev = s.alpha_cumprod_at(t - 1);
    const double beta = s.beta_at(t);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double expected = std::sqrt(acp_prev) * beta / (1.0 - acp) * x0[i] +
                                std::sqrt(1.0 - beta) * (1.0 - acp_prev) / (1.0 - acp) * xt[i];
        CHECK(out[i] == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("simple_loss is zero for a perfect model and mean-square for a zero model") {
    const NoiseSchedule s = linear_schedule(30, 1e-3, 0.02);
    RngStream rng(9);
    std::vector<TrainExample> batch;
    for (int i = 0; i < 4; ++i) {
        TrainExample ex;
        ex.x0 = random_grid(rng, 1, 4, 4);
        ex.t = 1 + rng.below(30);
        ex.eps = standard_normal(rng, 1, 4, 4);
        batch.push_back(ex);
    }

    // model that returns the injected eps exactly: loss 0
    std::size_t idx = 0;
    EpsFn perfect = [&](const Grid&, std::size_t, std::optional<int>) {
        return batch[idx++].eps;
    };
    CHECK(simple_loss(perfect, batch, s) == doctest::Approx(0.0).epsilon(1e-15));

    // zero model: loss = mean ||eps||^2 over batch and elements
    EpsFn zero = [&](const Grid& x, std::size_t, std::optional<int>) {
        return Grid(x.channels, x.height, x.width, 0.0);
    };
    double expected = 0.0;
    std::size_t count = 0;
    for (const auto& ex : batch) {
        for (double v : ex.eps.data) expected += v * v;
        count += ex.eps.size();
    }
    expected /= static_cast<double>(count);
    CHECK(simple_loss(zero, batch, s) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("simple_loss pinned single example matches hand computation") {
    const NoiseSchedule s = linear_schedule(2, 0.1, 0.2);
    TrainExample ex;
    ex.x0 = Grid(2, 1, 1);
    ex.x0.data = {1.0, -1.0};
    ex.t = 2;
    ex.eps = Grid(2, 1, 1);
    ex.eps.data = {0.5, 0.25};
    EpsFn half = [](const Grid& x, std::size_t, std::optional<int>) { return 0.5 * x; };
    // x_t = sqrt(0.72)*x0 + sqrt(0.28)*eps, pred = x_t/2, loss = mean((eps - pred)^2)
    const double a = std::sqrt(0.72), b = std::sqrt(0.28);
    const double p0 = 0.5 * (a * 1.0 + b * 0.5);
    const double p1 = 0.5 * (a * -1.0 + b * 0.25);
    const double expected = ((0.5 - p0) * (0.5 - p0) + (0.25 - p1) * (0.25 - p1)) / 2.0;
    CHECK(simple_loss(half, {ex}, s) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("simple_loss rejects an empty batch") {
    const NoiseSchedule s = linear_schedule(2, 0.1, 0.2);
    EpsFn zero = [](const Grid& x, std::size_t, std::optional<int>) { return x; };
    CHECK_THROWS_AS(simple_loss(zero, {}, s), std::invalid_argument);
}

TEST_CASE("Markov single-step composition matches the closed-form marginal") {
    // q(x_t | x_{t-1}) = N(sqrt(1-beta_t) x_{t-1}, beta_t I) composed stepwise
    // must land on the closed-form marginal N(sqrt(acp_t) x0, (1-acp_t) I).
    const NoiseSchedule s = linear_schedule(10, 0.02, 0.2);
    RngStream rng(10);
    const double x0 = 0.8;
    const std::size_t trials = 200000;
    double sum = 0.0, sq = 0.0;
    for (std::size_t k = 0; k < trials; ++k) {
        double x = x0;
        for (std::size_t t = 1; t <= 10; ++t) {
            x = std::sqrt(1.0 - s.beta_at(t)) * x + std::sqrt(s.beta_at(t)) * rng.normal();
        }
        sum += x;
        sq += x * x;
    }
    const double m = sum / trials;
    const double var = sq / trials - m * m;
    const double expected_mean = std::sqrt(s.alpha_cumprod_at(10)) * x0;
    const double expected_var = 1.0 - s.alpha_cumprod_at(10);
    const double se_mean = std::sqrt(expected_var / trials);
    const double se_var = expected_var * std::sqrt(2.0 / trials);
    CHECK(std::abs(m - expected_mean) < 5.0 * se_mean);
    CHECK(std::abs(var - expected_var) < 5.0 * se_var);
}
