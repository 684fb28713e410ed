#include "glab/schedule.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "glab/io_util.hpp"

namespace glab {

void NoiseSchedule::check_t(std::size_t t, const char* where) const {
    if (t < 1 || t > T) {
        throw std::out_of_range(std::string(where) + ": timestep " + std::to_string(t) +
                                " outside [1, " + std::to_string(T) + "]");
    }
}

namespace {

NoiseSchedule derive_from_beta(std::vector<double> beta) {
    NoiseSchedule s;
    s.T = beta.size();
    s.beta = std::move(beta);
    s.alpha.resize(s.T);
    s.alpha_cumprod.resize(s.T);
    s.sigma.resize(s.T);
    s.posterior_beta_tilde.resize(s.T);
    double acp = 1.0;
    for (std::size_t i = 0; i < s.T; ++i) {
        s.alpha[i] = 1.0 - s.beta[i];
        const double prev = acp;
        acp *= s.alpha[i];
        s.alpha_cumprod[i] = acp;
        s.sigma[i] = std::sqrt(s.beta[i]);
        s.posterior_beta_tilde[i] = (1.0 - prev) / (1.0 - acp) * s.beta[i];
    }
    return s;
}

}  // namespace

NoiseSchedule linear_schedule(std::size_t T, double beta_start, double beta_end) {
    if (T < 1) throw std::invalid_argument("linear_schedule: T must be >= 1");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
        throw std::invalid_argument("linear_schedule: need 0 < beta_start <= beta_end < 1");
    }
    std::vector<double> beta(T);
    if (T == 1) {
        beta[0] = beta_start;
    } else {
        for (std::size_t i = 0; i < T; ++i) {
            beta[i] = beta_start + (beta_end - beta_start) * static_cast<double>(i) /
                                       static_cast<double>(T - 1);
        }
    }
    return derive_from_beta(std::move(beta));
}

NoiseSchedule cosine_schedule(std::size_t T) {
    if (T < 1) throw std::invalid_argument("cosine_schedule: T must be >= 1");
    const double offset = 0.008;
    const double half_pi = 1.57079632679489661923;
    auto profile = [&](double t) {
        const double c = std::cos((t / static_cast<double>(T) + offset) / (1.0 + offset) * half_pi);
        return c * c;
    };
    const double f0 = profile(0.0);
    std::vector<double> beta(T);
    double prev = 1.0;
    for (std::size_t i = 1; i <= T; ++i) {
        const double target = profile(static_cast<double>(i)) / f0;
        beta[i - 1] = std::min(1.0 - target / prev, 0.999);
        prev = target;
    }
    return derive_from_beta(std::move(beta));
}

void save_schedule_csv(const std::string& path, const NoiseSchedule& s) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("save_schedule_csv: cannot open " + path);
    os << "t,beta,alpha_bar,sigma\n";
    for (std::size_t t = 1; t <= s.T; ++t) {
        os << t << ',' << fmt_double(s.beta_at(t)) << ',' << fmt_double(s.alpha_cumprod_at(t))
           << ',' << fmt_double(s.sigma_at(t)) << '\n';
    }
}

}  // namespace glab
