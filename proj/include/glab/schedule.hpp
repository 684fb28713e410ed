#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

namespace glab {

// Per-timestep schedule quantities, 1-based accessors matching the usual
// diffusion indexing t in [1, T]. alpha_cumprod(0) == 1 by convention.
struct NoiseSchedule {
    std::size_t T = 0;
    std::vector<double> beta;           // size T, beta[i] is step i+1
    std::vector<double> alpha;          // 1 - beta
    std::vector<double> alpha_cumprod;  // running product of alpha
    std::vector<double> sigma;          // sqrt(beta)
    std::vector<double> posterior_beta_tilde;

    double beta_at(std::size_t t) const { return beta.at(t - 1); }
    double alpha_at(std::size_t t) const { return alpha.at(t - 1); }
    double alpha_cumprod_at(std::size_t t) const {
        return t == 0 ? 1.0 : alpha_cumprod.at(t - 1);
    }
    double sigma_at(std::size_t t) const { return sigma.at(t - 1); }
    double posterior_beta_tilde_at(std::size_t t) const {
        return posterior_beta_tilde.at(t - 1);
    }
    // Marginal noise scale of x_t = sqrt(acp)*x0 + sqrt(1-acp)*eps; this is
    // the sigma_t that appears in the guidance formulas, not sqrt(beta_t).
    double marginal_std(std::size_t t) const {
        return std::sqrt(1.0 - alpha_cumprod_at(t));
    }

    void check_t(std::size_t t, const char* where) const;
};

NoiseSchedule linear_schedule(std::size_t T, double beta_start, double beta_end);
NoiseSchedule cosine_schedule(std::size_t T);

// (t, beta, alpha_bar, sigma) audit rows.
void save_schedule_csv(const std::string& path, const NoiseSchedule& s);

}  // namespace glab
