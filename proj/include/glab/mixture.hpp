#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "glab/grid.hpp"
#include "glab/rng.hpp"
#include "glab/schedule.hpp"
#include "glab/sym.hpp"

namespace glab {

struct MixtureComponent {
    double weight = 1.0;
    std::vector<double> mean;
    SymMatrix covariance;
    std::optional<int> label;
};

// Weighted Gaussian mixture; the closed-form stand-in for a data
// distribution whose noised score is known exactly.
struct MixtureSpec {
    std::vector<MixtureComponent> components;

    std::size_t dim() const {
        return components.empty() ? 0 : components[0].mean.size();
    }
    void validate() const;  // weights sum to 1, covariances positive definite
    std::vector<int> labels() const;

    // Convenient two-component labeled default used across tests and the CLI.
    static MixtureSpec two_gaussians_2d();
};

// Exact eps-parameterized score of the noised mixture at timestep t:
// eps*(x) = -sqrt(1-acp_t) * grad log p_t(x). With a label, the mixture is
// restricted to that class first.
Grid oracle_epsilon(const Grid& x_t, std::size_t t, const NoiseSchedule& sched,
                    const MixtureSpec& mix, std::optional<int> label = std::nullopt);

struct ClassPosterior {
    std::vector<int> classes;
    std::vector<double> probabilities;          // aligned with classes
    std::vector<Grid> grad_log_posterior;       // d/dx log p(c|x) per class
};

// Exact posterior responsibilities p(c | x_t) under the noised mixture and
// the exact gradient of their logs. Every component must carry a label.
ClassPosterior oracle_class_posterior(const Grid& x_t, std::size_t t,
                                      const NoiseSchedule& sched, const MixtureSpec& mix);

// Fresh draws from the (un-noised) mixture, one vector Grid per sample.
std::vector<Grid> sample_mixture(const MixtureSpec& mix, std::size_t n, RngStream& rng);
std::vector<std::pair<Grid, int>> sample_labeled_mixture(const MixtureSpec& mix, std::size_t n,
                                                         RngStream& rng);

// log p_t(x) of the noised (optionally class-restricted) mixture; exposed so
// tests can finite-difference the score independently.
double noised_log_density(const Grid& x_t, std::size_t t, const NoiseSchedule& sched,
                          const MixtureSpec& mix, std::optional<int> label = std::nullopt);

}  // namespace glab
