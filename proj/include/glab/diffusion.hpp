#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "glab/grid.hpp"
#include "glab/rng.hpp"
#include "glab/schedule.hpp"

namespace glab {

enum class VarianceMode { FixedBeta, PosteriorBetaTilde };

// x_t = sqrt(acp_t) x0 + sqrt(1 - acp_t) eps
Grid forward_diffuse(const Grid& x0, std::size_t t, const Grid& eps, const NoiseSchedule& sched);

// x0_hat = (x_t - sqrt(1 - acp_t) eps) / sqrt(acp_t)
Grid predict_x0(const Grid& x_t, const Grid& eps, std::size_t t, const NoiseSchedule& sched);

// One ancestral step: mean = (x_t - beta_t/sqrt(1-acp_t) * eps_hat)/sqrt(alpha_t),
// plus sigma*z except at t == 1 (terminal step is deterministic).
Grid reverse_step(const Grid& x_t, const Grid& eps_hat, std::size_t t, const NoiseSchedule& sched,
                  RngStream& rng, VarianceMode mode);

// Forward-posterior mean mu_tilde(x0, x_t).
Grid posterior_mean(const Grid& x0, const Grid& x_t, std::size_t t, const NoiseSchedule& sched);

struct TrainExample {
    Grid x0;
    std::size_t t = 1;
    Grid eps;
    std::optional<int> label;
};

using EpsFn = std::function<Grid(const Grid& x_noised, std::size_t t, std::optional<int> label)>;

// Mean squared eps-prediction error over batch and elements.
double simple_loss(const EpsFn& model, const std::vector<TrainExample>& batch,
                   const NoiseSchedule& sched);

}  // namespace glab
