#include "glab/diffusion.hpp"

#include <cmath>
#include <stdexcept>

namespace glab {

Grid forward_diffuse(const Grid& x0, std::size_t t, const Grid& eps, const NoiseSchedule& sched) {
    sched.check_t(t, "forward_diffuse");
    require_same_shape(x0, eps, "forward_diffuse");
    const double acp = sched.alpha_cumprod_at(t);
    const double a = std::sqrt(acp);
    const double b = std::sqrt(1.0 - acp);
    Grid out = x0;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = a * x0.data[i] + b * eps.data[i];
    }
    return out;
}

Grid predict_x0(const Grid& x_t, const Grid& eps, std::size_t t, const NoiseSchedule& sched) {
    sched.check_t(t, "predict_x0");
    require_same_shape(x_t, eps, "predict_x0");
    const double acp = sched.alpha_cumprod_at(t);
    const double inv_a = 1.0 / std::sqrt(acp);
    const double b = std::sqrt(1.0 - acp);
    Grid out = x_t;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = (x_t.data[i] - b * eps.data[i]) * inv_a;
    }
    return out;
}

Grid reverse_step(const Grid& x_t, const Grid& eps_hat, std::size_t t, const NoiseSchedule& sched,
                  RngStream& rng, VarianceMode mode) {
    sched.check_t(t, "reverse_step");
    require_same_shape(x_t, eps_hat, "reverse_step");
    const double beta = sched.beta_at(t);
    const double coef = beta / std::sqrt(1.0 - sched.alpha_cumprod_at(t));
    const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha_at(t));
    Grid out = x_t;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = (x_t.data[i] - coef * eps_hat.data[i]) * inv_sqrt_alpha;
    }
    if (t > 1) {
        const double var = (mode == VarianceMode::FixedBeta)
                               ? beta
                               : sched.posterior_beta_tilde_at(t);
        const double sd = std::sqrt(var);
        for (double& v : out.data) v += sd * rng.normal();
    }
    return out;
}

Grid posterior_mean(const Grid& x0, const Grid& x_t, std::size_t t, const NoiseSchedule& sched) {
    sched.check_t(t, "posterior_mean");
    require_same_shape(x0, x_t, "posterior_mean");
    const double acp = sched.alpha_cumprod_at(t);
    const double acp_prev = sched.alpha_cumprod_at(t - 1);
    const double beta = sched.beta_at(t);
    const double c0 = std::sqrt(acp_prev) * beta / (1.0 - acp);
    const double ct = std::sqrt(sched.alpha_at(t)) * (1.0 - acp_prev) / (1.0 - acp);
    Grid out = x0;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = c0 * x0.data[i] + ct * x_t.data[i];
    }
    return out;
}

double simple_loss(const EpsFn& model, const std::vector<TrainExample>& batch,
                   const NoiseSchedule& sched) {
    if (batch.empty()) throw std::invalid_argument("simple_loss: empty batch");
    double total = 0.0;
    std::size_t count = 0;
    for (const TrainExample& ex : batch) {
        const Grid x_t = forward_diffuse(ex.x0, ex.t, ex.eps, sched);
        const Grid pred = model(x_t, ex.t, ex.label);
        require_same_shape(pred, ex.eps, "simple_loss");
        for (std::size_t i = 0; i < pred.data.size(); ++i) {
            const double d = ex.eps.data[i] - pred.data[i];
            total += d * d;
        }
        count += pred.data.size();
    }
    return total / static_cast<double>(count);
}

}  // namespace glab
