#include "glab/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace glab {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

struct NoisedComponent {
    double log_weight;
    std::vector<double> mean;        // sqrt(acp) * mu
    EigenDecomposition cov_eig;      // of the original covariance
    std::vector<double> noised_eval; // acp * lambda_j + (1 - acp)
    double log_det;
    std::optional<int> label;
};

// Noised mixture component i has mean sqrt(acp) mu_i and covariance
// acp * Sigma_i + (1 - acp) I, which shares eigenvectors with Sigma_i.
std::vector<NoisedComponent> noised_components(std::size_t t, const NoiseSchedule& sched,
                                               const MixtureSpec& mix) {
    sched.check_t(t, "mixture oracle");
    const double acp = sched.alpha_cumprod_at(t);
    const double a = std::sqrt(acp);
    std::vector<NoisedComponent> out;
    out.reserve(mix.components.size());
    for (const MixtureComponent& c : mix.components) {
        NoisedComponent nc;
        nc.log_weight = std::log(c.weight);
        nc.mean.resize(c.mean.size());
        for (std::size_t i = 0; i < c.mean.size(); ++i) nc.mean[i] = a * c.mean[i];
        nc.cov_eig = sym_eig(c.covariance);
        nc.noised_eval.resize(nc.cov_eig.values.size());
        nc.log_det = 0.0;
        for (std::size_t j = 0; j < nc.noised_eval.size(); ++j) {
            const double lam = acp * nc.cov_eig.values[j] + (1.0 - acp);
            if (lam <= 0.0) {
                throw std::invalid_argument("mixture oracle: covariance not positive definite");
            }
            nc.noised_eval[j] = lam;
            nc.log_det += std::log(lam);
        }
        nc.label = c.label;
        out.push_back(std::move(nc));
    }
    return out;
}

// log N(x; mean, cov) and  -cov^{-1} (x - mean) through the eigenbasis.
double log_gaussian(const NoisedComponent& nc, const std::vector<double>& x,
                    std::vector<double>* grad) {
    const std::size_t d = x.size();
    std::vector<double> delta(d);
    for (std::size_t i = 0; i < d; ++i) delta[i] = x[i] - nc.mean[i];
    // project onto eigenvectors
    std::vector<double> proj(d, 0.0);
    for (std::size_t k = 0; k < d; ++k) {
        double s = 0.0;
        for (std::size_t i = 0; i < d; ++i) s += nc.cov_eig.vectors(i, k) * delta[i];
        proj[k] = s;
    }
    double quad = 0.0;
    for (std::size_t k = 0; k < d; ++k) quad += proj[k] * proj[k] / nc.noised_eval[k];
    if (grad) {
        grad->assign(d, 0.0);
        for (std::size_t i = 0; i < d; ++i) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                s += nc.cov_eig.vectors(i, k) * proj[k] / nc.noised_eval[k];
            }
            (*grad)[i] = -s;
        }
    }
    return -0.5 * (static_cast<double>(d) * kLog2Pi + nc.log_det + quad);
}

double log_sum_exp(const std::vector<double>& v) {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : v) m = std::max(m, x);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

// log density and score of the noised mixture restricted to `label` (or the
// full mixture when label is empty). Restricted weights are renormalized.
struct ScoreResult {
    double log_density;
    std::vector<double> score;
};

ScoreResult mixture_score(const std::vector<NoisedComponent>& comps,
                          const std::vector<double>& x, std::optional<int> label) {
    std::vector<double> log_terms;
    std::vector<std::vector<double>> grads;
    double log_weight_total = -std::numeric_limits<double>::infinity();
    {
        std::vector<double> sel;
        for (const NoisedComponent& nc : comps) {
            if (label && (!nc.label || *nc.label != *label)) continue;
            sel.push_back(nc.log_weight);
        }
        if (sel.empty()) throw std::invalid_argument("mixture oracle: no component with label");
        log_weight_total = log_sum_exp(sel);
    }
    for (const NoisedComponent& nc : comps) {
        if (label && (!nc.label || *nc.label != *label)) continue;
        std::vector<double> g;
        const double lg = log_gaussian(nc, x, &g);
        log_terms.push_back(nc.log_weight - log_weight_total + lg);
        grads.push_back(std::move(g));
    }
    const double lse = log_sum_exp(log_terms);
    ScoreResult r;
    r.log_density = lse;
    r.score.assign(x.size(), 0.0);
    for (std::size_t i = 0; i < log_terms.size(); ++i) {
        const double resp = std::exp(log_terms[i] - lse);
        for (std::size_t d = 0; d < x.size(); ++d) r.score[d] += resp * grads[i][d];
    }
    return r;
}

std::vector<double> as_vector(const Grid& g) { return g.data; }

}  // namespace

void MixtureSpec::validate() const {
    if (components.empty()) throw std::invalid_argument("MixtureSpec: no components");
    const std::size_t d = dim();
    double total = 0.0;
    for (const MixtureComponent& c : components) {
        if (c.mean.size() != d) throw std::invalid_argument("MixtureSpec: mean dim mismatch");
        if (c.covariance.dim != d)
            throw std::invalid_argument("MixtureSpec: covariance dim mismatch");
        if (!(c.weight > 0.0)) throw std::invalid_argument("MixtureSpec: weight must be > 0");
        const auto e = sym_eig(c.covariance);
        for (double lam : e.values) {
            if (lam <= 0.0)
                throw std::invalid_argument("MixtureSpec: covariance not positive definite");
        }
        total += c.weight;
    }
    if (std::abs(total - 1.0) > 1e-9)
        throw std::invalid_argument("MixtureSpec: weights must sum to 1");
}

std::vector<int> MixtureSpec::labels() const {
    std::vector<int> out;
    for (const MixtureComponent& c : components) {
        if (!c.label) continue;
        if (std::find(out.begin(), out.end(), *c.label) == out.end()) out.push_back(*c.label);
    }
    std::sort(out.begin(), out.end());
    return out;
}

MixtureSpec MixtureSpec::two_gaussians_2d() {
    MixtureSpec mix;
    MixtureComponent a;
    a.weight = 0.5;
    a.mean = {-1.5, 0.0};
    a.covariance = SymMatrix(2);
    a.covariance.at(0, 0) = 0.30;
    a.covariance.at(0, 1) = 0.10;
    a.covariance.at(1, 1) = 0.25;
    a.label = 0;
    MixtureComponent b;
    b.weight = 0.5;
    b.mean = {1.5, 0.0};
    b.covariance = SymMatrix(2);
    b.covariance.at(0, 0) = 0.20;
    b.covariance.at(0, 1) = -0.05;
    b.covariance.at(1, 1) = 0.35;
    b.label = 1;
    mix.components = {a, b};
    return mix;
}

Grid oracle_epsilon(const Grid& x_t, std::size_t t, const NoiseSchedule& sched,
                    const MixtureSpec& mix, std::optional<int> label) {
    if (!x_t.is_vector() || x_t.channels != mix.dim()) {
        throw std::invalid_argument("oracle_epsilon: x_t must be a vector of the mixture dim");
    }
    const auto comps = noised_components(t, sched, mix);
    const ScoreResult r = mixture_score(comps, as_vector(x_t), label);
    const double scale = -sched.marginal_std(t);
    Grid eps = x_t;
    for (std::size_t i = 0; i < eps.data.size(); ++i) eps.data[i] = scale * r.score[i];
    return eps;
}

double noised_log_density(const Grid& x_t, std::size_t t, const NoiseSchedule& sched,
                          const MixtureSpec& mix, std::optional<int> label) {
    const auto comps = noised_components(t, sched, mix);
    return mixture_score(comps, as_vector(x_t), label).log_density;
}

ClassPosterior oracle_class_posterior(const Grid& x_t, std::size_t t,
                                      const NoiseSchedule& sched, const MixtureSpec& mix) {
    for (const MixtureComponent& c : mix.components) {
        if (!c.label) {
            throw std::invalid_argument("oracle_class_posterior: unlabeled component");
        }
    }
    const auto comps = noised_components(t, sched, mix);
    const std::vector<double> x = as_vector(x_t);
    const std::vector<int> classes = mix.labels();

    // p(c|x) = sum_{i in c} w_i N_i(x) / sum_i w_i N_i(x); work in log space
    std::vector<double> class_log_joint(classes.size(),
                                        -std::numeric_limits<double>::infinity());
    std::vector<std::vector<double>> class_score(classes.size());
    const ScoreResult full = mixture_score(comps, x, std::nullopt);

    ClassPosterior out;
    out.classes = classes;
    out.probabilities.resize(classes.size());
    out.grad_log_posterior.reserve(classes.size());

    std::vector<double> log_joints(classes.size());
    for (std::size_t ci = 0; ci < classes.size(); ++ci) {
        // class-restricted score and density (restricted weights renormalized;
        // the class prior cancels in the posterior gradient)
        const ScoreResult restricted = mixture_score(comps, x, classes[ci]);
        double class_prior;
        {
            std::vector<double> sel;
            for (const NoisedComponent& nc : comps) {
                if (nc.label && *nc.label == classes[ci]) sel.push_back(nc.log_weight);
            }
            class_prior = log_sum_exp(sel);
        }
        log_joints[ci] = class_prior + restricted.log_density;
        class_score[ci] = restricted.score;
    }
    const double log_norm = log_sum_exp(log_joints);
    for (std::size_t ci = 0; ci < classes.size(); ++ci) {
        out.probabilities[ci] = std::exp(log_joints[ci] - log_norm);
        Grid g = Grid::make_vector(x.size());
        // grad log p(c|x) = grad log p(x|c) - grad log p(x)
        for (std::size_t d = 0; d < x.size(); ++d) {
            g.data[d] = class_score[ci][d] - full.score[d];
        }
        out.grad_log_posterior.push_back(std::move(g));
    }
    return out;
}

std::vector<Grid> sample_mixture(const MixtureSpec& mix, std::size_t n, RngStream& rng) {
    std::vector<Grid> out;
    out.reserve(n);
    for (auto& [g, label] : sample_labeled_mixture(mix, n, rng)) {
        (void)label;
        out.push_back(std::move(g));
    }
    return out;
}

std::vector<std::pair<Grid, int>> sample_labeled_mixture(const MixtureSpec& mix, std::size_t n,
                                                         RngStream& rng) {
    const std::size_t d = mix.dim();
    // Cholesky-style factor via the eigendecomposition: S = V sqrt(L) V^T
    std::vector<Matrix> roots;
    for (const MixtureComponent& c : mix.components) {
        roots.push_back(spectral_map(sym_eig(c.covariance),
                                     [](double lam) { return std::sqrt(std::max(lam, 0.0)); }));
    }
    std::vector<std::pair<Grid, int>> out;
    out.reserve(n);
    for (std::size_t s = 0; s < n; ++s) {
        const double u = rng.uniform01();
        double acc = 0.0;
        std::size_t pick = mix.components.size() - 1;
        for (std::size_t i = 0; i < mix.components.size(); ++i) {
            acc += mix.components[i].weight;
            if (u < acc) {
                pick = i;
                break;
            }
        }
        std::vector<double> z(d);
        for (double& v : z) v = rng.normal();
        Grid g = Grid::make_vector(d);
        for (std::size_t i = 0; i < d; ++i) {
            double val = mix.components[pick].mean[i];
            for (std::size_t j = 0; j < d; ++j) val += roots[pick](i, j) * z[j];
            g.data[i] = val;
        }
        out.emplace_back(std::move(g), mix.components[pick].label.value_or(-1));
    }
    return out;
}

}  // namespace glab
