#include "glab/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <thread>

#include "glab/numerics.hpp"
#include "glab/parallel.hpp"

namespace glab {

std::size_t worker_count() {
    if (const char* env = std::getenv("GLAB_THREADS")) {
        const long n = std::strtol(env, nullptr, 10);
        if (n >= 1) return static_cast<std::size_t>(n);
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : hc;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::min(worker_count(), n == 0 ? std::size_t{1} : n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += workers) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

GuidanceKind guidance_kind_from_string(const std::string& s) {
    if (s == "none") return GuidanceKind::None;
    if (s == "cg") return GuidanceKind::Cg;
    if (s == "cfg") return GuidanceKind::Cfg;
    if (s == "blur") return GuidanceKind::Blur;
    if (s == "sag") return GuidanceKind::Sag;
    if (s == "sag_cfg") return GuidanceKind::SagCfg;
    throw std::invalid_argument("unknown guidance kind: " + s);
}

std::string to_string(GuidanceKind kind) {
    switch (kind) {
        case GuidanceKind::None: return "none";
        case GuidanceKind::Cg: return "cg";
        case GuidanceKind::Cfg: return "cfg";
        case GuidanceKind::Blur: return "blur";
        case GuidanceKind::Sag: return "sag";
        case GuidanceKind::SagCfg: return "sag_cfg";
    }
    return "?";
}

void GuidanceConfig::validate(bool model_has_classes, bool model_has_attention) const {
    if (sigma < 0.0) throw std::invalid_argument("guidance: sigma must be >= 0");
    const bool needs_class =
        kind == GuidanceKind::Cg || kind == GuidanceKind::Cfg || kind == GuidanceKind::SagCfg;
    if (needs_class && !class_id) {
        throw std::invalid_argument("guidance: " + to_string(kind) + " needs a class id");
    }
    if (needs_class && !model_has_classes) {
        throw CapabilityError("guidance: " + to_string(kind) +
                              " needs a class-conditional model");
    }
    const bool needs_attention =
        (kind == GuidanceKind::Sag && mask == MaskKind::SelfAttention) ||
        kind == GuidanceKind::SagCfg;
    if (needs_attention && !model_has_attention) {
        throw CapabilityError("guidance: self-attention masking needs a model with attention");
    }
}

Grid generalized_guide(const Grid& eps_with_h, const Grid& eps_without_h, double s) {
    require_same_shape(eps_with_h, eps_without_h, "generalized_guide");
    if (s == 0.0) return eps_with_h;  // exact collapse, no arithmetic
    Grid out = eps_with_h;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = eps_with_h.data[i] + s * (eps_with_h.data[i] - eps_without_h.data[i]);
    }
    return out;
}

Grid classifier_guide(const Grid& eps, const Grid& grad_log_pc, double s, double sigma_t) {
    require_same_shape(eps, grad_log_pc, "classifier_guide");
    if (s == 0.0) return eps;
    Grid out = eps;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = eps.data[i] - s * sigma_t * grad_log_pc.data[i];
    }
    return out;
}

Grid cfg_guide(const Grid& eps_cond, const Grid& eps_uncond, double s) {
    // CFG is the generalized rule with (with, without) = (cond, uncond).
    return generalized_guide(eps_cond, eps_uncond, s);
}

Grid fused_sag_cfg(const Grid& eps_cond, const Grid& eps_uncond, const Grid& eps_degraded,
                   double s_c, double s_s) {
    require_same_shape(eps_cond, eps_uncond, "fused_sag_cfg");
    require_same_shape(eps_cond, eps_degraded, "fused_sag_cfg");
    if (s_c == 0.0 && s_s == 0.0) return eps_cond;
    Grid out = eps_cond;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = eps_cond.data[i] +
                      s_c * (eps_cond.data[i] - eps_uncond.data[i]) +
                      s_s * (eps_uncond.data[i] - eps_degraded.data[i]);
    }
    return out;
}

namespace {

std::optional<AttentionMap> aggregate_if_present(const DenoiserOutput& out,
                                                 const GuidanceConfig& cfg, const Grid& x_t,
                                                 std::size_t t) {
    if (!out.attn_stack) return std::nullopt;
    AttentionMap m = aggregate_attention(*out.attn_stack, out.attn_grid_h, out.attn_grid_w,
                                         x_t.height, x_t.width, cfg.gap_axis);
    m.source_layer = cfg.layer;
    m.timestep = t;
    return m;
}

// Degradation mask for one step; draws (if any) come from a stream derived
// from the chain stream and the timestep so the chain's z positions never move.
Mask build_mask(const GuidanceConfig& cfg, const Grid& x_t, const Grid& eps, std::size_t t,
                const NoiseSchedule& sched, const RngStream& chain_rng,
                const std::optional<AttentionMap>& map) {
    MaskContext ctx;
    ctx.height = x_t.height;
    ctx.width = x_t.width;
    ctx.psi = cfg.psi;
    if (cfg.mask == MaskKind::SelfAttention) {
        if (!map) throw CapabilityError("sag_step: model provides no attention maps");
        ctx.attention = &*map;
    }
    Grid x0_hat;
    if (cfg.mask == MaskKind::HighFrequency) {
        x0_hat = predict_x0(x_t, eps, t, sched);
        ctx.x0_hat = &x0_hat;
    }
    RngStream mask_rng = chain_rng.derive(0x6d61736bull + t);
    return strategy_mask(cfg.mask, ctx, cfg.mask_fraction, mask_rng);
}

}  // namespace

SagStepResult sag_step(const EpsModel& model, const Grid& x_t, std::size_t t,
                       const NoiseSchedule& sched, const GuidanceConfig& cfg, RngStream& rng) {
    const DenoiserOutput out = model.evaluate(x_t, t, cfg.class_id);

    SagStepResult res;
    res.diag.timestep = t;
    res.diag.attention = aggregate_if_present(out, cfg, x_t, t);
    Mask mask = build_mask(cfg, x_t, out.eps, t, sched, rng, res.diag.attention);

    const Grid x_hat = selective_blur_input(x_t, out.eps, mask, cfg.sigma, t, sched);
    const Grid eps_hat = model.evaluate(x_hat, t, cfg.class_id).eps;
    // guided update eps_hat + (1+s)(eps - eps_hat), evaluated in residual form
    const Grid eps_tilde = generalized_guide(out.eps, eps_hat, cfg.scale);

    res.diag.masked_fraction = mask.fraction;
    res.diag.eps_gap_norm = l2_norm(out.eps - eps_hat);
    res.diag.mask = std::move(mask);
    res.x_prev = reverse_step(x_t, eps_tilde, t, sched, rng, cfg.variance);
    return res;
}

SagStepResult blur_guidance_step(const EpsModel& model, const Grid& x_t, std::size_t t,
                                 const NoiseSchedule& sched, const GuidanceConfig& cfg,
                                 RngStream& rng) {
    GuidanceConfig global = cfg;
    global.mask = MaskKind::Global;
    return sag_step(model, x_t, t, sched, global, rng);
}

SagStepResult guided_step(const EpsModel& model, const Grid& x_t, std::size_t t,
                          const NoiseSchedule& sched, const GuidanceConfig& cfg,
                          RngStream& rng) {
    switch (cfg.kind) {
        case GuidanceKind::Sag:
            return sag_step(model, x_t, t, sched, cfg, rng);
        case GuidanceKind::Blur:
            return blur_guidance_step(model, x_t, t, sched, cfg, rng);
        default:
            break;
    }

    SagStepResult res;
    res.diag.timestep = t;
    // diag.attention is useful for the analysis path on every kind, so it is
    // aggregated whenever the first evaluation exposes a stack
    auto note_attention = [&](const DenoiserOutput& out) {
        if (!out.attn_stack) return;
        AttentionMap m = aggregate_attention(*out.attn_stack, out.attn_grid_h, out.attn_grid_w,
                                             x_t.height, x_t.width, cfg.gap_axis);
        m.source_layer = cfg.layer;
        m.timestep = t;
        res.diag.attention = std::move(m);
    };

    Grid eps_tilde;
    switch (cfg.kind) {
        case GuidanceKind::None: {
            DenoiserOutput out = model.evaluate(x_t, t, cfg.class_id);
            note_attention(out);
            eps_tilde = std::move(out.eps);
            break;
        }
        case GuidanceKind::Cg: {
            if (!model.has_classifier()) {
                throw CapabilityError("guidance: cg needs a model with a classifier");
            }
            const DenoiserOutput out = model.evaluate(x_t, t, cfg.class_id);
            note_attention(out);
            const Grid grad = model.classifier_grad_log_posterior(x_t, t, *cfg.class_id);
            eps_tilde = classifier_guide(out.eps, grad, cfg.scale, sched.marginal_std(t));
            break;
        }
        case GuidanceKind::Cfg: {
            const DenoiserOutput out = model.evaluate(x_t, t, cfg.class_id);
            note_attention(out);
            const Grid eps_uncond = model.evaluate(x_t, t, std::nullopt).eps;
            eps_tilde = cfg_guide(out.eps, eps_uncond, cfg.scale);
            break;
        }
        case GuidanceKind::SagCfg: {
            // unconditional branch drives the degradation (three evaluations)
            const DenoiserOutput uncond = model.evaluate(x_t, t, std::nullopt);
            res.diag.attention = aggregate_if_present(uncond, cfg, x_t, t);
            Mask mask = build_mask(cfg, x_t, uncond.eps, t, sched, rng, res.diag.attention);
            const Grid x_hat = selective_blur_input(x_t, uncond.eps, mask, cfg.sigma, t, sched);
            const Grid eps_degraded = model.evaluate(x_hat, t, std::nullopt).eps;
            const Grid eps_cond = model.evaluate(x_t, t, cfg.class_id).eps;
            eps_tilde = fused_sag_cfg(eps_cond, uncond.eps, eps_degraded, cfg.scale_cfg,
                                      cfg.scale_sag);
            res.diag.masked_fraction = mask.fraction;
            res.diag.eps_gap_norm = l2_norm(uncond.eps - eps_degraded);
            res.diag.mask = std::move(mask);
            break;
        }
        default:
            throw std::invalid_argument("guided_step: unhandled guidance kind");
    }
    res.x_prev = reverse_step(x_t, eps_tilde, t, sched, rng, cfg.variance);
    return res;
}

SampleResult sample(const EpsModel& model, const NoiseSchedule& sched, const GuidanceConfig& cfg,
                    std::size_t n_samples, RngStream base_rng, const SampleShape& shape,
                    const SampleOptions& opts) {
    cfg.validate(model.is_class_conditional(), model.has_attention());

    SampleResult result;
    result.samples.resize(n_samples);
    result.diagnostics.resize(n_samples);
    if (opts.collect_attention) result.accumulated_attention.resize(n_samples);

    parallel_for(n_samples, [&](std::size_t i) {
        RngStream chain = base_rng.derive(kChainStreamTag + i);
        Grid x = standard_normal(chain, shape.channels, shape.height, shape.width);

        Grid attn_sum(1, shape.height, shape.width, 0.0);
        std::size_t attn_count = 0;
        std::vector<StepDiagnostics> diags;
        diags.reserve(sched.T);

        for (std::size_t t = sched.T; t >= 1; --t) {
            SagStepResult step = guided_step(model, x, t, sched, cfg, chain);
            x = std::move(step.x_prev);
            if (opts.collect_attention && step.diag.attention) {
                const AttentionMap& m = *step.diag.attention;
                for (std::size_t p = 0; p < m.values.size(); ++p) {
                    attn_sum.data[p] += m.values[p];
                }
                ++attn_count;
            }
            if (!opts.keep_attention_maps) {
                step.diag.attention.reset();
                step.diag.mask.reset();
            }
            diags.push_back(std::move(step.diag));
        }

        result.samples[i] = std::move(x);
        result.diagnostics[i] = std::move(diags);
        if (opts.collect_attention) {
            if (attn_count > 0) {
                for (double& v : attn_sum.data) v /= static_cast<double>(attn_count);
            }
            result.accumulated_attention[i] = std::move(attn_sum);
        }
    });
    return result;
}

}  // namespace glab
