#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "glab/attention_mask.hpp"
#include "glab/diffusion.hpp"
#include "glab/grid.hpp"
#include "glab/model.hpp"
#include "glab/rng.hpp"
#include "glab/schedule.hpp"

namespace glab {

enum class GuidanceKind { None, Cg, Cfg, Blur, Sag, SagCfg };

GuidanceKind guidance_kind_from_string(const std::string& s);
std::string to_string(GuidanceKind kind);

struct GuidanceConfig {
    GuidanceKind kind = GuidanceKind::None;
    double scale = 0.1;      // s (cg / cfg / blur / sag)
    double scale_cfg = 0.0;  // s_c (fused mode)
    double scale_sag = 0.0;  // s_s (fused mode)
    double sigma = 1.0;      // blur width; +inf selects the channel-mean mode
    double psi = 1.0;        // masking threshold on the mean-1 attention map
    std::string layer = "mid";
    VarianceMode variance = VarianceMode::FixedBeta;
    MaskKind mask = MaskKind::SelfAttention;
    double mask_fraction = 0.4;  // for the fixed-fraction strategies
    std::optional<int> class_id;
    AggregateAxis gap_axis = AggregateAxis::Key;

    void validate(bool model_has_classes, bool model_has_attention) const;
};

// eps_with + s * (eps_with - eps_without); s == 0 returns eps_with untouched
// so the unguided trajectory is reproduced bit for bit.
Grid generalized_guide(const Grid& eps_with_h, const Grid& eps_without_h, double s);

// eps - s * sigma_t * grad log p(c|x); sigma_t is the marginal noise scale
// sqrt(1 - alpha_bar_t).
Grid classifier_guide(const Grid& eps, const Grid& grad_log_pc, double s, double sigma_t);

// Delegates to generalized_guide; the special-case relation is structural.
Grid cfg_guide(const Grid& eps_cond, const Grid& eps_uncond, double s);

// eps_c + s_c (eps_c - eps_u) + s_s (eps_u - eps_degraded): fused SAG+CFG
// update with three model evaluations per step.
Grid fused_sag_cfg(const Grid& eps_cond, const Grid& eps_uncond, const Grid& eps_degraded,
                   double s_c, double s_s);

struct StepDiagnostics {
    std::size_t timestep = 0;
    double masked_fraction = 0.0;
    double eps_gap_norm = 0.0;
    std::optional<AttentionMap> attention;
    std::optional<Mask> mask;
};

struct SagStepResult {
    Grid x_prev;
    StepDiagnostics diag;
};

// One full SAG step: model eval, mask, selective blur, second eval, guided
// update, reverse step. Mask randomness (for the random strategy) comes from
// a stream derived from (chain stream, t) so the chain's z draws stay put.
SagStepResult sag_step(const EpsModel& model, const Grid& x_t, std::size_t t,
                       const NoiseSchedule& sched, const GuidanceConfig& cfg, RngStream& rng);

// SAG with a forced global mask.
SagStepResult blur_guidance_step(const EpsModel& model, const Grid& x_t, std::size_t t,
                                 const NoiseSchedule& sched, const GuidanceConfig& cfg,
                                 RngStream& rng);

// Dispatch over every guidance kind.
SagStepResult guided_step(const EpsModel& model, const Grid& x_t, std::size_t t,
                          const NoiseSchedule& sched, const GuidanceConfig& cfg, RngStream& rng);

struct SampleShape {
    std::size_t channels = 1;
    std::size_t height = 1;
    std::size_t width = 1;
};

struct SampleOptions {
    bool collect_attention = false;   // accumulate mean attention over steps
    bool keep_attention_maps = false; // retain per-step maps in diagnostics
};

struct SampleResult {
    std::vector<Grid> samples;
    std::vector<std::vector<StepDiagnostics>> diagnostics;  // per chain, t = T..1
    std::vector<Grid> accumulated_attention;                // per chain if requested
};

// Chain i draws from base_rng.derive(kChainStreamTag + i); part of the
// determinism contract so tests can replay individual chains.
inline constexpr std::uint64_t kChainStreamTag = 0x636861696e00ull;

// Reverse process from x_T ~ N(0, I) for n independent chains; deterministic
// per (base_rng, chain index) and safe to fan out across workers.
SampleResult sample(const EpsModel& model, const NoiseSchedule& sched, const GuidanceConfig& cfg,
                    std::size_t n_samples, RngStream base_rng, const SampleShape& shape,
                    const SampleOptions& opts = {});

}  // namespace glab
