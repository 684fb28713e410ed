#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "glab/attention.hpp"
#include "glab/diffusion.hpp"
#include "glab/grid.hpp"

namespace glab {

// One model evaluation: predicted noise, the variance source tag, and the
// stacked self-attention maps when the architecture exposes them.
struct DenoiserOutput {
    Grid eps;
    VarianceMode variance_mode = VarianceMode::FixedBeta;
    std::optional<AttnStack> attn_stack;
    std::size_t attn_grid_h = 0;  // token grid dims for reshaping the maps
    std::size_t attn_grid_w = 0;
};

// Raised when a guidance mode asks a model for something it cannot provide
// (attention maps, class conditioning, a classifier gradient).
struct CapabilityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Raised by training when the loss goes non-finite; carries the step index.
struct DivergenceError : std::runtime_error {
    std::size_t step;
    DivergenceError(std::size_t step_, const std::string& msg)
        : std::runtime_error(msg), step(step_) {}
};

// Common evaluation surface shared by the trainable denoiser and the
// closed-form mixture oracle.
class EpsModel {
  public:
    virtual ~EpsModel() = default;
    virtual DenoiserOutput evaluate(const Grid& x, std::size_t t,
                                    std::optional<int> label) const = 0;
    virtual bool has_attention() const = 0;
    virtual bool is_class_conditional() const = 0;
    virtual std::vector<std::string> attention_layers() const { return {}; }

    virtual bool has_classifier() const { return false; }
    virtual Grid classifier_grad_log_posterior(const Grid&, std::size_t, int) const {
        throw CapabilityError("model has no classifier");
    }
};

}  // namespace glab
