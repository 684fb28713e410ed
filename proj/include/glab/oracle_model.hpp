#pragma once

#include <algorithm>
#include <optional>
#include <stdexcept>

#include "glab/mixture.hpp"
#include "glab/model.hpp"
#include "glab/schedule.hpp"

namespace glab {

// EpsModel view of the closed-form mixture score: exact eps predictions,
// exact classifier gradients, no attention.
class MixtureOracleModel : public EpsModel {
  public:
    MixtureOracleModel(MixtureSpec mix, NoiseSchedule sched)
        : mix_(std::move(mix)), sched_(std::move(sched)) {
        mix_.validate();
        labeled_ = std::all_of(mix_.components.begin(), mix_.components.end(),
                               [](const MixtureComponent& c) { return c.label.has_value(); });
    }

    DenoiserOutput evaluate(const Grid& x, std::size_t t,
                            std::optional<int> label) const override {
        DenoiserOutput out;
        out.eps = oracle_epsilon(x, t, sched_, mix_, label);
        out.variance_mode = VarianceMode::FixedBeta;
        return out;
    }

    bool has_attention() const override { return false; }
    bool is_class_conditional() const override { return labeled_; }
    bool has_classifier() const override { return labeled_; }

    Grid classifier_grad_log_posterior(const Grid& x, std::size_t t, int label) const override {
        const ClassPosterior post = oracle_class_posterior(x, t, sched_, mix_);
        for (std::size_t i = 0; i < post.classes.size(); ++i) {
            if (post.classes[i] == label) return post.grad_log_posterior[i];
        }
        throw std::invalid_argument("MixtureOracleModel: unknown class label");
    }

    const MixtureSpec& mixture() const { return mix_; }

  private:
    MixtureSpec mix_;
    NoiseSchedule sched_;
    bool labeled_ = false;
};

}  // namespace glab
