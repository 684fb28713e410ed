#pragma once

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "glab/model.hpp"
#include "glab/rng.hpp"
#include "glab/schedule.hpp"

namespace glab {

// Named parameter tensor with its gradient accumulator.
struct Tensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> value;
    std::vector<double> grad;

    std::size_t size() const { return value.size(); }
};

struct ParamSet {
    std::vector<Tensor> tensors;

    Tensor& find(const std::string& name);
    const Tensor& find(const std::string& name) const;
    bool has(const std::string& name) const;
    std::size_t total_size() const;
    void zero_grad();
};

struct DenoiserConfig {
    // image variant (vector_dim == 0)
    std::size_t in_channels = 1;
    std::size_t base_channels = 8;    // c1
    std::size_t mid_channels = 16;    // c2, where attention operates
    std::size_t heads = 4;
    std::size_t time_embed = 16;
    // vector variant (vector_dim > 0 selects the MLP)
    std::size_t vector_dim = 0;
    std::size_t hidden = 64;

    std::size_t num_classes = 0;  // 0 = unconditional

    bool is_vector() const { return vector_dim > 0; }
    std::size_t key_dim() const { return mid_channels / heads; }
};

// Compact trainable eps-predictor. The image variant is a two-level
// conv encoder/decoder with a single multi-head self-attention layer at the
// coarsest resolution and additive skip connections; the vector variant is a
// plain two-hidden-layer MLP. Timestep enters through a sinusoidal embedding
// projected onto the mid features; an optional class embedding is added the
// same way, with the null class contributing nothing. The output layer is
// zero-initialized so the untrained model predicts eps = 0.
class TinyDenoiser : public EpsModel {
  public:
    TinyDenoiser(const DenoiserConfig& cfg, RngStream init_rng);

    DenoiserOutput evaluate(const Grid& x, std::size_t t,
                            std::optional<int> label) const override;
    bool has_attention() const override { return !cfg_.is_vector(); }
    bool is_class_conditional() const override { return cfg_.num_classes > 0; }
    std::vector<std::string> attention_layers() const override {
        return cfg_.is_vector() ? std::vector<std::string>{} : std::vector<std::string>{"mid"};
    }

    // Accumulates dL/dparam for dL/deps provided in `grad_eps`, using the
    // caches of a fresh forward pass over (x, t, label). Returns eps.
    Grid forward_backward(const Grid& x, std::size_t t, std::optional<int> label,
                          const Grid& grad_eps);

    const DenoiserConfig& config() const { return cfg_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

    void save_checkpoint(const std::string& payload_path,
                         const std::string& manifest_path) const;
    static TinyDenoiser load_checkpoint(const std::string& payload_path,
                                        const std::string& manifest_path);

  private:
    DenoiserConfig cfg_;
    ParamSet params_;
};

struct TrainOptions {
    std::size_t steps = 2000;
    double learning_rate = 0.05;
    std::size_t batch_size = 16;
    double class_drop_prob = 0.0;
};

struct TrainResult {
    std::vector<double> loss_trace;  // one batch loss per step
};

using LabeledDataset = std::vector<std::pair<Grid, std::optional<int>>>;

// Plain SGD on the mean-squared eps objective. Throws DivergenceError with
// the step index if the loss goes non-finite.
TrainResult train(TinyDenoiser& model, const LabeledDataset& dataset,
                  const NoiseSchedule& sched, const TrainOptions& opts, RngStream rng);

// Gradient of the batch loss for every parameter, left in ParamSet::grad.
// Returns the loss. Exposed for the finite-difference certification tests.
double batch_gradients(TinyDenoiser& model, const std::vector<TrainExample>& batch,
                       const NoiseSchedule& sched);

std::vector<double> sinusoidal_embedding(std::size_t t, std::size_t dim);

}  // namespace glab
