#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "glab/attention.hpp"
#include "glab/grid.hpp"
#include "glab/rng.hpp"
#include "glab/schedule.hpp"

namespace glab {

// Which token axis survives the pooling of the stacked maps. The key axis
// measures attention received per position; pooling over keys instead leaves
// the (degenerate) query marginal. Both are available, key is the default.
enum class AggregateAxis { Key, Query };

// Head- and token-averaged attention, reshaped to H x W, upsampled to the
// input resolution, and normalized to mean 1.
struct AttentionMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> values;
    std::string source_layer;
    std::size_t timestep = 0;

    double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
    double mean_value() const;
};

struct Mask {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> bits;
    double fraction = 0.0;  // mean of bits

    bool at(std::size_t y, std::size_t x) const { return bits[y * width + x] != 0; }
    static Mask from_bits(std::size_t h, std::size_t w, std::vector<std::uint8_t> bits);
};

// GAP over heads and one token axis, reshape to h x w, scale by h*w so the
// mean is 1, then nearest-neighbor block replication up to target_h x target_w
// (integer ratios only).
AttentionMap aggregate_attention(const AttnStack& stack, std::size_t h, std::size_t w,
                                 std::size_t target_h, std::size_t target_w,
                                 AggregateAxis axis = AggregateAxis::Key);

// M = 1(A > psi), strict inequality.
Mask threshold_mask(const AttentionMap& a, double psi);

// x_hat_t: blur the intermediate reconstruction, blend by the mask, and
// re-noise with the same eps. Unmasked pixels copy x_t exactly; sigma == 0
// returns x_t for any mask.
Grid selective_blur_input(const Grid& x_t, const Grid& eps, const Mask& mask, double sigma,
                          std::size_t t, const NoiseSchedule& sched);

enum class MaskKind { Global, Random, Square, HighFrequency, SelfAttention };

MaskKind mask_kind_from_string(const std::string& s);
std::string to_string(MaskKind kind);

struct MaskContext {
    std::size_t height = 0;
    std::size_t width = 0;
    const AttentionMap* attention = nullptr;  // SelfAttention
    const Grid* x0_hat = nullptr;             // HighFrequency
    double psi = 1.0;
};

// Table-5 masking strategies. Global ignores target_fraction; Random draws
// iid Bernoulli(target_fraction); Square covers ~target_fraction with a
// centered block; HighFrequency picks the pixels with the most local
// high-pass energy; SelfAttention thresholds the attention map at psi.
Mask strategy_mask(MaskKind kind, const MaskContext& ctx, double target_fraction,
                   RngStream& rng);

}  // namespace glab
