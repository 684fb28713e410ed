#include "glab/attention_mask.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "glab/diffusion.hpp"
#include "glab/numerics.hpp"

namespace glab {

double AttentionMap::mean_value() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s / static_cast<double>(values.size());
}

Mask Mask::from_bits(std::size_t h, std::size_t w, std::vector<std::uint8_t> bits) {
    if (bits.size() != h * w) throw std::invalid_argument("Mask: bits size mismatch");
    Mask m;
    m.height = h;
    m.width = w;
    m.bits = std::move(bits);
    double s = 0.0;
    for (auto b : m.bits) s += b ? 1.0 : 0.0;
    m.fraction = m.bits.empty() ? 0.0 : s / static_cast<double>(m.bits.size());
    return m;
}

AttentionMap aggregate_attention(const AttnStack& stack, std::size_t h, std::size_t w,
                                 std::size_t target_h, std::size_t target_w,
                                 AggregateAxis axis) {
    const std::size_t hw = h * w;
    if (stack.tokens != hw) {
        throw std::invalid_argument("aggregate_attention: token count != h*w");
    }
    if (target_h % h != 0 || target_w % w != 0) {
        throw std::invalid_argument("aggregate_attention: non-integer upsample ratio");
    }

    // mean over heads and the pooled token axis, times hw so the mean is 1
    std::vector<double> pooled(hw, 0.0);
    const double norm = static_cast<double>(hw) /
                        static_cast<double>(stack.heads * hw);
    for (std::size_t head = 0; head < stack.heads; ++head) {
        for (std::size_t q = 0; q < hw; ++q) {
            for (std::size_t k = 0; k < hw; ++k) {
                const std::size_t kept = (axis == AggregateAxis::Key) ? k : q;
                pooled[kept] += stack.at(head, q, k) * norm;
            }
        }
    }

    AttentionMap map;
    map.height = target_h;
    map.width = target_w;
    map.values.assign(target_h * target_w, 0.0);
    const std::size_t ry = target_h / h;
    const std::size_t rx = target_w / w;
    for (std::size_t y = 0; y < target_h; ++y) {
        for (std::size_t x = 0; x < target_w; ++x) {
            map.values[y * target_w + x] = pooled[(y / ry) * w + (x / rx)];
        }
    }
    return map;
}

Mask threshold_mask(const AttentionMap& a, double psi) {
    std::vector<std::uint8_t> bits(a.values.size());
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        bits[i] = a.values[i] > psi ? 1 : 0;
    }
    return Mask::from_bits(a.height, a.width, std::move(bits));
}

Grid selective_blur_input(const Grid& x_t, const Grid& eps, const Mask& mask, double sigma,
                          std::size_t t, const NoiseSchedule& sched) {
    require_same_shape(x_t, eps, "selective_blur_input");
    if (mask.height != x_t.height || mask.width != x_t.width) {
        throw std::invalid_argument("selective_blur_input: mask resolution mismatch");
    }
    if (sigma == 0.0 || mask.fraction == 0.0) return x_t;

    const Grid x0_hat = predict_x0(x_t, eps, t, sched);
    const Grid x0_blur = blur(x0_hat, sigma);
    const double acp = sched.alpha_cumprod_at(t);
    const double a = std::sqrt(acp);
    const double b = std::sqrt(1.0 - acp);

    // Masked pixels get the blurred reconstruction re-noised with the same
    // eps; unmasked pixels keep x_t bit-for-bit (the intact-region property).
    Grid out = x_t;
    for (std::size_t c = 0; c < x_t.channels; ++c) {
        for (std::size_t y = 0; y < x_t.height; ++y) {
            for (std::size_t x = 0; x < x_t.width; ++x) {
                if (mask.at(y, x)) {
                    out.at(c, y, x) = a * x0_blur.at(c, y, x) + b * eps.at(c, y, x);
                }
            }
        }
    }
    return out;
}

MaskKind mask_kind_from_string(const std::string& s) {
    if (s == "global") return MaskKind::Global;
    if (s == "random") return MaskKind::Random;
    if (s == "square") return MaskKind::Square;
    if (s == "high_frequency") return MaskKind::HighFrequency;
    if (s == "self_attention") return MaskKind::SelfAttention;
    throw std::invalid_argument("unknown masking strategy: " + s);
}

std::string to_string(MaskKind kind) {
    switch (kind) {
        case MaskKind::Global: return "global";
        case MaskKind::Random: return "random";
        case MaskKind::Square: return "square";
        case MaskKind::HighFrequency: return "high_frequency";
        case MaskKind::SelfAttention: return "self_attention";
    }
    return "?";
}

namespace {

// Per-pixel local high-pass energy: DFT magnitudes of the 8x8 patch centered
// at the pixel (reflect padding), summed over bins above half-Nyquist.
std::vector<double> highpass_energy(const Grid& x0_hat) {
    const long h = static_cast<long>(x0_hat.height);
    const long w = static_cast<long>(x0_hat.width);
    const long side = 8;
    auto fold = [](long i, long n) {
        while (i < 0 || i >= n) {
            if (i < 0) i = -i - 1;
            if (i >= n) i = 2 * n - 1 - i;
        }
        return static_cast<std::size_t>(i);
    };

    std::vector<double> energy(x0_hat.height * x0_hat.width, 0.0);
    Grid patch(1, side, side);
    for (long y = 0; y < h; ++y) {
        for (long x = 0; x < w; ++x) {
            for (long py = 0; py < side; ++py) {
                for (long px = 0; px < side; ++px) {
                    double v = 0.0;
                    // mean over channels so color layout cannot dominate
                    for (std::size_t c = 0; c < x0_hat.channels; ++c) {
                        v += x0_hat.at(c, fold(y + py - side / 2, h), fold(x + px - side / 2, w));
                    }
                    patch.at(0, py, px) = v / static_cast<double>(x0_hat.channels);
                }
            }
            const Grid mag = dft_magnitude(patch);
            double e = 0.0;
            for (long u = 0; u < side; ++u) {
                for (long v = 0; v < side; ++v) {
                    const long fu = std::min(u, side - u);
                    const long fv = std::min(v, side - v);
                    const double r = std::sqrt(static_cast<double>(fu * fu + fv * fv));
                    if (r > static_cast<double>(side) / 4.0) {
                        e += mag.at(0, u, v) * mag.at(0, u, v);
                    }
                }
            }
            energy[static_cast<std::size_t>(y) * x0_hat.width + static_cast<std::size_t>(x)] = e;
        }
    }
    return energy;
}

}  // namespace

Mask strategy_mask(MaskKind kind, const MaskContext& ctx, double target_fraction,
                   RngStream& rng) {
    const std::size_t h = ctx.height, w = ctx.width;
    if (h == 0 || w == 0) throw std::invalid_argument("strategy_mask: empty context");
    if (kind != MaskKind::Global && kind != MaskKind::SelfAttention &&
        (target_fraction < 0.0 || target_fraction > 1.0)) {
        throw std::invalid_argument("strategy_mask: target_fraction must be in [0, 1]");
    }

    switch (kind) {
        case MaskKind::Global:
            return Mask::from_bits(h, w, std::vector<std::uint8_t>(h * w, 1));
        case MaskKind::Random: {
            std::vector<std::uint8_t> bits(h * w);
            for (auto& b : bits) b = rng.bernoulli(target_fraction) ? 1 : 0;
            return Mask::from_bits(h, w, std::move(bits));
        }
        case MaskKind::Square: {
            const double pixels = std::ceil(target_fraction * static_cast<double>(h * w));
            std::size_t side = static_cast<std::size_t>(std::llround(std::sqrt(pixels)));
            side = std::min(side, std::min(h, w));
            const std::size_t y0 = (h - side) / 2;
            const std::size_t x0 = (w - side) / 2;
            std::vector<std::uint8_t> bits(h * w, 0);
            for (std::size_t y = y0; y < y0 + side; ++y) {
                for (std::size_t x = x0; x < x0 + side; ++x) bits[y * w + x] = 1;
            }
            return Mask::from_bits(h, w, std::move(bits));
        }
        case MaskKind::HighFrequency: {
            if (!ctx.x0_hat) {
                throw std::invalid_argument("strategy_mask: high_frequency needs x0_hat");
            }
            if (ctx.x0_hat->height != h || ctx.x0_hat->width != w) {
                throw std::invalid_argument("strategy_mask: x0_hat resolution mismatch");
            }
            const std::vector<double> energy = highpass_energy(*ctx.x0_hat);
            const std::size_t k = static_cast<std::size_t>(
                std::llround(target_fraction * static_cast<double>(h * w)));
            std::vector<std::size_t> order(h * w);
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                return energy[a] > energy[b];
            });
            std::vector<std::uint8_t> bits(h * w, 0);
            for (std::size_t i = 0; i < k && i < order.size(); ++i) bits[order[i]] = 1;
            return Mask::from_bits(h, w, std::move(bits));
        }
        case MaskKind::SelfAttention: {
            if (!ctx.attention) {
                throw std::invalid_argument("strategy_mask: self_attention needs a map");
            }
            if (ctx.attention->height != h || ctx.attention->width != w) {
                throw std::invalid_argument("strategy_mask: attention resolution mismatch");
            }
            return threshold_mask(*ctx.attention, ctx.psi);
        }
    }
    throw std::invalid_argument("strategy_mask: unknown kind");
}

}  // namespace glab
