#pragma once

#include <cstddef>
#include <vector>

#include "glab/matrix.hpp"

namespace glab {

// Per-head projection weights, each C x d.
struct AttnLayerWeights {
    std::size_t heads = 0;
    std::size_t key_dim = 0;  // d
    std::vector<Matrix> wq, wk, wv;

    std::size_t channels() const { return wq.empty() ? 0 : wq[0].rows; }
};

// Stacked row-stochastic attention maps, heads x tokens x tokens.
struct AttnStack {
    std::size_t heads = 0;
    std::size_t tokens = 0;
    std::vector<double> a;  // [h * tokens * tokens + q * tokens + k]

    double at(std::size_t h, std::size_t q, std::size_t k) const {
        return a[(h * tokens + q) * tokens + k];
    }
    double& at(std::size_t h, std::size_t q, std::size_t k) {
        return a[(h * tokens + q) * tokens + k];
    }
};

struct AttentionResult {
    Matrix y;         // tokens x C, heads concatenated
    AttnStack attn;   // softmax(Q K^T / sqrt(d)) per head
};

// Multi-head self-attention: per head A^h = softmax(Q^h (K^h)^T / sqrt(d)),
// output concatenates A^h V^h over heads. Requires heads * d == C.
AttentionResult self_attention(const Matrix& x, const AttnLayerWeights& w);

}  // namespace glab
