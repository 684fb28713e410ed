#include "glab/attention.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace glab {

AttentionResult self_attention(const Matrix& x, const AttnLayerWeights& w) {
    const std::size_t tokens = x.rows;
    const std::size_t c = x.cols;
    if (w.heads == 0 || w.wq.size() != w.heads || w.wk.size() != w.heads ||
        w.wv.size() != w.heads) {
        throw std::invalid_argument("self_attention: malformed head weights");
    }
    if (w.heads * w.key_dim != c) {
        throw std::invalid_argument("self_attention: heads * key_dim must equal channels");
    }
    for (const Matrix* m : {&w.wq[0], &w.wk[0], &w.wv[0]}) {
        if (m->rows != c || m->cols != w.key_dim) {
            throw std::invalid_argument("self_attention: projection shape mismatch");
        }
    }

    AttentionResult res;
    res.y = Matrix(tokens, c);
    res.attn.heads = w.heads;
    res.attn.tokens = tokens;
    res.attn.a.assign(w.heads * tokens * tokens, 0.0);

    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(w.key_dim));
    for (std::size_t h = 0; h < w.heads; ++h) {
        const Matrix q = matmul(x, w.wq[h]);
        const Matrix k = matmul(x, w.wk[h]);
        const Matrix v = matmul(x, w.wv[h]);

        for (std::size_t i = 0; i < tokens; ++i) {
            // softmax over the key axis with max subtraction
            double row_max = -std::numeric_limits<double>::infinity();
            std::vector<double> logits(tokens);
            for (std::size_t j = 0; j < tokens; ++j) {
                double s = 0.0;
                for (std::size_t e = 0; e < w.key_dim; ++e) s += q(i, e) * k(j, e);
                logits[j] = s * inv_sqrt_d;
                row_max = std::max(row_max, logits[j]);
            }
            double denom = 0.0;
            for (std::size_t j = 0; j < tokens; ++j) {
                logits[j] = std::exp(logits[j] - row_max);
                denom += logits[j];
            }
            for (std::size_t j = 0; j < tokens; ++j) {
                res.attn.at(h, i, j) = logits[j] / denom;
            }
        }

        // Y_h = A_h V_h, written into the head's channel slice
        for (std::size_t i = 0; i < tokens; ++i) {
            for (std::size_t e = 0; e < w.key_dim; ++e) {
                double s = 0.0;
                for (std::size_t j = 0; j < tokens; ++j) {
                    s += res.attn.at(h, i, j) * v(j, e);
                }
                res.y(i, h * w.key_dim + e) = s;
            }
        }
    }
    return res;
}

}  // namespace glab
