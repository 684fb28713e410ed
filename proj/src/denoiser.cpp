#include "glab/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "glab/io_util.hpp"

namespace glab {

// ---------------------------------------------------------------------------
// ParamSet

Tensor& ParamSet::find(const std::string& name) {
    for (Tensor& t : tensors) {
        if (t.name == name) return t;
    }
    throw std::invalid_argument("ParamSet: unknown tensor " + name);
}

const Tensor& ParamSet::find(const std::string& name) const {
    for (const Tensor& t : tensors) {
        if (t.name == name) return t;
    }
    throw std::invalid_argument("ParamSet: unknown tensor " + name);
}

bool ParamSet::has(const std::string& name) const {
    for (const Tensor& t : tensors) {
        if (t.name == name) return true;
    }
    return false;
}

std::size_t ParamSet::total_size() const {
    std::size_t n = 0;
    for (const Tensor& t : tensors) n += t.size();
    return n;
}

void ParamSet::zero_grad() {
    for (Tensor& t : tensors) std::fill(t.grad.begin(), t.grad.end(), 0.0);
}

// ---------------------------------------------------------------------------
// layer primitives

namespace {

double silu(double z) {
    const double s = 1.0 / (1.0 + std::exp(-z));
    return z * s;
}

double silu_grad(double z) {
    const double s = 1.0 / (1.0 + std::exp(-z));
    return s * (1.0 + z * (1.0 - s));
}

Grid silu_grid(const Grid& z) {
    Grid out = z;
    for (double& v : out.data) v = silu(v);
    return out;
}

// 3x3 conv, stride 1, zero padding; weight (co, ci, 3, 3).
Grid conv3x3(const Grid& in, const Tensor& w, const Tensor& b) {
    const std::size_t co = w.shape[0], ci = w.shape[1];
    const long h = static_cast<long>(in.height), wd = static_cast<long>(in.width);
    Grid out(co, in.height, in.width);
    for (std::size_t o = 0; o < co; ++o) {
        for (long y = 0; y < h; ++y) {
            for (long x = 0; x < wd; ++x) {
                double acc = b.value[o];
                for (std::size_t i = 0; i < ci; ++i) {
                    for (long dy = -1; dy <= 1; ++dy) {
                        const long yy = y + dy;
                        if (yy < 0 || yy >= h) continue;
                        for (long dx = -1; dx <= 1; ++dx) {
                            const long xx = x + dx;
                            if (xx < 0 || xx >= wd) continue;
                            acc += w.value[((o * ci + i) * 3 + (dy + 1)) * 3 + (dx + 1)] *
                                   in.at(i, yy, xx);
                        }
                    }
                }
                out.at(o, y, x) = acc;
            }
        }
    }
    return out;
}

// Backward of conv3x3: accumulates weight/bias grads, returns input grad.
Grid conv3x3_backward(const Grid& in, Tensor& w, Tensor& b, const Grid& d_out) {
    const std::size_t co = w.shape[0], ci = w.shape[1];
    const long h = static_cast<long>(in.height), wd = static_cast<long>(in.width);
    Grid d_in(in.channels, in.height, in.width, 0.0);
    for (std::size_t o = 0; o < co; ++o) {
        for (long y = 0; y < h; ++y) {
            for (long x = 0; x < wd; ++x) {
                const double g = d_out.at(o, y, x);
                if (g == 0.0) continue;
                b.grad[o] += g;
                for (std::size_t i = 0; i < ci; ++i) {
                    for (long dy = -1; dy <= 1; ++dy) {
                        const long yy = y + dy;
                        if (yy < 0 || yy >= h) continue;
                        for (long dx = -1; dx <= 1; ++dx) {
                            const long xx = x + dx;
                            if (xx < 0 || xx >= wd) continue;
                            const std::size_t wi =
                                ((o * ci + i) * 3 + (dy + 1)) * 3 + (dx + 1);
                            w.grad[wi] += g * in.at(i, yy, xx);
                            d_in.at(i, yy, xx) += g * w.value[wi];
                        }
                    }
                }
            }
        }
    }
    return d_in;
}

Grid avgpool2(const Grid& in) {
    Grid out(in.channels, in.height / 2, in.width / 2);
    for (std::size_t c = 0; c < in.channels; ++c) {
        for (std::size_t y = 0; y < out.height; ++y) {
            for (std::size_t x = 0; x < out.width; ++x) {
                out.at(c, y, x) = 0.25 * (in.at(c, 2 * y, 2 * x) + in.at(c, 2 * y, 2 * x + 1) +
                                          in.at(c, 2 * y + 1, 2 * x) +
                                          in.at(c, 2 * y + 1, 2 * x + 1));
            }
        }
    }
    return out;
}

Grid avgpool2_backward(const Grid& d_out, std::size_t in_h, std::size_t in_w) {
    Grid d_in(d_out.channels, in_h, in_w);
    for (std::size_t c = 0; c < d_out.channels; ++c) {
        for (std::size_t y = 0; y < d_out.height; ++y) {
            for (std::size_t x = 0; x < d_out.width; ++x) {
                const double g = 0.25 * d_out.at(c, y, x);
                d_in.at(c, 2 * y, 2 * x) = g;
                d_in.at(c, 2 * y, 2 * x + 1) = g;
                d_in.at(c, 2 * y + 1, 2 * x) = g;
                d_in.at(c, 2 * y + 1, 2 * x + 1) = g;
            }
        }
    }
    return d_in;
}

Grid upsample2(const Grid& in) {
    Grid out(in.channels, in.height * 2, in.width * 2);
    for (std::size_t c = 0; c < in.channels; ++c) {
        for (std::size_t y = 0; y < out.height; ++y) {
            for (std::size_t x = 0; x < out.width; ++x) {
                out.at(c, y, x) = in.at(c, y / 2, x / 2);
            }
        }
    }
    return out;
}

Grid upsample2_backward(const Grid& d_out) {
    Grid d_in(d_out.channels, d_out.height / 2, d_out.width / 2);
    for (std::size_t c = 0; c < d_out.channels; ++c) {
        for (std::size_t y = 0; y < d_out.height; ++y) {
            for (std::size_t x = 0; x < d_out.width; ++x) {
                d_in.at(c, y / 2, x / 2) += d_out.at(c, y, x);
            }
        }
    }
    return d_in;
}

Matrix grid_to_tokens(const Grid& g) {
    Matrix m(g.height * g.width, g.channels);
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t y = 0; y < g.height; ++y) {
            for (std::size_t x = 0; x < g.width; ++x) {
                m(y * g.width + x, c) = g.at(c, y, x);
            }
        }
    }
    return m;
}

Grid tokens_to_grid(const Matrix& m, std::size_t h, std::size_t w) {
    Grid g(m.cols, h, w);
    for (std::size_t c = 0; c < m.cols; ++c) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                g.at(c, y, x) = m(y * w + x, c);
            }
        }
    }
    return g;
}

AttnLayerWeights attn_weights_view(const ParamSet& params, std::size_t heads, std::size_t c,
                                   std::size_t d) {
    const Tensor& wq = params.find("attn.wq");
    const Tensor& wk = params.find("attn.wk");
    const Tensor& wv = params.find("attn.wv");
    AttnLayerWeights w;
    w.heads = heads;
    w.key_dim = d;
    for (std::size_t h = 0; h < heads; ++h) {
        Matrix q(c, d), k(c, d), v(c, d);
        for (std::size_t i = 0; i < c * d; ++i) {
            q.v[i] = wq.value[h * c * d + i];
            k.v[i] = wk.value[h * c * d + i];
            v.v[i] = wv.value[h * c * d + i];
        }
        w.wq.push_back(std::move(q));
        w.wk.push_back(std::move(k));
        w.wv.push_back(std::move(v));
    }
    return w;
}

// Backward through Y = concat_h softmax(X Wq (X Wk)^T / sqrt(d)) X Wv.
// Accumulates projection grads and returns dX.
Matrix attention_backward(const Matrix& x, const AttnLayerWeights& w, const AttnStack& attn,
                          const Matrix& d_y, ParamSet& params) {
    const std::size_t tokens = x.rows, c = x.cols, d = w.key_dim;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    Matrix d_x(tokens, c);
    Tensor& gq = params.find("attn.wq");
    Tensor& gk = params.find("attn.wk");
    Tensor& gv = params.find("attn.wv");

    for (std::size_t h = 0; h < w.heads; ++h) {
        const Matrix q = matmul(x, w.wq[h]);
        const Matrix k = matmul(x, w.wk[h]);
        const Matrix v = matmul(x, w.wv[h]);

        // head slice of dY
        Matrix d_o(tokens, d);
        for (std::size_t i = 0; i < tokens; ++i)
            for (std::size_t e = 0; e < d; ++e) d_o(i, e) = d_y(i, h * d + e);

        // dA = dO V^T ; dV = A^T dO
        Matrix a(tokens, tokens);
        for (std::size_t i = 0; i < tokens; ++i)
            for (std::size_t j = 0; j < tokens; ++j) a(i, j) = attn.at(h, i, j);
        const Matrix d_a = matmul(d_o, transpose(v));
        const Matrix d_v = matmul(transpose(a), d_o);

        // softmax backward per row
        Matrix d_s(tokens, tokens);
        for (std::size_t i = 0; i < tokens; ++i) {
            double inner = 0.0;
            for (std::size_t j = 0; j < tokens; ++j) inner += a(i, j) * d_a(i, j);
            for (std::size_t j = 0; j < tokens; ++j) {
                d_s(i, j) = a(i, j) * (d_a(i, j) - inner);
            }
        }

        const Matrix d_q = inv_sqrt_d * matmul(d_s, k);
        const Matrix d_k = inv_sqrt_d * matmul(transpose(d_s), q);

        const Matrix d_wq = matmul(transpose(x), d_q);
        const Matrix d_wk = matmul(transpose(x), d_k);
        const Matrix d_wv = matmul(transpose(x), d_v);
        for (std::size_t i = 0; i < c * d; ++i) {
            gq.grad[h * c * d + i] += d_wq.v[i];
            gk.grad[h * c * d + i] += d_wk.v[i];
            gv.grad[h * c * d + i] += d_wv.v[i];
        }

        const Matrix dx_h = matmul(d_q, transpose(w.wq[h])) + matmul(d_k, transpose(w.wk[h])) +
                            matmul(d_v, transpose(w.wv[h]));
        for (std::size_t i = 0; i < tokens * c; ++i) d_x.v[i] += dx_h.v[i];
    }
    return d_x;
}

}  // namespace

std::vector<double> sinusoidal_embedding(std::size_t t, std::size_t dim) {
    std::vector<double> e(dim);
    const std::size_t half = dim / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double freq =
            std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
        e[2 * i] = std::sin(static_cast<double>(t) * freq);
        e[2 * i + 1] = std::cos(static_cast<double>(t) * freq);
    }
    return e;
}

// ---------------------------------------------------------------------------
// construction

namespace {

Tensor make_tensor(const std::string& name, std::vector<std::size_t> shape) {
    Tensor t;
    t.name = name;
    t.shape = std::move(shape);
    std::size_t n = 1;
    for (std::size_t d : t.shape) n *= d;
    t.value.assign(n, 0.0);
    t.grad.assign(n, 0.0);
    return t;
}

void init_normal(Tensor& t, double scale, RngStream& rng) {
    for (double& v : t.value) v = scale * rng.normal();
}

}  // namespace

TinyDenoiser::TinyDenoiser(const DenoiserConfig& cfg, RngStream init_rng) : cfg_(cfg) {
    if (cfg_.is_vector()) {
        params_.tensors.push_back(make_tensor("fc1.weight", {cfg_.hidden, cfg_.vector_dim}));
        params_.tensors.push_back(make_tensor("fc1.bias", {cfg_.hidden}));
        params_.tensors.push_back(make_tensor("temb.weight", {cfg_.hidden, cfg_.time_embed}));
        if (cfg_.num_classes > 0) {
            params_.tensors.push_back(
                make_tensor("class.embed", {cfg_.num_classes, cfg_.hidden}));
        }
        params_.tensors.push_back(make_tensor("fc2.weight", {cfg_.hidden, cfg_.hidden}));
        params_.tensors.push_back(make_tensor("fc2.bias", {cfg_.hidden}));
        params_.tensors.push_back(make_tensor("out.weight", {cfg_.vector_dim, cfg_.hidden}));
        params_.tensors.push_back(make_tensor("out.bias", {cfg_.vector_dim}));

        init_normal(params_.find("fc1.weight"),
                    std::sqrt(2.0 / static_cast<double>(cfg_.vector_dim)), init_rng);
        init_normal(params_.find("temb.weight"),
                    1.0 / std::sqrt(static_cast<double>(cfg_.time_embed)), init_rng);
        if (cfg_.num_classes > 0) init_normal(params_.find("class.embed"), 0.1, init_rng);
        init_normal(params_.find("fc2.weight"),
                    std::sqrt(2.0 / static_cast<double>(cfg_.hidden)), init_rng);
        // out.* stays zero
        return;
    }

    if (cfg_.mid_channels % cfg_.heads != 0) {
        throw std::invalid_argument("TinyDenoiser: heads must divide mid_channels");
    }
    const std::size_t c1 = cfg_.base_channels, c2 = cfg_.mid_channels;
    params_.tensors.push_back(make_tensor("conv1.weight", {c1, cfg_.in_channels, 3, 3}));
    params_.tensors.push_back(make_tensor("conv1.bias", {c1}));
    params_.tensors.push_back(make_tensor("temb.weight", {c2, cfg_.time_embed}));
    if (cfg_.num_classes > 0) {
        params_.tensors.push_back(make_tensor("class.embed", {cfg_.num_classes, c2}));
    }
    params_.tensors.push_back(make_tensor("conv2.weight", {c2, c1, 3, 3}));
    params_.tensors.push_back(make_tensor("conv2.bias", {c2}));
    params_.tensors.push_back(make_tensor("attn.wq", {cfg_.heads, c2, cfg_.key_dim()}));
    params_.tensors.push_back(make_tensor("attn.wk", {cfg_.heads, c2, cfg_.key_dim()}));
    params_.tensors.push_back(make_tensor("attn.wv", {cfg_.heads, c2, cfg_.key_dim()}));
    params_.tensors.push_back(make_tensor("conv3.weight", {c1, c2, 3, 3}));
    params_.tensors.push_back(make_tensor("conv3.bias", {c1}));
    params_.tensors.push_back(make_tensor("conv4.weight", {c1, c1, 3, 3}));
    params_.tensors.push_back(make_tensor("conv4.bias", {c1}));
    params_.tensors.push_back(make_tensor("out.weight", {cfg_.in_channels, c1, 3, 3}));
    params_.tensors.push_back(make_tensor("out.bias", {cfg_.in_channels}));

    init_normal(params_.find("conv1.weight"),
                std::sqrt(2.0 / (9.0 * static_cast<double>(cfg_.in_channels))), init_rng);
    init_normal(params_.find("temb.weight"),
                1.0 / std::sqrt(static_cast<double>(cfg_.time_embed)), init_rng);
    if (cfg_.num_classes > 0) init_normal(params_.find("class.embed"), 0.1, init_rng);
    init_normal(params_.find("conv2.weight"), std::sqrt(2.0 / (9.0 * static_cast<double>(c1))),
                init_rng);
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(c2));
    init_normal(params_.find("attn.wq"), attn_scale, init_rng);
    init_normal(params_.find("attn.wk"), attn_scale, init_rng);
    init_normal(params_.find("attn.wv"), attn_scale, init_rng);
    init_normal(params_.find("conv3.weight"), std::sqrt(2.0 / (9.0 * static_cast<double>(c2))),
                init_rng);
    init_normal(params_.find("conv4.weight"), std::sqrt(2.0 / (9.0 * static_cast<double>(c1))),
                init_rng);
    // out.* stays zero so the untrained model predicts eps = 0
}

// ---------------------------------------------------------------------------
// forward (+ optional backward)

namespace {

struct ImageCache {
    std::vector<double> temb;
    Grid z1, h1, p1, z2, h2, p2;
    Matrix tokens_in;
    AttentionResult attn;
    Grid a, u2, s3, z3, h3, u1, s4, z4, h4;
};

struct VectorCache {
    std::vector<double> temb;
    std::vector<double> z1, h1, z2, h2;
};

}  // namespace

struct TinyDenoiserForward {
    static DenoiserOutput image_forward(const TinyDenoiser& m, const Grid& x, std::size_t t,
                                        std::optional<int> label, ImageCache* cache);
    static DenoiserOutput vector_forward(const TinyDenoiser& m, const Grid& x, std::size_t t,
                                         std::optional<int> label, VectorCache* cache);
    static void image_backward(TinyDenoiser& m, const Grid& x, std::optional<int> label,
                               const ImageCache& cache, const Grid& d_eps);
    static void vector_backward(TinyDenoiser& m, const Grid& x, std::optional<int> label,
                                const VectorCache& cache, const Grid& d_eps);
};

DenoiserOutput TinyDenoiserForward::image_forward(const TinyDenoiser& m, const Grid& x,
                                                  std::size_t t, std::optional<int> label,
                                                  ImageCache* cache) {
    const DenoiserConfig& cfg = m.config();
    const ParamSet& P = m.params();
    if (x.channels != cfg.in_channels || x.height % 4 != 0 || x.width % 4 != 0 ||
        x.height < 4 || x.width < 4) {
        throw std::invalid_argument("TinyDenoiser: image shape must be C x 4k x 4k");
    }
    if (label && (*label < 0 || static_cast<std::size_t>(*label) >= cfg.num_classes)) {
        throw std::invalid_argument("TinyDenoiser: class label out of range");
    }

    ImageCache local;
    ImageCache& c = cache ? *cache : local;
    c.temb = sinusoidal_embedding(t, cfg.time_embed);

    c.z1 = conv3x3(x, P.find("conv1.weight"), P.find("conv1.bias"));
    c.h1 = silu_grid(c.z1);
    c.p1 = avgpool2(c.h1);

    c.z2 = conv3x3(c.p1, P.find("conv2.weight"), P.find("conv2.bias"));
    const Tensor& wt = P.find("temb.weight");
    for (std::size_t ch = 0; ch < cfg.mid_channels; ++ch) {
        double add = 0.0;
        for (std::size_t e = 0; e < cfg.time_embed; ++e) {
            add += wt.value[ch * cfg.time_embed + e] * c.temb[e];
        }
        if (label) {
            add += P.find("class.embed").value[*label * cfg.mid_channels + ch];
        }
        for (std::size_t i = 0; i < c.z2.height * c.z2.width; ++i) {
            c.z2.data[ch * c.z2.height * c.z2.width + i] += add;
        }
    }
    c.h2 = silu_grid(c.z2);
    c.p2 = avgpool2(c.h2);

    c.tokens_in = grid_to_tokens(c.p2);
    const AttnLayerWeights w = attn_weights_view(P, cfg.heads, cfg.mid_channels, cfg.key_dim());
    c.attn = self_attention(c.tokens_in, w);
    c.a = c.p2 + tokens_to_grid(c.attn.y, c.p2.height, c.p2.width);

    c.u2 = upsample2(c.a);
    c.s3 = c.u2 + c.h2;
    c.z3 = conv3x3(c.s3, P.find("conv3.weight"), P.find("conv3.bias"));
    c.h3 = silu_grid(c.z3);

    c.u1 = upsample2(c.h3);
    c.s4 = c.u1 + c.h1;
    c.z4 = conv3x3(c.s4, P.find("conv4.weight"), P.find("conv4.bias"));
    c.h4 = silu_grid(c.z4);

    DenoiserOutput out;
    out.eps = conv3x3(c.h4, P.find("out.weight"), P.find("out.bias"));
    out.variance_mode = VarianceMode::FixedBeta;
    out.attn_stack = c.attn.attn;
    out.attn_grid_h = c.p2.height;
    out.attn_grid_w = c.p2.width;
    return out;
}

DenoiserOutput TinyDenoiserForward::vector_forward(const TinyDenoiser& m, const Grid& x,
                                                   std::size_t t, std::optional<int> label,
                                                   VectorCache* cache) {
    const DenoiserConfig& cfg = m.config();
    const ParamSet& P = m.params();
    if (!x.is_vector() || x.channels != cfg.vector_dim) {
        throw std::invalid_argument("TinyDenoiser: expected a vector grid of the model dim");
    }
    if (label && (*label < 0 || static_cast<std::size_t>(*label) >= cfg.num_classes)) {
        throw std::invalid_argument("TinyDenoiser: class label out of range");
    }

    VectorCache local;
    VectorCache& c = cache ? *cache : local;
    c.temb = sinusoidal_embedding(t, cfg.time_embed);

    const Tensor& w1 = P.find("fc1.weight");
    const Tensor& b1 = P.find("fc1.bias");
    const Tensor& wt = P.find("temb.weight");
    c.z1.assign(cfg.hidden, 0.0);
    for (std::size_t i = 0; i < cfg.hidden; ++i) {
        double acc = b1.value[i];
        for (std::size_t j = 0; j < cfg.vector_dim; ++j) {
            acc += w1.value[i * cfg.vector_dim + j] * x.data[j];
        }
        for (std::size_t e = 0; e < cfg.time_embed; ++e) {
            acc += wt.value[i * cfg.time_embed + e] * c.temb[e];
        }
        if (label) acc += P.find("class.embed").value[*label * cfg.hidden + i];
        c.z1[i] = acc;
    }
    c.h1.resize(cfg.hidden);
    for (std::size_t i = 0; i < cfg.hidden; ++i) c.h1[i] = silu(c.z1[i]);

    const Tensor& w2 = P.find("fc2.weight");
    const Tensor& b2 = P.find("fc2.bias");
    c.z2.assign(cfg.hidden, 0.0);
    for (std::size_t i = 0; i < cfg.hidden; ++i) {
        double acc = b2.value[i];
        for (std::size_t j = 0; j < cfg.hidden; ++j) acc += w2.value[i * cfg.hidden + j] * c.h1[j];
        c.z2[i] = acc;
    }
    c.h2.resize(cfg.hidden);
    for (std::size_t i = 0; i < cfg.hidden; ++i) c.h2[i] = silu(c.z2[i]);

    const Tensor& wo = P.find("out.weight");
    const Tensor& bo = P.find("out.bias");
    DenoiserOutput out;
    out.eps = Grid::make_vector(cfg.vector_dim);
    for (std::size_t i = 0; i < cfg.vector_dim; ++i) {
        double acc = bo.value[i];
        for (std::size_t j = 0; j < cfg.hidden; ++j) acc += wo.value[i * cfg.hidden + j] * c.h2[j];
        out.eps.data[i] = acc;
    }
    out.variance_mode = VarianceMode::FixedBeta;
    return out;
}

void TinyDenoiserForward::image_backward(TinyDenoiser& m, const Grid& x,
                                         std::optional<int> label, const ImageCache& c,
                                         const Grid& d_eps) {
    const DenoiserConfig& cfg = m.config();
    ParamSet& P = m.params();

    Grid d_h4 = conv3x3_backward(c.h4, P.find("out.weight"), P.find("out.bias"), d_eps);
    Grid d_z4 = d_h4;
    for (std::size_t i = 0; i < d_z4.data.size(); ++i) d_z4.data[i] *= silu_grad(c.z4.data[i]);

    Grid d_s4 = conv3x3_backward(c.s4, P.find("conv4.weight"), P.find("conv4.bias"), d_z4);
    Grid d_h1 = d_s4;  // skip branch; pooled branch accumulates below
    Grid d_h3 = upsample2_backward(d_s4);
    Grid d_z3 = d_h3;
    for (std::size_t i = 0; i < d_z3.data.size(); ++i) d_z3.data[i] *= silu_grad(c.z3.data[i]);

    Grid d_s3 = conv3x3_backward(c.s3, P.find("conv3.weight"), P.find("conv3.bias"), d_z3);
    Grid d_h2 = d_s3;  // skip branch
    Grid d_a = upsample2_backward(d_s3);

    // residual a = p2 + untok(attn(tok(p2)))
    Matrix d_y(c.tokens_in.rows, c.tokens_in.cols);
    for (std::size_t ch = 0; ch < d_a.channels; ++ch) {
        for (std::size_t y = 0; y < d_a.height; ++y) {
            for (std::size_t xx = 0; xx < d_a.width; ++xx) {
                d_y(y * d_a.width + xx, ch) = d_a.at(ch, y, xx);
            }
        }
    }
    const AttnLayerWeights w =
        attn_weights_view(P, cfg.heads, cfg.mid_channels, cfg.key_dim());
    const Matrix d_tokens = attention_backward(c.tokens_in, w, c.attn.attn, d_y, P);
    Grid d_p2 = d_a;  // identity branch of the residual
    for (std::size_t ch = 0; ch < d_p2.channels; ++ch) {
        for (std::size_t y = 0; y < d_p2.height; ++y) {
            for (std::size_t xx = 0; xx < d_p2.width; ++xx) {
                d_p2.at(ch, y, xx) += d_tokens(y * d_p2.width + xx, ch);
            }
        }
    }

    d_h2 += avgpool2_backward(d_p2, c.h2.height, c.h2.width);
    Grid d_z2 = d_h2;
    for (std::size_t i = 0; i < d_z2.data.size(); ++i) d_z2.data[i] *= silu_grad(c.z2.data[i]);

    // timestep / class additive embeddings
    Tensor& wt = P.find("temb.weight");
    const std::size_t hw2 = d_z2.height * d_z2.width;
    for (std::size_t ch = 0; ch < cfg.mid_channels; ++ch) {
        double g_ch = 0.0;
        for (std::size_t i = 0; i < hw2; ++i) g_ch += d_z2.data[ch * hw2 + i];
        for (std::size_t e = 0; e < cfg.time_embed; ++e) {
            wt.grad[ch * cfg.time_embed + e] += g_ch * c.temb[e];
        }
        if (label) {
            P.find("class.embed").grad[*label * cfg.mid_channels + ch] += g_ch;
        }
    }

    Grid d_p1 = conv3x3_backward(c.p1, P.find("conv2.weight"), P.find("conv2.bias"), d_z2);
    d_h1 += avgpool2_backward(d_p1, c.h1.height, c.h1.width);
    Grid d_z1 = d_h1;
    for (std::size_t i = 0; i < d_z1.data.size(); ++i) d_z1.data[i] *= silu_grad(c.z1.data[i]);
    conv3x3_backward(x, P.find("conv1.weight"), P.find("conv1.bias"), d_z1);
}

void TinyDenoiserForward::vector_backward(TinyDenoiser& m, const Grid& x,
                                          std::optional<int> label, const VectorCache& c,
                                          const Grid& d_eps) {
    const DenoiserConfig& cfg = m.config();
    ParamSet& P = m.params();

    Tensor& wo = P.find("out.weight");
    Tensor& bo = P.find("out.bias");
    std::vector<double> d_h2(cfg.hidden, 0.0);
    for (std::size_t i = 0; i < cfg.vector_dim; ++i) {
        const double g = d_eps.data[i];
        bo.grad[i] += g;
        for (std::size_t j = 0; j < cfg.hidden; ++j) {
            wo.grad[i * cfg.hidden + j] += g * c.h2[j];
            d_h2[j] += g * wo.value[i * cfg.hidden + j];
        }
    }
    std::vector<double> d_z2(cfg.hidden);
    for (std::size_t i = 0; i < cfg.hidden; ++i) d_z2[i] = d_h2[i] * silu_grad(c.z2[i]);

    Tensor& w2 = P.find("fc2.weight");
    Tensor& b2 = P.find("fc2.bias");
    std::vector<double> d_h1(cfg.hidden, 0.0);
    for (std::size_t i = 0; i < cfg.hidden; ++i) {
        const double g = d_z2[i];
        b2.grad[i] += g;
        for (std::size_t j = 0; j < cfg.hidden; ++j) {
            w2.grad[i * cfg.hidden + j] += g * c.h1[j];
            d_h1[j] += g * w2.value[i * cfg.hidden + j];
        }
    }
    std::vector<double> d_z1(cfg.hidden);
    for (std::size_t i = 0; i < cfg.hidden; ++i) d_z1[i] = d_h1[i] * silu_grad(c.z1[i]);

    Tensor& w1 = P.find("fc1.weight");
    Tensor& b1 = P.find("fc1.bias");
    Tensor& wt = P.find("temb.weight");
    for (std::size_t i = 0; i < cfg.hidden; ++i) {
        const double g = d_z1[i];
        b1.grad[i] += g;
        for (std::size_t j = 0; j < cfg.vector_dim; ++j) {
            w1.grad[i * cfg.vector_dim + j] += g * x.data[j];
        }
        for (std::size_t e = 0; e < cfg.time_embed; ++e) {
            wt.grad[i * cfg.time_embed + e] += g * c.temb[e];
        }
        if (label) P.find("class.embed").grad[*label * cfg.hidden + i] += g;
    }
}

DenoiserOutput TinyDenoiser::evaluate(const Grid& x, std::size_t t,
                                      std::optional<int> label) const {
    if (label && cfg_.num_classes == 0) {
        throw CapabilityError("TinyDenoiser: model is not class-conditional");
    }
    return cfg_.is_vector() ? TinyDenoiserForward::vector_forward(*this, x, t, label, nullptr)
                            : TinyDenoiserForward::image_forward(*this, x, t, label, nullptr);
}

Grid TinyDenoiser::forward_backward(const Grid& x, std::size_t t, std::optional<int> label,
                                    const Grid& grad_eps) {
    if (cfg_.is_vector()) {
        VectorCache cache;
        DenoiserOutput out = TinyDenoiserForward::vector_forward(*this, x, t, label, &cache);
        TinyDenoiserForward::vector_backward(*this, x, label, cache, grad_eps);
        return std::move(out.eps);
    }
    ImageCache cache;
    DenoiserOutput out = TinyDenoiserForward::image_forward(*this, x, t, label, &cache);
    TinyDenoiserForward::image_backward(*this, x, label, cache, grad_eps);
    return std::move(out.eps);
}

// ---------------------------------------------------------------------------
// training

double batch_gradients(TinyDenoiser& model, const std::vector<TrainExample>& batch,
                       const NoiseSchedule& sched) {
    if (batch.empty()) throw std::invalid_argument("batch_gradients: empty batch");
    std::size_t elements = 0;
    for (const TrainExample& ex : batch) elements += ex.eps.size();

    double loss = 0.0;
    for (const TrainExample& ex : batch) {
        const Grid x_t = forward_diffuse(ex.x0, ex.t, ex.eps, sched);
        // dL/deps_hat = 2 (eps_hat - eps) / elements
        const DenoiserOutput out = model.evaluate(x_t, ex.t, ex.label);
        Grid d_eps = out.eps;
        for (std::size_t i = 0; i < d_eps.data.size(); ++i) {
            const double r = out.eps.data[i] - ex.eps.data[i];
            loss += r * r;
            d_eps.data[i] = 2.0 * r / static_cast<double>(elements);
        }
        model.forward_backward(x_t, ex.t, ex.label, d_eps);
    }
    return loss / static_cast<double>(elements);
}

TrainResult train(TinyDenoiser& model, const LabeledDataset& dataset,
                  const NoiseSchedule& sched, const TrainOptions& opts, RngStream rng) {
    if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
    if (opts.class_drop_prob < 0.0 || opts.class_drop_prob > 1.0) {
        throw std::invalid_argument("train: class_drop_prob must be in [0, 1]");
    }
    TrainResult result;
    result.loss_trace.reserve(opts.steps);

    for (std::size_t step = 0; step < opts.steps; ++step) {
        std::vector<TrainExample> batch;
        batch.reserve(opts.batch_size);
        for (std::size_t b = 0; b < opts.batch_size; ++b) {
            const auto& [x0, label] = dataset[rng.below(dataset.size())];
            TrainExample ex;
            ex.x0 = x0;
            ex.t = 1 + rng.below(sched.T);
            ex.eps = Grid(x0.channels, x0.height, x0.width);
            for (double& v : ex.eps.data) v = rng.normal();
            ex.label = label;
            if (ex.label && rng.bernoulli(opts.class_drop_prob)) ex.label.reset();
            batch.push_back(std::move(ex));
        }

        model.params().zero_grad();
        const double loss = batch_gradients(model, batch, sched);
        if (!std::isfinite(loss)) {
            throw DivergenceError(step, "train: non-finite loss at step " + std::to_string(step));
        }
        result.loss_trace.push_back(loss);

        for (Tensor& t : model.params().tensors) {
            for (std::size_t i = 0; i < t.size(); ++i) {
                t.value[i] -= opts.learning_rate * t.grad[i];
            }
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// checkpoints: concatenated tensor dumps plus a (name, shape, offset) manifest

void TinyDenoiser::save_checkpoint(const std::string& payload_path,
                                   const std::string& manifest_path) const {
    std::ofstream payload(payload_path, std::ios::binary);
    if (!payload) throw std::runtime_error("save_checkpoint: cannot open " + payload_path);
    std::ostringstream manifest;
    for (const Tensor& t : params_.tensors) {
        const std::uint64_t offset = static_cast<std::uint64_t>(payload.tellp());
        std::vector<std::uint32_t> dims;
        for (std::size_t d : t.shape) dims.push_back(static_cast<std::uint32_t>(d));
        write_tensor(payload, dims, t.value);
        manifest << t.name << ' ';
        for (std::size_t i = 0; i < t.shape.size(); ++i) {
            manifest << (i ? "x" : "") << t.shape[i];
        }
        manifest << ' ' << offset << '\n';
    }
    write_text_file(manifest_path, manifest.str());
}

TinyDenoiser TinyDenoiser::load_checkpoint(const std::string& payload_path,
                                           const std::string& manifest_path) {
    struct Entry {
        std::string name;
        std::vector<std::size_t> shape;
        std::uint64_t offset;
    };
    std::vector<Entry> entries;
    std::istringstream manifest(read_text_file(manifest_path));
    std::string line;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        Entry e;
        std::string shape_str;
        ls >> e.name >> shape_str >> e.offset;
        if (!ls) throw std::runtime_error("load_checkpoint: malformed manifest line: " + line);
        std::size_t pos = 0;
        while (pos < shape_str.size()) {
            const std::size_t next = shape_str.find('x', pos);
            const std::string tok = shape_str.substr(pos, next == std::string::npos
                                                              ? std::string::npos
                                                              : next - pos);
            e.shape.push_back(static_cast<std::size_t>(std::stoull(tok)));
            if (next == std::string::npos) break;
            pos = next + 1;
        }
        entries.push_back(std::move(e));
    }

    std::ifstream payload(payload_path, std::ios::binary);
    if (!payload) throw std::runtime_error("load_checkpoint: cannot open " + payload_path);

    auto find_entry = [&](const std::string& name) -> const Entry* {
        for (const Entry& e : entries) {
            if (e.name == name) return &e;
        }
        return nullptr;
    };

    DenoiserConfig cfg;
    if (const Entry* fc1 = find_entry("fc1.weight")) {
        cfg.vector_dim = fc1->shape[1];
        cfg.hidden = fc1->shape[0];
        cfg.time_embed = find_entry("temb.weight")->shape[1];
    } else if (const Entry* conv1 = find_entry("conv1.weight")) {
        cfg.base_channels = conv1->shape[0];
        cfg.in_channels = conv1->shape[1];
        cfg.mid_channels = find_entry("conv2.weight")->shape[0];
        cfg.heads = find_entry("attn.wq")->shape[0];
        cfg.time_embed = find_entry("temb.weight")->shape[1];
    } else {
        throw std::runtime_error("load_checkpoint: manifest has neither conv1 nor fc1 weights");
    }
    if (const Entry* ce = find_entry("class.embed")) cfg.num_classes = ce->shape[0];

    TinyDenoiser model(cfg, RngStream(0));
    for (Tensor& t : model.params_.tensors) {
        const Entry* e = find_entry(t.name);
        if (!e) throw std::runtime_error("load_checkpoint: missing tensor " + t.name);
        if (e->shape != t.shape) {
            throw std::runtime_error("load_checkpoint: shape mismatch for " + t.name);
        }
        payload.seekg(static_cast<std::streamoff>(e->offset));
        const TensorBlob blob = read_tensor(payload);
        if (blob.values.size() != t.value.size()) {
            throw std::runtime_error("load_checkpoint: payload size mismatch for " + t.name);
        }
        t.value = blob.values;
    }
    return model;
}

}  // namespace glab
