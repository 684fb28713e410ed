#include "glab/eval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "glab/numerics.hpp"
#include "glab/parallel.hpp"

namespace glab {

namespace {

double pair_distance(const Grid& a, const Grid& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        s += d * d;
    }
    return std::sqrt(s);
}

// Mean pairwise distance between two sets, all pairs, deterministic reduce.
double mean_cross_distance(const std::vector<Grid>& a, const std::vector<Grid>& b) {
    std::vector<double> row_sums(a.size(), 0.0);
    parallel_for(a.size(), [&](std::size_t i) {
        double s = 0.0;
        for (const Grid& y : b) s += pair_distance(a[i], y);
        row_sums[i] = s;
    });
    double total = 0.0;
    for (double s : row_sums) total += s;
    return total / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
}

}  // namespace

double energy_distance(const std::vector<Grid>& a, const std::vector<Grid>& b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("energy_distance: empty set");
    if (!a[0].same_shape(b[0])) throw std::invalid_argument("energy_distance: dim mismatch");
    const double cross = mean_cross_distance(a, b);
    const double within_a = mean_cross_distance(a, a);
    const double within_b = mean_cross_distance(b, b);
    return 2.0 * cross - within_a - within_b;
}

GaussianFit fit_gaussian(const std::vector<Grid>& samples) {
    if (samples.empty()) throw std::invalid_argument("fit_gaussian: empty set");
    const std::size_t d = samples[0].size();
    GaussianFit fit;
    fit.mean.assign(d, 0.0);
    for (const Grid& g : samples) {
        for (std::size_t i = 0; i < d; ++i) fit.mean[i] += g.data[i];
    }
    for (double& m : fit.mean) m /= static_cast<double>(samples.size());
    fit.cov = SymMatrix(d);
    for (const Grid& g : samples) {
        for (std::size_t i = 0; i < d; ++i) {
            const double di = g.data[i] - fit.mean[i];
            for (std::size_t j = i; j < d; ++j) {
                fit.cov.at(i, j) += di * (g.data[j] - fit.mean[j]);
            }
        }
    }
    const double denom = static_cast<double>(samples.size() > 1 ? samples.size() - 1 : 1);
    for (double& v : fit.cov.upper) v /= denom;
    return fit;
}

double frechet_gaussian(const std::vector<double>& mu_a, const SymMatrix& cov_a,
                        const std::vector<double>& mu_b, const SymMatrix& cov_b) {
    const std::size_t d = mu_a.size();
    if (mu_b.size() != d || cov_a.dim != d || cov_b.dim != d) {
        throw std::invalid_argument("frechet_gaussian: dimension mismatch");
    }
    auto check_psd = [](const EigenDecomposition& e) {
        for (double lam : e.values) {
            if (lam < -1e-8) {
                throw std::invalid_argument("frechet_gaussian: covariance not PSD");
            }
        }
    };
    const EigenDecomposition ea = sym_eig(cov_a);
    check_psd(ea);
    check_psd(sym_eig(cov_b));

    double mean_term = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        const double diff = mu_a[i] - mu_b[i];
        mean_term += diff * diff;
    }

    // sqrt(Sa) Sb sqrt(Sa), then the trace of its square root
    const Matrix root_a =
        spectral_map(ea, [](double lam) { return std::sqrt(std::max(lam, 0.0)); });
    const Matrix inner = matmul(matmul(root_a, cov_b.dense()), root_a);
    const EigenDecomposition ei = sym_eig(SymMatrix::from_dense(inner));
    double trace_root = 0.0;
    for (double lam : ei.values) trace_root += std::sqrt(std::max(lam, 0.0));

    return mean_term + cov_a.trace() + cov_b.trace() - 2.0 * trace_root;
}

std::vector<double> PcaBasis::project(const Grid& g) const {
    const std::size_t d = mean.size(), k = components.cols;
    std::vector<double> out(k, 0.0);
    for (std::size_t j = 0; j < k; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < d; ++i) s += (g.data[i] - mean[i]) * components(i, j);
        out[j] = s;
    }
    return out;
}

std::vector<Grid> PcaBasis::project_all(const std::vector<Grid>& samples) const {
    std::vector<Grid> out;
    out.reserve(samples.size());
    for (const Grid& g : samples) {
        Grid v = Grid::make_vector(components.cols);
        v.data = project(g);
        out.push_back(std::move(v));
    }
    return out;
}

PcaBasis fit_pca(const std::vector<Grid>& samples, std::size_t k) {
    if (samples.empty()) throw std::invalid_argument("fit_pca: empty set");
    const std::size_t d = samples[0].size();
    if (k > d) throw std::invalid_argument("fit_pca: k exceeds dimension");
    const GaussianFit fit = fit_gaussian(samples);
    const Matrix cov = fit.cov.dense();

    // orthogonal iteration from a fixed deterministic start
    Matrix q(d, k);
    for (std::size_t j = 0; j < k; ++j) q(j % d, j) = 1.0;
    for (int iter = 0; iter < 80; ++iter) {
        Matrix z = matmul(cov, q);
        // Gram-Schmidt
        for (std::size_t j = 0; j < k; ++j) {
            for (std::size_t p = 0; p < j; ++p) {
                double proj = 0.0;
                for (std::size_t i = 0; i < d; ++i) proj += z(i, j) * z(i, p);
                for (std::size_t i = 0; i < d; ++i) z(i, j) -= proj * z(i, p);
            }
            double norm = 0.0;
            for (std::size_t i = 0; i < d; ++i) norm += z(i, j) * z(i, j);
            norm = std::sqrt(norm);
            if (norm < 1e-12) {
                // degenerate direction; restart it off a coordinate axis
                for (std::size_t i = 0; i < d; ++i) z(i, j) = (i == (iter + j) % d) ? 1.0 : 0.0;
                norm = 1.0;
            }
            for (std::size_t i = 0; i < d; ++i) z(i, j) /= norm;
        }
        q = std::move(z);
    }
    PcaBasis basis;
    basis.mean = fit.mean;
    basis.components = std::move(q);
    return basis;
}

FrequencyProfile frequency_analysis(const std::vector<Grid>& images,
                                    const std::vector<Grid>& attention, std::size_t patch_size,
                                    double psi) {
    if (images.size() != attention.size()) {
        throw std::invalid_argument("frequency_analysis: images/attention size mismatch");
    }
    FrequencyProfile profile;
    profile.patch_size = patch_size;
    profile.psi = psi;
    profile.bins_all.assign(kRadialBins, 0.0);
    profile.bins_masked.assign(kRadialBins, 0.0);
    std::vector<std::size_t> count_all(kRadialBins, 0), count_masked(kRadialBins, 0);

    const double r_max =
        std::sqrt(2.0) * static_cast<double>(patch_size) / 2.0 + 1e-9;
    Grid patch(1, patch_size, patch_size);

    for (std::size_t s = 0; s < images.size(); ++s) {
        const Grid& img = images[s];
        const Grid& attn = attention[s];
        if (attn.height != img.height || attn.width != img.width) {
            throw std::invalid_argument("frequency_analysis: attention resolution mismatch");
        }
        if (img.height % patch_size != 0 || img.width % patch_size != 0) continue;
        for (std::size_t py = 0; py + patch_size <= img.height; py += patch_size) {
            for (std::size_t px = 0; px + patch_size <= img.width; px += patch_size) {
                double attn_mean = 0.0;
                for (std::size_t y = 0; y < patch_size; ++y) {
                    for (std::size_t x = 0; x < patch_size; ++x) {
                        patch.at(0, y, x) = img.at(0, py + y, px + x);
                        attn_mean += attn.at(0, py + y, px + x);
                    }
                }
                attn_mean /= static_cast<double>(patch_size * patch_size);
                const bool masked = attn_mean > psi;

                const Grid mag = dft_magnitude(patch);
                ++profile.patches_total;
                if (masked) ++profile.patches_masked;
                for (std::size_t u = 0; u < patch_size; ++u) {
                    for (std::size_t v = 0; v < patch_size; ++v) {
                        const double fu = static_cast<double>(
                            std::min(u, patch_size - u));
                        const double fv = static_cast<double>(
                            std::min(v, patch_size - v));
                        const double r = std::sqrt(fu * fu + fv * fv);
                        const std::size_t bin = std::min<std::size_t>(
                            kRadialBins - 1,
                            static_cast<std::size_t>(r / r_max * kRadialBins));
                        profile.bins_all[bin] += mag.at(0, u, v);
                        ++count_all[bin];
                        if (masked) {
                            profile.bins_masked[bin] += mag.at(0, u, v);
                            ++count_masked[bin];
                        }
                    }
                }
            }
        }
    }

    for (std::size_t b = 0; b < kRadialBins; ++b) {
        if (count_all[b] > 0) profile.bins_all[b] /= static_cast<double>(count_all[b]);
        if (count_masked[b] > 0) {
            profile.bins_masked[b] /= static_cast<double>(count_masked[b]);
        }
    }
    profile.pct_diff.assign(kRadialBins, std::nullopt);
    if (profile.patches_masked > 0) {
        for (std::size_t b = 0; b < kRadialBins; ++b) {
            if (profile.bins_all[b] > 1e-12) {
                profile.pct_diff[b] =
                    100.0 * (profile.bins_masked[b] - profile.bins_all[b]) / profile.bins_all[b];
            }
        }
    }
    return profile;
}

IouResult mask_iou(const Mask& attention_mask, const Mask& truth, RngStream& baseline_rng) {
    if (attention_mask.height != truth.height || attention_mask.width != truth.width) {
        throw std::invalid_argument("mask_iou: shape mismatch");
    }
    auto iou_of = [](const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b,
                     bool* empty_flag) {
        std::size_t inter = 0, uni = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            const bool ba = a[i] != 0, bb = b[i] != 0;
            inter += (ba && bb) ? 1 : 0;
            uni += (ba || bb) ? 1 : 0;
        }
        if (uni == 0) {
            if (empty_flag) *empty_flag = true;
            return 0.0;
        }
        return static_cast<double>(inter) / static_cast<double>(uni);
    };

    IouResult res;
    res.iou = iou_of(attention_mask.bits, truth.bits, &res.both_empty);

    const double fraction = attention_mask.fraction;
    double random_sum = 0.0;
    const int draws = 100;
    std::vector<std::uint8_t> random_bits(truth.bits.size());
    for (int k = 0; k < draws; ++k) {
        for (auto& b : random_bits) b = baseline_rng.bernoulli(fraction) ? 1 : 0;
        random_sum += iou_of(random_bits, truth.bits, nullptr);
    }
    res.random_iou = random_sum / draws;
    res.pct_diff = res.random_iou > 1e-12
                       ? 100.0 * (res.iou - res.random_iou) / res.random_iou
                       : 0.0;
    return res;
}

// ---------------------------------------------------------------------------
// procedural data

namespace {

struct Blob {
    double cy, cx, ry, rx, angle;
    int texture;       // 0: h stripes, 1: v stripes, 2: diagonal, 3: checker
    double amplitude;
    double phase;
    double freq;
};

bool inside(const Blob& b, double y, double x) {
    const double dy = y - b.cy, dx = x - b.cx;
    const double c = std::cos(b.angle), s = std::sin(b.angle);
    const double u = (c * dx + s * dy) / b.rx;
    const double v = (-s * dx + c * dy) / b.ry;
    return u * u + v * v <= 1.0;
}

double texture_value(const Blob& b, double y, double x) {
    const double pi = 3.14159265358979323846;
    switch (b.texture) {
        case 0:
            return b.amplitude * std::sin(2.0 * pi * b.freq * y + b.phase);
        case 1:
            return b.amplitude * std::sin(2.0 * pi * b.freq * x + b.phase);
        case 2:
            return b.amplitude * std::sin(2.0 * pi * b.freq * (x + y) * 0.70710678 + b.phase);
        default: {
            // checkerboard: Nyquist content in both axes
            const long iy = static_cast<long>(std::floor(y));
            const long ix = static_cast<long>(std::floor(x));
            return ((iy + ix) % 2 == 0 ? 1.0 : -1.0) * b.amplitude;
        }
    }
}

}  // namespace

std::vector<ProceduralSample> procedural_dataset(std::size_t n, RngStream rng,
                                                 const ProceduralSpec& spec) {
    if (n < 1) throw std::invalid_argument("procedural_dataset: n must be >= 1");
    const std::size_t h = spec.height, w = spec.width;
    std::vector<ProceduralSample> out;
    out.reserve(n);

    for (std::size_t s = 0; s < n; ++s) {
        RngStream local = rng.derive(0x7000 + s);
        ProceduralSample sample;
        sample.seed = local.stream_id;
        sample.label = local.bernoulli(0.5) ? 1 : 0;
        const int blobs = sample.label + 1;

        std::vector<std::uint8_t> bits(h * w, 0);
        std::vector<Blob> placed;
        double fraction = 0.0;
        for (int attempt = 0; attempt < 64; ++attempt) {
            std::fill(bits.begin(), bits.end(), 0);
            placed.clear();
            for (int bidx = 0; bidx < blobs; ++bidx) {
                Blob b;
                b.cy = (0.25 + 0.5 * local.uniform01()) * static_cast<double>(h);
                b.cx = (0.25 + 0.5 * local.uniform01()) * static_cast<double>(w);
                b.ry = 2.0 + 2.8 * local.uniform01();
                b.rx = 2.0 + 2.8 * local.uniform01();
                b.angle = 3.14159265358979323846 * local.uniform01();
                b.texture = static_cast<int>(local.below(4));
                b.amplitude = 0.5 + 0.4 * local.uniform01();
                b.phase = 6.28318530717958648 * local.uniform01();
                b.freq = 0.25 + 0.25 * local.uniform01();  // cycles per pixel
                placed.push_back(b);
            }
            std::size_t covered = 0;
            for (std::size_t y = 0; y < h; ++y) {
                for (std::size_t x = 0; x < w; ++x) {
                    for (const Blob& b : placed) {
                        if (inside(b, static_cast<double>(y), static_cast<double>(x))) {
                            bits[y * w + x] = 1;
                            ++covered;
                            break;
                        }
                    }
                }
            }
            fraction = static_cast<double>(covered) / static_cast<double>(h * w);
            if (fraction >= spec.min_foreground && fraction <= spec.max_foreground) break;
        }

        // smooth background: base level plus a gentle plane
        const double base = -0.4 + 0.5 * local.uniform01();
        const double gy = -0.3 + 0.6 * local.uniform01();
        const double gx = -0.3 + 0.6 * local.uniform01();
        sample.image = Grid(1, h, w);
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                double v = base + gy * (static_cast<double>(y) / h - 0.5) +
                           gx * (static_cast<double>(x) / w - 0.5);
                if (bits[y * w + x]) {
                    for (const Blob& b : placed) {
                        if (inside(b, static_cast<double>(y), static_cast<double>(x))) {
                            v += texture_value(b, static_cast<double>(y),
                                               static_cast<double>(x));
                            break;
                        }
                    }
                }
                sample.image.at(0, y, x) = v;
            }
        }
        // mild per-sample defocus on a share of the data keeps blurred inputs
        // on-manifold, which blur-based guidance presumes
        if (spec.soft_focus_prob > 0.0 && local.bernoulli(spec.soft_focus_prob)) {
            const double sf = 0.3 + (spec.soft_focus_max_sigma - 0.3) * local.uniform01();
            sample.image = blur(sample.image, sf);
        }
        for (double& v : sample.image.data) v = std::clamp(v, -1.0, 1.0);
        sample.foreground = Mask::from_bits(h, w, std::move(bits));
        out.push_back(std::move(sample));
    }
    return out;
}

}  // namespace glab
