#include "glab/numerics.hpp"

#include <cmath>
#include <stdexcept>

namespace glab {

std::vector<double> gaussian_kernel(double sigma) {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) {
        throw std::invalid_argument("gaussian_kernel: sigma must be positive and finite");
    }
    const long radius = static_cast<long>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (long i = -radius; i <= radius; ++i) {
        const double w = std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma));
        k[i + radius] = w;
        sum += w;
    }
    for (double& w : k) w /= sum;
    return k;
}

namespace {

// Reflect (symmetric) fold of an index into [0, n).
std::size_t fold(long i, long n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - 1 - i;
    }
    return static_cast<std::size_t>(i);
}

void convolve_line(const double* src, double* dst, long n, long stride,
                   const std::vector<double>& kernel) {
    const long radius = static_cast<long>(kernel.size() / 2);
    for (long i = 0; i < n; ++i) {
        double acc = 0.0;
        for (long k = -radius; k <= radius; ++k) {
            acc += kernel[k + radius] * src[fold(i + k, n) * stride];
        }
        dst[i * stride] = acc;
    }
}

}  // namespace

Grid blur(const Grid& x, double sigma) {
    if (sigma < 0.0 || std::isnan(sigma)) {
        throw std::invalid_argument("blur: sigma must be non-negative");
    }
    if (!x.all_finite()) throw std::invalid_argument("blur: input must be finite");
    if (sigma == 0.0) return x;
    if (std::isinf(sigma)) {
        Grid out = x;
        const std::size_t hw = x.height * x.width;
        for (std::size_t c = 0; c < x.channels; ++c) {
            double m = 0.0;
            for (std::size_t i = 0; i < hw; ++i) m += x.data[c * hw + i];
            m /= static_cast<double>(hw);
            for (std::size_t i = 0; i < hw; ++i) out.data[c * hw + i] = m;
        }
        return out;
    }

    const std::vector<double> kernel = gaussian_kernel(sigma);
    Grid tmp = x;
    Grid out = x;
    const long h = static_cast<long>(x.height);
    const long w = static_cast<long>(x.width);
    for (std::size_t c = 0; c < x.channels; ++c) {
        const std::size_t base = c * x.height * x.width;
        // horizontal pass
        for (long y = 0; y < h; ++y) {
            convolve_line(x.data.data() + base + y * w, tmp.data.data() + base + y * w, w, 1,
                          kernel);
        }
        // vertical pass
        for (long col = 0; col < w; ++col) {
            convolve_line(tmp.data.data() + base + col, out.data.data() + base + col, h, w,
                          kernel);
        }
    }
    return out;
}

Grid dft_magnitude(const Grid& patch) {
    if (patch.channels != 1 || patch.height != patch.width) {
        throw std::invalid_argument("dft_magnitude: patch must be a single-channel square");
    }
    const std::size_t n = patch.height;
    if (n != 8 && n != 16 && n != 32) {
        throw std::invalid_argument("dft_magnitude: side must be 8, 16, or 32");
    }

    // Twiddle table over k*j mod n keeps the angles exact for large products.
    std::vector<double> cos_tab(n * n), sin_tab(n * n);
    const double two_pi = 2.0 * 3.14159265358979323846;
    for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t j = 0; j < n; ++j) {
            const double ang = two_pi * static_cast<double>(k * j % n) / static_cast<double>(n);
            cos_tab[k * n + j] = std::cos(ang);
            sin_tab[k * n + j] = std::sin(ang);
        }
    }

    // 1-D transforms along rows, then along columns.
    std::vector<double> re_r(n * n, 0.0), im_r(n * n, 0.0);
    for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t v = 0; v < n; ++v) {
            double re = 0.0, im = 0.0;
            for (std::size_t xcol = 0; xcol < n; ++xcol) {
                const double val = patch.at(0, y, xcol);
                re += val * cos_tab[v * n + xcol];
                im -= val * sin_tab[v * n + xcol];
            }
            re_r[y * n + v] = re;
            im_r[y * n + v] = im;
        }
    }
    Grid mag(1, n, n);
    for (std::size_t u = 0; u < n; ++u) {
        for (std::size_t v = 0; v < n; ++v) {
            double re = 0.0, im = 0.0;
            for (std::size_t y = 0; y < n; ++y) {
                const double c = cos_tab[u * n + y];
                const double s = sin_tab[u * n + y];
                re += re_r[y * n + v] * c + im_r[y * n + v] * s;
                im += im_r[y * n + v] * c - re_r[y * n + v] * s;
            }
            mag.at(0, u, v) = std::sqrt(re * re + im * im);
        }
    }
    return mag;
}

Grid standard_normal(RngStream& rng, std::size_t channels, std::size_t height,
                     std::size_t width) {
    Grid g(channels, height, width);
    for (double& v : g.data) v = rng.normal();
    return g;
}

}  // namespace glab
