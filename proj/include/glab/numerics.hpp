#pragma once

#include <vector>

#include "glab/grid.hpp"
#include "glab/rng.hpp"

namespace glab {

// Normalized 1-D Gaussian kernel, truncation radius ceil(3*sigma).
// Throws std::invalid_argument for non-positive or non-finite sigma.
std::vector<double> gaussian_kernel(double sigma);

// Separable Gaussian blur per channel with reflect border padding.
// sigma == 0 returns x unchanged; sigma == +inf fills each channel with its
// mean ("average pixel" degenerate mode). Negative sigma is rejected.
Grid blur(const Grid& x, double sigma);

// 2-D DFT magnitudes of a single-channel square patch, DC at (0,0).
// Side must be 8, 16, or 32.
Grid dft_magnitude(const Grid& patch);

// Deterministic Gaussian grid draw from the stream.
Grid standard_normal(RngStream& rng, std::size_t channels, std::size_t height,
                     std::size_t width);

}  // namespace glab
