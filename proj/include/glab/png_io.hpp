#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "glab/attention_mask.hpp"
#include "glab/grid.hpp"

namespace glab {

// 8-bit grayscale PNG (stored-deflate zlib stream; byte-identical per input).
void write_png_gray(const std::string& path, std::size_t height, std::size_t width,
                    const std::vector<std::uint8_t>& pixels);

// Channel 0 of the grid, clamped to [-1, 1] and mapped linearly to [0, 255].
void save_image_png(const std::string& path, const Grid& g);

// Linear gray heatmap, min -> 0, max -> 255 (flat fields render black).
void save_heatmap_png(const std::string& path, const std::vector<double>& values,
                      std::size_t height, std::size_t width);
void save_mask_png(const std::string& path, const Mask& mask);

// Row-major montage of equally sized single-channel grids.
void save_grid_montage_png(const std::string& path, const std::vector<Grid>& tiles,
                           std::size_t columns);

// Horizontal bar strip: one column block per value, height proportional to
// |value|, white above the midline for positive and gray below for negative.
void save_bar_strip_png(const std::string& path, const std::vector<double>& values);

}  // namespace glab
