#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace glab {

// Dense rank-<=3 real array in row-major (channel, row, col) order.
// Vectors are stored as (dim, 1, 1).
struct Grid {
    std::size_t channels = 0;
    std::size_t height   = 0;
    std::size_t width    = 0;
    std::vector<double> data;

    Grid() = default;
    Grid(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
        : channels(c), height(h), width(w), data(c * h * w, fill) {}

    static Grid make_vector(std::size_t dim, double fill = 0.0) { return Grid(dim, 1, 1, fill); }

    std::size_t size() const { return channels * height * width; }
    bool is_vector() const { return height == 1 && width == 1; }
    bool same_shape(const Grid& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }

    double& at(std::size_t c, std::size_t y, std::size_t x) {
        return data[(c * height + y) * width + x];
    }
    double at(std::size_t c, std::size_t y, std::size_t x) const {
        return data[(c * height + y) * width + x];
    }
    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    bool all_finite() const;
};

// Elementwise arithmetic; shapes must match (throws std::invalid_argument).
Grid operator+(const Grid& a, const Grid& b);
Grid operator-(const Grid& a, const Grid& b);
Grid operator*(double s, const Grid& a);
Grid& operator+=(Grid& a, const Grid& b);
Grid hadamard(const Grid& a, const Grid& b);

double dot(const Grid& a, const Grid& b);
double l2_norm(const Grid& a);
double mean(const Grid& a);
double variance(const Grid& a);
double max_abs_diff(const Grid& a, const Grid& b);

void require_same_shape(const Grid& a, const Grid& b, const char* where);

// Binary tensor dump: magic "GLAB", version u16, rank u8, dims u32 each,
// payload 32-bit IEEE-754 little-endian, row-major.
struct TensorBlob {
    std::vector<std::uint32_t> dims;
    std::vector<double> values;  // widened from the f32 payload
};

void write_tensor(std::ostream& os, const std::vector<std::uint32_t>& dims,
                  const std::vector<double>& values);
TensorBlob read_tensor(std::istream& is);

void save_grid(const std::string& path, const Grid& g);
Grid load_grid(const std::string& path);

}  // namespace glab
