#include "glab/grid.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace glab {

bool Grid::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void require_same_shape(const Grid& a, const Grid& b, const char* where) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(where) + ": shape mismatch (" +
                                    std::to_string(a.channels) + "x" + std::to_string(a.height) +
                                    "x" + std::to_string(a.width) + " vs " +
                                    std::to_string(b.channels) + "x" + std::to_string(b.height) +
                                    "x" + std::to_string(b.width) + ")");
    }
}

Grid operator+(const Grid& a, const Grid& b) {
    require_same_shape(a, b, "Grid::operator+");
    Grid r = a;
    for (std::size_t i = 0; i < r.data.size(); ++i) r.data[i] += b.data[i];
    return r;
}

Grid operator-(const Grid& a, const Grid& b) {
    require_same_shape(a, b, "Grid::operator-");
    Grid r = a;
    for (std::size_t i = 0; i < r.data.size(); ++i) r.data[i] -= b.data[i];
    return r;
}

Grid operator*(double s, const Grid& a) {
    Grid r = a;
    for (double& v : r.data) v *= s;
    return r;
}

Grid& operator+=(Grid& a, const Grid& b) {
    require_same_shape(a, b, "Grid::operator+=");
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
    return a;
}

Grid hadamard(const Grid& a, const Grid& b) {
    require_same_shape(a, b, "hadamard");
    Grid r = a;
    for (std::size_t i = 0; i < r.data.size(); ++i) r.data[i] *= b.data[i];
    return r;
}

double dot(const Grid& a, const Grid& b) {
    require_same_shape(a, b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

double l2_norm(const Grid& a) { return std::sqrt(dot(a, a)); }

double mean(const Grid& a) {
    if (a.data.empty()) return 0.0;
    double s = 0.0;
    for (double v : a.data) s += v;
    return s / static_cast<double>(a.data.size());
}

double variance(const Grid& a) {
    if (a.data.empty()) return 0.0;
    const double m = mean(a);
    double s = 0.0;
    for (double v : a.data) s += (v - m) * (v - m);
    return s / static_cast<double>(a.data.size());
}

double max_abs_diff(const Grid& a, const Grid& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        m = std::max(m, std::abs(a.data[i] - b.data[i]));
    }
    return m;
}

namespace {

constexpr char kMagic[4] = {'G', 'L', 'A', 'B'};
constexpr std::uint16_t kVersion = 1;

void put_u16(std::ostream& os, std::uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                                static_cast<unsigned char>(v >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint16_t get_u16(std::istream& is) {
    unsigned char b[2];
    is.read(reinterpret_cast<char*>(b), 2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

void put_f32(std::ostream& os, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(os, bits);
}

float get_f32(std::istream& is) {
    const std::uint32_t bits = get_u32(is);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

}  // namespace

void write_tensor(std::ostream& os, const std::vector<std::uint32_t>& dims,
                  const std::vector<double>& values) {
    std::size_t n = 1;
    for (std::uint32_t d : dims) n *= d;
    if (n != values.size()) throw std::invalid_argument("write_tensor: dims/values mismatch");
    if (dims.size() > 255) throw std::invalid_argument("write_tensor: rank too large");
    os.write(kMagic, 4);
    put_u16(os, kVersion);
    const unsigned char rank = static_cast<unsigned char>(dims.size());
    os.write(reinterpret_cast<const char*>(&rank), 1);
    for (std::uint32_t d : dims) put_u32(os, d);
    for (double v : values) put_f32(os, static_cast<float>(v));
}

TensorBlob read_tensor(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) {
        throw std::runtime_error("read_tensor: bad magic");
    }
    const std::uint16_t version = get_u16(is);
    if (version != kVersion) throw std::runtime_error("read_tensor: unsupported version");
    unsigned char rank = 0;
    is.read(reinterpret_cast<char*>(&rank), 1);
    TensorBlob blob;
    blob.dims.resize(rank);
    std::size_t n = 1;
    for (auto& d : blob.dims) {
        d = get_u32(is);
        n *= d;
    }
    blob.values.resize(n);
    for (auto& v : blob.values) v = static_cast<double>(get_f32(is));
    if (!is) throw std::runtime_error("read_tensor: truncated stream");
    return blob;
}

void save_grid(const std::string& path, const Grid& g) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_grid: cannot open " + path);
    write_tensor(os,
                 {static_cast<std::uint32_t>(g.channels), static_cast<std::uint32_t>(g.height),
                  static_cast<std::uint32_t>(g.width)},
                 g.data);
}

Grid load_grid(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_grid: cannot open " + path);
    TensorBlob blob = read_tensor(is);
    if (blob.dims.size() != 3) throw std::runtime_error("load_grid: expected rank-3 tensor");
    Grid g(blob.dims[0], blob.dims[1], blob.dims[2]);
    g.data = std::move(blob.values);
    return g;
}

}  // namespace glab
