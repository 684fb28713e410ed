#pragma once

#include <cstddef>
#include <vector>

#include "glab/matrix.hpp"

namespace glab {

// Symmetric matrix; only the upper triangle is stored, so symmetry is exact
// by construction.
struct SymMatrix {
    std::size_t dim = 0;
    std::vector<double> upper;  // row-major upper triangle incl. diagonal

    SymMatrix() = default;
    explicit SymMatrix(std::size_t d) : dim(d), upper(d * (d + 1) / 2, 0.0) {}

    static SymMatrix identity(std::size_t d);
    static SymMatrix from_dense(const Matrix& m);  // averages m and m^T

    std::size_t index(std::size_t r, std::size_t c) const {
        if (r > c) { const std::size_t t = r; r = c; c = t; }
        return r * dim - r * (r + 1) / 2 + c;
    }
    double& at(std::size_t r, std::size_t c) { return upper[index(r, c)]; }
    double at(std::size_t r, std::size_t c) const { return upper[index(r, c)]; }

    Matrix dense() const;
    double trace() const;
};

struct EigenDecomposition {
    std::vector<double> values;  // descending
    Matrix vectors;              // orthonormal columns, vectors.col(i) <-> values[i]
};

// Cyclic Jacobi; dim <= 64 per contract. Throws std::runtime_error if the
// sweep limit is hit before the off-diagonal norm converges.
EigenDecomposition sym_eig(const SymMatrix& m);

// V diag(f(lambda)) V^T for a scalar map applied to the spectrum.
Matrix spectral_map(const EigenDecomposition& e, double (*f)(double));

}  // namespace glab
