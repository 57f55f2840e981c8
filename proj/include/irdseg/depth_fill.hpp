#pragma once

#include <cstddef>
#include <vector>

#include "irdseg/tensor.hpp"

namespace irdseg {

enum class Neighborhood { four, eight };

struct NeighborWeight {
    int dy;
    int dx;
    double weight;
};

// Intensity-affinity weights of the in-bounds neighbors of (y, x):
// exp(-(I(p)-I(q))^2 / (2*sigma_p^2)) with sigma_p^2 the 3x3-window variance
// at p (floored at 1e-6), normalized to sum to 1.
std::vector<NeighborWeight> neighbor_weights(const Tensor& ir, std::size_t y, std::size_t x,
                                             Neighborhood nb = Neighborhood::four);

// Symmetric positive-definite system over the missing pixels, row-compressed.
struct SparseSystem {
    std::size_t n = 0;
    std::vector<std::size_t> row_ptr;   // n+1 entries
    std::vector<std::size_t> col_idx;
    std::vector<double> values;
    std::vector<double> rhs;
    std::vector<std::size_t> unknown_pixels;  // flat pixel index per unknown

    std::vector<double> multiply(const std::vector<double>& x) const;
};

// Assembles the filling equations: each missing pixel ties to its neighbors
// with symmetrized intensity affinities; observed neighbors move to the
// right-hand side. Throws UnsolvableComponentError for a hole component with
// no observed boundary.
SparseSystem build_system(const Tensor& depth, const Tensor& ir, const Tensor& mask,
                          Neighborhood nb = Neighborhood::four);

// Conjugate gradients to relative residual ||Ax-b||/||b|| <= tol.
// max_iter 0 means 10*n. Optional Jacobi preconditioning.
std::vector<double> cg_solve(const SparseSystem& system, double tol = 1e-8,
                             std::size_t max_iter = 0, bool jacobi = false);

// Replaces missing pixels with the system solution; observed pixels pass
// through bit-exactly.
Tensor fill_depth(const Tensor& depth, const Tensor& ir, Neighborhood nb = Neighborhood::four,
                  double tol = 1e-8);

}  // namespace irdseg
