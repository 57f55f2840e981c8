#include "irdseg/depth_fill.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>
#include <string>

#include "irdseg/errors.hpp"
#include "irdseg/preprocess.hpp"

namespace irdseg {

namespace {

constexpr double kVarianceFloor = 1e-6;

const int kOffsets8[8][2] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1},
                             {-1, -1}, {-1, 1}, {1, -1}, {1, 1}};

std::size_t offset_count(Neighborhood nb) { return nb == Neighborhood::four ? 4 : 8; }

double window_variance(const Tensor& ir, std::size_t y, std::size_t x) {
    const std::size_t h = ir.extent(0);
    const std::size_t w = ir.extent(1);
    double sum = 0.0, sum_sq = 0.0;
    std::size_t count = 0;
    for (int dy = -1; dy <= 1; ++dy) {
        const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y) + dy;
        if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (int dx = -1; dx <= 1; ++dx) {
            const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(x) + dx;
            if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(w)) continue;
            const double v = ir.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
            sum += v;
            sum_sq += v * v;
            ++count;
        }
    }
    const double mean = sum / static_cast<double>(count);
    const double var = sum_sq / static_cast<double>(count) - mean * mean;
    return std::max(var, kVarianceFloor);
}

}  // namespace

std::vector<NeighborWeight> neighbor_weights(const Tensor& ir, std::size_t y, std::size_t x,
                                             Neighborhood nb) {
    if (ir.rank() != 2) throw std::invalid_argument("neighbor_weights: ir must be rank 2");
    const std::size_t h = ir.extent(0);
    const std::size_t w = ir.extent(1);
    if (y >= h || x >= w) throw std::invalid_argument("neighbor_weights: pixel out of range");

    const double sigma2 = window_variance(ir, y, x);
    const double center = ir.at(y, x);

    std::vector<NeighborWeight> weights;
    double total = 0.0;
    for (std::size_t k = 0; k < offset_count(nb); ++k) {
        const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y) + kOffsets8[k][0];
        const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(x) + kOffsets8[k][1];
        if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(h) || xx < 0 ||
            xx >= static_cast<std::ptrdiff_t>(w)) {
            continue;
        }
        const double diff = center - ir.at(static_cast<std::size_t>(yy),
                                           static_cast<std::size_t>(xx));
        const double u = std::exp(-(diff * diff) / (2.0 * sigma2));
        weights.push_back({kOffsets8[k][0], kOffsets8[k][1], u});
        total += u;
    }
    for (auto& nw : weights) nw.weight /= total;
    return weights;
}

std::vector<double> SparseSystem::multiply(const std::vector<double>& x) const {
    std::vector<double> y(n, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        double acc = 0.0;
        for (std::size_t k = row_ptr[r]; k < row_ptr[r + 1]; ++k) {
            acc += values[k] * x[col_idx[k]];
        }
        y[r] = acc;
    }
    return y;
}

namespace {

// Normalized weight of neighbor q as seen from p, looked up from a
// precomputed per-pixel table so that the symmetrized edge weight
// 0.5*(w_p(q) + w_q(p)) is computed identically from both ends.
struct WeightTable {
    std::size_t h, w;
    Neighborhood nb;
    std::vector<double> unnormalized;  // h*w*K, K = 4 or 8, 0 for out-of-bounds
    std::vector<double> norm;          // h*w

    double from(std::size_t p, std::size_t k) const {
        return unnormalized[p * offset_count(nb) + k] / norm[p];
    }
};

WeightTable build_weight_table(const Tensor& ir, Neighborhood nb) {
    const std::size_t h = ir.extent(0);
    const std::size_t w = ir.extent(1);
    const std::size_t K = offset_count(nb);
    WeightTable t{h, w, nb, std::vector<double>(h * w * K, 0.0), std::vector<double>(h * w, 0.0)};
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const double sigma2 = window_variance(ir, y, x);
            const double center = ir.at(y, x);
            const std::size_t p = y * w + x;
            double total = 0.0;
            for (std::size_t k = 0; k < K; ++k) {
                const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y) + kOffsets8[k][0];
                const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(x) + kOffsets8[k][1];
                if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(h) || xx < 0 ||
                    xx >= static_cast<std::ptrdiff_t>(w)) {
                    continue;
                }
                const double diff = center - ir.at(static_cast<std::size_t>(yy),
                                                   static_cast<std::size_t>(xx));
                const double u = std::exp(-(diff * diff) / (2.0 * sigma2));
                t.unnormalized[p * K + k] = u;
                total += u;
            }
            t.norm[p] = total > 0.0 ? total : 1.0;
        }
    }
    return t;
}

// Index of the reverse offset: pairs (0,1), (2,3), (4,7), (5,6).
std::size_t reverse_offset(std::size_t k) {
    static const std::size_t rev[8] = {1, 0, 3, 2, 7, 6, 5, 4};
    return rev[k];
}

}  // namespace

SparseSystem build_system(const Tensor& depth, const Tensor& ir, const Tensor& mask,
                          Neighborhood nb) {
    if (depth.rank() != 2 || !depth.same_shape(ir) || !depth.same_shape(mask)) {
        throw std::invalid_argument("build_system: depth/ir/mask must share one H x W shape");
    }
    const std::size_t h = depth.extent(0);
    const std::size_t w = depth.extent(1);
    const std::size_t K = offset_count(nb);

    std::vector<std::size_t> unknown_of_pixel(h * w, SIZE_MAX);
    std::vector<std::size_t> unknowns;
    for (std::size_t p = 0; p < h * w; ++p) {
        const bool missing = mask[p] != 0.0;
        if (missing != (depth[p] == 0.0)) {
            throw std::invalid_argument("build_system: mask must equal missing_mask(depth)");
        }
        if (missing) {
            unknown_of_pixel[p] = unknowns.size();
            unknowns.push_back(p);
        }
    }

    SparseSystem sys;
    sys.n = unknowns.size();
    sys.unknown_pixels = unknowns;
    sys.row_ptr.assign(sys.n + 1, 0);
    sys.rhs.assign(sys.n, 0.0);
    if (sys.n == 0) return sys;

    // Hole components sealed off from every observed pixel make the system
    // singular; report them instead of solving.
    {
        std::vector<char> visited(h * w, 0);
        for (std::size_t seed : unknowns) {
            if (visited[seed]) continue;
            std::vector<std::size_t> component;
            bool touches_known = false;
            std::deque<std::size_t> queue{seed};
            visited[seed] = 1;
            while (!queue.empty()) {
                const std::size_t p = queue.front();
                queue.pop_front();
                component.push_back(p);
                const std::size_t y = p / w, x = p % w;
                for (std::size_t k = 0; k < K; ++k) {
                    const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y) + kOffsets8[k][0];
                    const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(x) + kOffsets8[k][1];
                    if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(h) || xx < 0 ||
                        xx >= static_cast<std::ptrdiff_t>(w)) {
                        continue;
                    }
                    const std::size_t q = static_cast<std::size_t>(yy) * w +
                                          static_cast<std::size_t>(xx);
                    if (unknown_of_pixel[q] == SIZE_MAX) {
                        touches_known = true;
                    } else if (!visited[q]) {
                        visited[q] = 1;
                        queue.push_back(q);
                    }
                }
            }
            if (!touches_known) {
                std::vector<std::pair<std::size_t, std::size_t>> pixels;
                pixels.reserve(component.size());
                for (std::size_t p : component) pixels.emplace_back(p / w, p % w);
                throw UnsolvableComponentError(
                    "depth hole of " + std::to_string(component.size()) +
                        " pixels has no observed boundary",
                    std::move(pixels));
            }
        }
    }

    const WeightTable table = build_weight_table(ir, nb);

    std::vector<std::pair<std::size_t, double>> row;
    for (std::size_t r = 0; r < sys.n; ++r) {
        const std::size_t p = unknowns[r];
        const std::size_t y = p / w, x = p % w;
        row.clear();
        double diag = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y) + kOffsets8[k][0];
            const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(x) + kOffsets8[k][1];
            if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(h) || xx < 0 ||
                xx >= static_cast<std::ptrdiff_t>(w)) {
                continue;
            }
            const std::size_t q = static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx);
            const double s = 0.5 * (table.from(p, k) + table.from(q, reverse_offset(k)));
            diag += s;
            if (unknown_of_pixel[q] != SIZE_MAX) {
                row.emplace_back(unknown_of_pixel[q], -s);
            } else {
                sys.rhs[r] += s * depth[q];
            }
        }
        row.emplace_back(r, diag);
        std::sort(row.begin(), row.end());
        sys.row_ptr[r + 1] = sys.row_ptr[r] + row.size();
        for (const auto& [col, val] : row) {
            sys.col_idx.push_back(col);
            sys.values.push_back(val);
        }
    }
    return sys;
}

std::vector<double> cg_solve(const SparseSystem& system, double tol, std::size_t max_iter,
                             bool jacobi) {
    if (!(tol > 0.0)) throw std::invalid_argument("cg_solve: tol must be > 0");
    const std::size_t n = system.n;
    if (n == 0) return {};
    if (max_iter == 0) max_iter = 10 * n;

    std::vector<double> diag_inv;
    if (jacobi) {
        diag_inv.assign(n, 1.0);
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t k = system.row_ptr[r]; k < system.row_ptr[r + 1]; ++k) {
                if (system.col_idx[k] == r && system.values[k] > 0.0) {
                    diag_inv[r] = 1.0 / system.values[k];
                }
            }
        }
    }

    auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
        return s;
    };

    const double b_norm = std::sqrt(dot(system.rhs, system.rhs));
    std::vector<double> x(n, 0.0);
    if (b_norm == 0.0) return x;

    std::vector<double> r = system.rhs;
    std::vector<double> z(n);
    auto precondition = [&](const std::vector<double>& rr, std::vector<double>& zz) {
        if (jacobi) {
            for (std::size_t i = 0; i < n; ++i) zz[i] = diag_inv[i] * rr[i];
        } else {
            zz = rr;
        }
    };
    precondition(r, z);
    std::vector<double> p = z;
    double rz = dot(r, z);

    for (std::size_t iter = 0; iter < max_iter; ++iter) {
        const std::vector<double> ap = system.multiply(p);
        const double curvature = dot(p, ap);
        if (!(curvature > 0.0)) {
            throw NumericalError("cg_solve: nonpositive curvature (system not SPD)");
        }
        const double alpha = rz / curvature;
        for (std::size_t i = 0; i < n; ++i) {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if (std::sqrt(dot(r, r)) / b_norm <= tol) {
            // confirm with the true residual before declaring victory
            const std::vector<double> ax = system.multiply(x);
            double true_sq = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double d = ax[i] - system.rhs[i];
                true_sq += d * d;
            }
            if (std::sqrt(true_sq) / b_norm <= tol) return x;
            for (std::size_t i = 0; i < n; ++i) r[i] = system.rhs[i] - ax[i];
        }
        precondition(r, z);
        const double rz_next = dot(r, z);
        const double beta = rz_next / rz;
        rz = rz_next;
        for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
    }
    throw NumericalError("cg_solve: no convergence within " + std::to_string(max_iter) +
                         " iterations");
}

Tensor fill_depth(const Tensor& depth, const Tensor& ir, Neighborhood nb, double tol) {
    if (depth.rank() != 2 || !depth.same_shape(ir)) {
        throw std::invalid_argument("fill_depth: depth and ir must share one H x W shape");
    }
    const Tensor mask = missing_mask(depth);
    Tensor filled = depth;
    const SparseSystem sys = build_system(depth, ir, mask, nb);
    if (sys.n == 0) return filled;
    const std::vector<double> solution = cg_solve(sys, tol);
    for (std::size_t r = 0; r < sys.n; ++r) filled[sys.unknown_pixels[r]] = solution[r];
    return filled;
}

}  // namespace irdseg
