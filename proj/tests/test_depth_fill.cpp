#include <doctest.h>

#include <cmath>

#include "irdseg/depth_fill.hpp"
#include "irdseg/errors.hpp"
#include "irdseg/preprocess.hpp"
#include "irdseg/prng.hpp"
#include "irdseg/synth_data.hpp"

#include "support/dense_solve.hpp"

using namespace irdseg;

TEST_CASE("neighbor_weights") {
    SUBCASE("constant patch gives uniform weights") {
        const Tensor ir({5, 5}, 42.0);
        const auto weights = neighbor_weights(ir, 2, 2, Neighborhood::four);
        REQUIRE(weights.size() == 4);
        for (const auto& nw : weights) CHECK(nw.weight == doctest::Approx(0.25));
    }
    SUBCASE("identical neighbor dominates when others are far") {
        Tensor ir({3, 3}, 0.0);
        ir.at(1, 1) = 100.0;
        ir.at(0, 1) = 100.0;  // only the top neighbour matches the centre
        const auto weights = neighbor_weights(ir, 1, 1, Neighborhood::four);
        double top_weight = 0.0, rest = 0.0;
        for (const auto& nw : weights) {
            if (nw.dy == -1 && nw.dx == 0) top_weight = nw.weight;
            else rest = std::max(rest, nw.weight);
        }
        CHECK(top_weight > 0.99);
        CHECK(rest < 0.01);
    }
    SUBCASE("hand-computed exp/variance case") {
        // window {10 x8, 20}: mean 100/9, var 800/81
        Tensor ir({3, 3}, 10.0);
        ir.at(1, 1) = 20.0;
        const double sigma2 = 800.0 / 81.0;
        const double u = std::exp(-100.0 / (2.0 * sigma2));
        CHECK(u == doctest::Approx(std::exp(-5.0625)));
        const auto weights = neighbor_weights(ir, 1, 1, Neighborhood::four);
        // all four neighbours identical: normalization gives 1/4 each
        for (const auto& nw : weights) CHECK(nw.weight == doctest::Approx(0.25));
    }
    SUBCASE("corner pixel has two 4-neighbors") {
        const Tensor ir({4, 4}, 1.0);
        CHECK(neighbor_weights(ir, 0, 0, Neighborhood::four).size() == 2);
        CHECK(neighbor_weights(ir, 0, 0, Neighborhood::eight).size() == 3);
    }
}

TEST_CASE("build_system") {
    SUBCASE("no missing pixels gives an empty system") {
        const Tensor depth({4, 4}, 2.0);
        const Tensor ir({4, 4}, 10.0);
        const SparseSystem sys = build_system(depth, ir, missing_mask(depth));
        CHECK(sys.n == 0);
    }
    SUBCASE("single missing pixel with constant IR: matrix [1], rhs = mean") {
        Tensor depth({5, 5}, 1.0);
        depth.at(1, 2) = 3.0;
        depth.at(2, 1) = 5.0;
        depth.at(2, 3) = 7.0;
        depth.at(3, 2) = 9.0;
        depth.at(2, 2) = 0.0;  // the unknown
        const Tensor ir({5, 5}, 10.0);
        const SparseSystem sys = build_system(depth, ir, missing_mask(depth));
        REQUIRE(sys.n == 1);
        REQUIRE(sys.values.size() == 1);
        CHECK(sys.values[0] == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(sys.rhs[0] == doctest::Approx((3.0 + 5.0 + 7.0 + 9.0) / 4.0).epsilon(1e-12));
    }
    SUBCASE("2x2 missing block: symmetric, SPD, diagonally dominant") {
        Prng rng(7);
        Tensor depth = Tensor::random_uniform({6, 6}, rng, 1.0, 3.0);
        Tensor ir = Tensor::random_uniform({6, 6}, rng, 0.0, 100.0);
        depth.at(2, 2) = depth.at(2, 3) = depth.at(3, 2) = depth.at(3, 3) = 0.0;
        const SparseSystem sys = build_system(depth, ir, missing_mask(depth));
        REQUIRE(sys.n == 4);
        const auto dense = oracle::to_dense(sys);
        CHECK(oracle::is_symmetric(dense));
        CHECK(oracle::is_positive_definite(dense));
        for (std::size_t r = 0; r < 4; ++r) {
            double offdiag = 0.0;
            for (std::size_t c = 0; c < 4; ++c) {
                if (c != r) offdiag += std::abs(dense[r][c]);
            }
            CHECK(offdiag <= dense[r][r] + 1e-15);
        }
    }
    SUBCASE("sealed-off hole reports the component") {
        // missing ring isolates nothing, but an all-missing image has no
        // observed boundary at all
        const Tensor depth({3, 3}, 0.0);
        const Tensor ir({3, 3}, 1.0);
        try {
            build_system(depth, ir, missing_mask(depth));
            FAIL("expected UnsolvableComponentError");
        } catch (const UnsolvableComponentError& e) {
            CHECK(e.component_pixels.size() == 9);
        }
    }
    SUBCASE("mask mismatch rejected") {
        const Tensor depth({3, 3}, 1.0);
        const Tensor ir({3, 3}, 1.0);
        CHECK_THROWS_AS(build_system(depth, ir, Tensor({3, 3}, 1.0)), std::invalid_argument);
    }
}

TEST_CASE("cg_solve") {
    SUBCASE("identity system converges immediately") {
        SparseSystem sys;
        sys.n = 3;
        sys.row_ptr = {0, 1, 2, 3};
        sys.col_idx = {0, 1, 2};
        sys.values = {1.0, 1.0, 1.0};
        sys.rhs = {4.0, -2.0, 0.5};
        const auto x = cg_solve(sys, 1e-12, 2);
        for (std::size_t i = 0; i < 3; ++i) CHECK(x[i] == doctest::Approx(sys.rhs[i]));
    }
    SUBCASE("1D Laplacian matches dense solve") {
        // tridiagonal [2,-1] n=4, b=[1,0,0,1]
        SparseSystem sys;
        sys.n = 4;
        sys.rhs = {1.0, 0.0, 0.0, 1.0};
        for (std::size_t r = 0; r < 4; ++r) {
            sys.row_ptr.push_back(sys.col_idx.size());
            if (r > 0) {
                sys.col_idx.push_back(r - 1);
                sys.values.push_back(-1.0);
            }
            sys.col_idx.push_back(r);
            sys.values.push_back(2.0);
            if (r < 3) {
                sys.col_idx.push_back(r + 1);
                sys.values.push_back(-1.0);
            }
        }
        sys.row_ptr.push_back(sys.col_idx.size());
        const auto x = cg_solve(sys, 1e-12);
        const auto ref = oracle::dense_solve(oracle::to_dense(sys), sys.rhs);
        for (std::size_t i = 0; i < 4; ++i) CHECK(x[i] == doctest::Approx(ref[i]).epsilon(1e-10));
    }
    SUBCASE("random SPD system matches dense solve") {
        Prng rng(19);
        const std::size_t n = 10;
        // A = B^T B + I, assembled dense then stored sparsely
        std::vector<std::vector<double>> b(n, std::vector<double>(n));
        for (auto& row : b) {
            for (double& v : row) v = rng.uniform(-1.0, 1.0);
        }
        std::vector<std::vector<double>> a(n, std::vector<double>(n, 0.0));
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                for (std::size_t k = 0; k < n; ++k) a[i][j] += b[k][i] * b[k][j];
            }
            a[i][i] += 1.0;
        }
        SparseSystem sys;
        sys.n = n;
        for (std::size_t r = 0; r < n; ++r) {
            sys.row_ptr.push_back(sys.col_idx.size());
            for (std::size_t c = 0; c < n; ++c) {
                sys.col_idx.push_back(c);
                sys.values.push_back(a[r][c]);
            }
            sys.rhs.push_back(rng.uniform(-2.0, 2.0));
        }
        sys.row_ptr.push_back(sys.col_idx.size());
        const auto ref = oracle::dense_solve(a, sys.rhs);
        for (bool jacobi : {false, true}) {
            const auto x = cg_solve(sys, 1e-12, 0, jacobi);
            for (std::size_t i = 0; i < n; ++i) {
                CHECK(std::abs(x[i] - ref[i]) <= 1e-8);
            }
        }
    }
    SUBCASE("non-SPD system reports breakdown") {
        SparseSystem sys;
        sys.n = 1;
        sys.row_ptr = {0, 1};
        sys.col_idx = {0};
        sys.values = {-1.0};
        sys.rhs = {1.0};
        CHECK_THROWS_AS(cg_solve(sys, 1e-10), NumericalError);
    }
}

TEST_CASE("fill_depth") {
    SUBCASE("no holes is the identity") {
        Prng rng(23);
        const Tensor depth = Tensor::random_uniform({8, 8}, rng, 0.5, 4.0);
        const Tensor ir = Tensor::random_uniform({8, 8}, rng, 0.0, 200.0);
        const Tensor filled = fill_depth(depth, ir);
        for (std::size_t i = 0; i < depth.size(); ++i) CHECK(filled[i] == depth[i]);
    }
    SUBCASE("constant depth with holes fills to the constant") {
        Prng rng(29);
        Tensor depth({10, 10}, 2.0);
        const Tensor ir = Tensor::random_uniform({10, 10}, rng, 0.0, 200.0);
        for (std::size_t i = 0; i < 12; ++i) {
            depth[rng.uniform_int(0, depth.size() - 1)] = 0.0;
        }
        const Tensor filled = fill_depth(depth, ir);
        for (std::size_t i = 0; i < depth.size(); ++i) {
            CHECK(filled[i] == doctest::Approx(2.0).epsilon(1e-7));
        }
    }
    SUBCASE("planar ramp with a 3x3 hole matches the dense oracle") {
        Tensor depth({16, 16});
        for (std::size_t y = 0; y < 16; ++y) {
            for (std::size_t x = 0; x < 16; ++x) {
                depth.at(y, x) = 1.0 + 0.05 * static_cast<double>(y) +
                                 0.03 * static_cast<double>(x);
            }
        }
        const Tensor ir({16, 16}, 50.0);
        Tensor holed = depth;
        for (std::size_t y = 6; y < 9; ++y) {
            for (std::size_t x = 6; x < 9; ++x) holed.at(y, x) = 0.0;
        }
        const SparseSystem sys = build_system(holed, ir, missing_mask(holed));
        const auto ref = oracle::dense_solve(oracle::to_dense(sys), sys.rhs);
        const Tensor filled = fill_depth(holed, ir);
        for (std::size_t r = 0; r < sys.n; ++r) {
            CHECK(std::abs(filled[sys.unknown_pixels[r]] - ref[r]) <= 1e-6);
        }
        // known pixels preserved bitwise
        for (std::size_t i = 0; i < holed.size(); ++i) {
            if (holed[i] != 0.0) CHECK(filled[i] == holed[i]);
        }
    }
    SUBCASE("maximum principle on synthetic scenes") {
        SceneConfig cfg;
        cfg.height = 16;
        cfg.width = 16;
        cfg.seed = 3;
        for (std::uint64_t index = 0; index < 5; ++index) {
            const ImageSample s = generate_scene(cfg, index);
            double lo = 1e300, hi = -1e300;
            for (std::size_t i = 0; i < s.depth_raw.size(); ++i) {
                if (s.depth_raw[i] > 0.0) {
                    lo = std::min(lo, s.depth_raw[i]);
                    hi = std::max(hi, s.depth_raw[i]);
                }
            }
            const Tensor filled = fill_depth(s.depth_raw, s.ir);
            for (std::size_t i = 0; i < filled.size(); ++i) {
                CHECK(filled[i] >= lo - 1e-7);
                CHECK(filled[i] <= hi + 1e-7);
                CHECK(filled[i] > 0.0);
            }
        }
    }
    SUBCASE("8-connected fill agrees with its own dense oracle") {
        Prng rng(31);
        Tensor depth = Tensor::random_uniform({12, 12}, rng, 1.0, 3.0);
        Tensor ir = Tensor::random_uniform({12, 12}, rng, 0.0, 150.0);
        for (std::size_t y = 4; y < 7; ++y) {
            for (std::size_t x = 5; x < 8; ++x) depth.at(y, x) = 0.0;
        }
        const SparseSystem sys =
            build_system(depth, ir, missing_mask(depth), Neighborhood::eight);
        const auto dense = oracle::to_dense(sys);
        CHECK(oracle::is_symmetric(dense));
        CHECK(oracle::is_positive_definite(dense));
        const auto ref = oracle::dense_solve(dense, sys.rhs);
        const Tensor filled = fill_depth(depth, ir, Neighborhood::eight);
        for (std::size_t r = 0; r < sys.n; ++r) {
            CHECK(std::abs(filled[sys.unknown_pixels[r]] - ref[r]) <= 1e-6);
        }
    }
}
