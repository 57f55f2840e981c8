#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>

#include "irdseg/tensor.hpp"

namespace irdseg {

// Central-difference gradient of a scalar function, the oracle every analytic
// backward pass in this project is checked against. f must be pure.
inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& at,
                               double h = 1e-5) {
    if (!(h > 0.0)) throw std::invalid_argument("finite difference step must be > 0");
    Tensor point = at;
    Tensor grad(at.shape());
    for (std::size_t i = 0; i < point.size(); ++i) {
        const double saved = point[i];
        point[i] = saved + h;
        const double fp = f(point);
        point[i] = saved - h;
        const double fm = f(point);
        point[i] = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw std::invalid_argument("function returned non-finite value during gradient check");
        }
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

// Relative error with denominator max(1, |analytic|), the convention used by
// all gradient-check tests here.
inline double max_relative_error(const Tensor& analytic, const Tensor& numeric) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double denom = std::max(1.0, std::abs(analytic[i]));
        const double err = std::abs(analytic[i] - numeric[i]) / denom;
        if (err > worst) worst = err;
    }
    return worst;
}

}  // namespace irdseg
