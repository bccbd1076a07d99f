#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "moldxai/common.hpp"

namespace moldxai {

// Central-difference gradient oracle. Independent of any analytic backward
// pass; every hand-derived gradient in the repo is validated against it.
inline Vec finite_difference_gradient(const std::function<double(const Vec&)>& f, const Vec& x,
                                      double eps = 1e-5) {
    Vec grad(x.size(), 0.0);
    Vec probe = x;
    for (size_t i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + eps;
        double fp = f(probe);
        probe[i] = x[i] - eps;
        double fm = f(probe);
        probe[i] = x[i];
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw OracleError("finite_difference_gradient: non-finite evaluation at coordinate " +
                              std::to_string(i));
        }
        grad[i] = (fp - fm) / (2.0 * eps);
    }
    return grad;
}

// Relative error with an absolute floor so near-zero pairs do not blow up.
inline double relative_error(double a, double b, double floor = 1e-6) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double max_relative_error(std::span<const double> a, std::span<const double> b,
                                 double floor = 1e-6) {
    double worst = 0.0;
    for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, relative_error(a[i], b[i], floor));
    return worst;
}

}  // namespace moldxai
