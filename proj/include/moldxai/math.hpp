#pragma once

#include <algorithm>
#include <cmath>

#include "moldxai/common.hpp"

namespace moldxai {

// Numerically stable logistic; never overflows for finite input.
inline double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

// d/dx sigmoid(x) expressed through the activation value.
inline double sigmoid_grad_from_value(double s) { return s * (1.0 - s); }

inline constexpr double kProbEps = 1e-7;

// Binary cross-entropy with the probability clamped to [eps, 1-eps].
inline double bce_loss(double p, int label) {
    double q = std::clamp(p, kProbEps, 1.0 - kProbEps);
    return label == 1 ? -std::log(q) : -std::log(1.0 - q);
}

}  // namespace moldxai
