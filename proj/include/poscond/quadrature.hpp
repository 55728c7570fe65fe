// Copyright (C) 2026 The poscond Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "poscond/error.hpp"

namespace poscond {

enum class QuadratureRule { riemann_left, riemann_trapezoid, gauss_legendre };

constexpr std::string_view to_string(QuadratureRule r) {
    switch (r) {
        case QuadratureRule::riemann_left: return "riemann_left";
        case QuadratureRule::riemann_trapezoid: return "riemann_trapezoid";
        case QuadratureRule::gauss_legendre: return "gauss_legendre";
    }
    return "gauss_legendre";
}

inline QuadratureRule quadrature_rule_from_string(std::string_view s) {
    if (s == "riemann_left") return QuadratureRule::riemann_left;
    if (s == "riemann_trapezoid") return QuadratureRule::riemann_trapezoid;
    if (s == "gauss_legendre") return QuadratureRule::gauss_legendre;
    fail(ErrorKind::ConfigError, "unknown quadrature rule '" + std::string(s) + "'");
}

struct QuadratureNode {
    double alpha;
    double weight;
};

/// `steps` integrand evaluations on [0, 1]; weights sum to 1.
///   riemann_left       alpha = i/steps
///   riemann_trapezoid  alpha = i/(steps-1), end weights halved
///   gauss_legendre     Legendre roots mapped to [0, 1]
inline std::vector<QuadratureNode> quadrature_nodes(QuadratureRule rule, int steps) {
    if (steps < 2) fail(ErrorKind::ConfigError, "quadrature needs at least 2 steps");
    std::vector<QuadratureNode> nodes;
    nodes.reserve(static_cast<std::size_t>(steps));
    const double n = steps;
    switch (rule) {
        case QuadratureRule::riemann_left:
            for (int i = 0; i < steps; ++i) nodes.push_back({i / n, 1.0 / n});
            break;
        case QuadratureRule::riemann_trapezoid:
            for (int i = 0; i < steps; ++i) {
                const double w = (i == 0 || i == steps - 1) ? 0.5 / (n - 1) : 1.0 / (n - 1);
                nodes.push_back({i / (n - 1), w});
            }
            break;
        case QuadratureRule::gauss_legendre: {
            nodes.resize(static_cast<std::size_t>(steps));
            const int half = (steps + 1) / 2;
            for (int i = 0; i < half; ++i) {
                double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
                double dp = 0.0;
                for (int iter = 0; iter < 100; ++iter) {
                    double p1 = 1.0, p2 = 0.0;
                    for (int j = 1; j <= steps; ++j) {
                        const double p3 = p2;
                        p2 = p1;
                        p1 = ((2.0 * j - 1.0) * z * p2 - (j - 1.0) * p3) / j;
                    }
                    dp = n * (z * p1 - p2) / (z * z - 1.0);
                    const double prev = z;
                    z = prev - p1 / dp;
                    if (std::abs(z - prev) < 1e-15) break;
                }
                const double w = 1.0 / ((1.0 - z * z) * dp * dp);  // half of the [-1,1] weight
                nodes[static_cast<std::size_t>(i)] = {0.5 * (1.0 - z), w};
                nodes[static_cast<std::size_t>(steps - 1 - i)] = {0.5 * (1.0 + z), w};
            }
            break;
        }
    }
    return nodes;
}

}  // namespace poscond
