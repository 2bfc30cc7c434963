#pragma once

#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include "mpb/error.hpp"

namespace mpb {

struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

/// n-point Gauss-Legendre rule on [-1, 1] (Newton iteration on P_n).
inline QuadratureRule gauss_legendre(int n) {
    detail::require(n >= 1, "gauss_legendre: need at least one node");
    QuadratureRule q;
    q.nodes.resize(static_cast<std::size_t>(n));
    q.weights.resize(static_cast<std::size_t>(n));
    // Returns (P_n(x), P_n'(x)).
    auto legendre = [n](double x) {
        double p0 = 1.0, p1 = x;
        for (int k = 2; k <= n; ++k) {
            const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
            p0 = p1;
            p1 = p2;
        }
        return std::pair{p1, n * (x * p1 - p0) / (x * x - 1.0)};
    };
    const int half = (n + 1) / 2;
    for (int i = 0; i < half; ++i) {
        double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        for (int iter = 0; iter < 100; ++iter) {
            const auto [p, dp] = legendre(x);
            const double dx = p / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) break;
        }
        const double dp = legendre(x).second;
        const double w = 2.0 / ((1.0 - x * x) * dp * dp);
        q.nodes[static_cast<std::size_t>(i)] = -x;
        q.nodes[static_cast<std::size_t>(n - 1 - i)] = x;
        q.weights[static_cast<std::size_t>(i)] = w;
        q.weights[static_cast<std::size_t>(n - 1 - i)] = w;
    }
    if (n % 2 == 1) q.nodes[static_cast<std::size_t>(n / 2)] = 0.0;
    return q;
}

/// Composite Gauss-Legendre rule over the panels [breaks[i], breaks[i+1]].
inline QuadratureRule composite_gauss_legendre(const std::vector<double>& breaks, int points_per_panel) {
    const auto base = gauss_legendre(points_per_panel);
    QuadratureRule q;
    for (std::size_t p = 0; p + 1 < breaks.size(); ++p) {
        const double lo = breaks[p], hi = breaks[p + 1];
        if (!(hi > lo)) continue;
        const double half = 0.5 * (hi - lo), mid = 0.5 * (hi + lo);
        for (std::size_t i = 0; i < base.nodes.size(); ++i) {
            q.nodes.push_back(mid + half * base.nodes[i]);
            q.weights.push_back(half * base.weights[i]);
        }
    }
    return q;
}

/// Trapezoid weights for an increasing set of abscissae.
inline std::vector<double> trapezoid_weights(const std::vector<double>& x) {
    std::vector<double> w(x.size(), 0.0);
    for (std::size_t i = 0; i + 1 < x.size(); ++i) {
        const double h = x[i + 1] - x[i];
        w[i] += 0.5 * h;
        w[i + 1] += 0.5 * h;
    }
    return w;
}

inline std::vector<double> linspace(double a, double b, std::size_t n) {
    detail::require(n >= 1, "linspace: need at least one point");
    std::vector<double> x(n);
    if (n == 1) {
        x[0] = a;
        return x;
    }
    for (std::size_t i = 0; i < n; ++i) x[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
    x.back() = b;
    return x;
}

}  // namespace mpb
