#pragma once

// Marginal basis systems on a closed interval [a, b]: clamped B-splines and
// the orthonormal Fourier system, together with the integral matrices the
// estimators need (Gram, derivative penalty, cross matrix).

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "mpb/error.hpp"
#include "mpb/quadrature.hpp"
#include "mpb/tensor.hpp"

namespace mpb {

enum class BasisKind { BSpline, Fourier };

/// L = d^order / dx^order.
struct PenaltyOperator {
    int order = 2;
};

class MarginalBasis {
public:
    /// Clamped B-spline basis with equispaced interior knots.
    static MarginalBasis bspline(double a, double b, int rank, int degree = 3) {
        detail::require(degree >= 1, "bspline: degree must be >= 1");
        detail::require(rank >= degree + 1, "bspline: rank " + std::to_string(rank) +
                                                " too small for degree " + std::to_string(degree));
        detail::require(b > a, "bspline: empty domain");
        const int interior = rank - degree - 1;
        std::vector<double> knots;
        knots.reserve(static_cast<std::size_t>(rank + degree + 1));
        for (int i = 0; i <= degree; ++i) knots.push_back(a);
        for (int i = 1; i <= interior; ++i) knots.push_back(a + (b - a) * i / (interior + 1.0));
        for (int i = 0; i <= degree; ++i) knots.push_back(b);
        return bspline_with_knots(degree, std::move(knots));
    }

    /// Clamped B-spline basis from a full knot vector (end knots repeated degree+1 times).
    static MarginalBasis bspline_with_knots(int degree, std::vector<double> knots) {
        detail::require(degree >= 1, "bspline: degree must be >= 1");
        const auto p = static_cast<std::size_t>(degree);
        detail::require(knots.size() >= 2 * (p + 1), "bspline: knot vector too short");
        detail::require(std::is_sorted(knots.begin(), knots.end()), "bspline: knots must be nondecreasing");
        for (std::size_t i = 1; i <= p; ++i)
            detail::require(knots[i] == knots[0] && knots[knots.size() - 1 - i] == knots.back(),
                            "bspline: knot vector must be clamped");
        detail::require(knots.back() > knots.front(), "bspline: empty domain");
        // Interior multiplicity <= degree keeps the basis functions independent.
        for (std::size_t i = p + 1; i + p + 1 < knots.size(); ++i) {
            std::size_t mult = 1;
            while (i + mult + p + 1 < knots.size() && knots[i + mult] == knots[i]) ++mult;
            detail::require(mult <= p, "bspline: interior knot multiplicity exceeds degree");
        }
        MarginalBasis basis;
        basis.kind_ = BasisKind::BSpline;
        basis.degree_ = degree;
        basis.a_ = knots.front();
        basis.b_ = knots.back();
        basis.rank_ = static_cast<int>(knots.size()) - degree - 1;
        basis.knots_ = std::move(knots);
        return basis;
    }

    /// {1, sqrt2 cos(2 pi k x / T), sqrt2 sin(2 pi k x / T)} / sqrt(T), k = 1..(rank-1)/2.
    static MarginalBasis fourier(double a, double b, int rank, double period) {
        detail::require(rank >= 1 && rank % 2 == 1, "fourier: rank must be a positive odd integer");
        detail::require(period > 0.0, "fourier: period must be positive");
        detail::require(b > a, "fourier: empty domain");
        MarginalBasis basis;
        basis.kind_ = BasisKind::Fourier;
        basis.a_ = a;
        basis.b_ = b;
        basis.rank_ = rank;
        basis.period_ = period;
        return basis;
    }

    BasisKind kind() const noexcept { return kind_; }
    int rank() const noexcept { return rank_; }
    int degree() const noexcept { return degree_; }
    double period() const noexcept { return period_; }
    double lower() const noexcept { return a_; }
    double upper() const noexcept { return b_; }
    const std::vector<double>& knots() const noexcept { return knots_; }

    /// Highest derivative order that can be evaluated.
    int max_derivative() const noexcept { return kind_ == BasisKind::BSpline ? degree_ : 1 << 20; }

    /// points.size() x rank matrix of d^deriv phi_j / dx^deriv at each point.
    Matrix evaluate(std::span<const double> points, int deriv = 0) const {
        detail::require(deriv >= 0, "evaluate: negative derivative order");
        if (kind_ == BasisKind::BSpline)
            detail::require(deriv <= degree_, "evaluate: derivative order " + std::to_string(deriv) +
                                                  " exceeds spline degree " + std::to_string(degree_));
        Matrix out = Matrix::Zero(static_cast<Eigen::Index>(points.size()), rank_);
        const double slack = 1e-12 * (b_ - a_);
        for (std::size_t i = 0; i < points.size(); ++i) {
            const double x = points[i];
            if (!(x >= a_ - slack && x <= b_ + slack))
                throw ValidationError("evaluate: point " + std::to_string(x) + " outside domain [" +
                                      std::to_string(a_) + ", " + std::to_string(b_) + "]");
            const double xc = std::clamp(x, a_, b_);
            if (kind_ == BasisKind::BSpline)
                eval_bspline_row(xc, deriv, out.row(static_cast<Eigen::Index>(i)));
            else
                eval_fourier_row(xc, deriv, out.row(static_cast<Eigen::Index>(i)));
        }
        return out;
    }

    /// Quadrature rule exact (B-spline) or near-exact (Fourier) for products of
    /// two basis functions or their derivatives over [a, b].
    QuadratureRule integration_rule() const {
        if (kind_ == BasisKind::BSpline) {
            std::vector<double> breaks(knots_.begin() + degree_, knots_.end() - degree_);
            breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());
            return composite_gauss_legendre(breaks, degree_ + 1);
        }
        return composite_gauss_legendre(linspace(a_, b_, static_cast<std::size_t>(4 * rank_) + 1), 10);
    }

    bool operator==(const MarginalBasis&) const = default;

private:
    MarginalBasis() = default;

    std::size_t find_span(double x) const {
        const auto p = static_cast<std::size_t>(degree_);
        const auto n = static_cast<std::size_t>(rank_);
        if (x >= knots_[n]) return n - 1;
        // Last index i in [p, n-1] with knots[i] <= x.
        auto it = std::upper_bound(knots_.begin() + static_cast<std::ptrdiff_t>(p),
                                   knots_.begin() + static_cast<std::ptrdiff_t>(n) + 1, x);
        return static_cast<std::size_t>(it - knots_.begin()) - 1;
    }

    // Nonzero basis functions and derivatives on the knot span (Cox-de Boor
    // triangle plus the knot-difference derivative recurrence).
    template <typename Row>
    void eval_bspline_row(double x, int deriv, Row&& row) const {
        const int p = degree_;
        const std::size_t span = find_span(x);
        const auto& U = knots_;
        std::vector<std::vector<double>> ndu(static_cast<std::size_t>(p + 1), std::vector<double>(static_cast<std::size_t>(p + 1)));
        std::vector<double> left(static_cast<std::size_t>(p + 1)), right(static_cast<std::size_t>(p + 1));
        ndu[0][0] = 1.0;
        for (int j = 1; j <= p; ++j) {
            left[j] = x - U[span + 1 - j];
            right[j] = U[span + j] - x;
            double saved = 0.0;
            for (int r = 0; r < j; ++r) {
                ndu[j][r] = right[r + 1] + left[j - r];
                const double temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        std::vector<double> ders(static_cast<std::size_t>(p + 1));
        if (deriv == 0) {
            for (int j = 0; j <= p; ++j) ders[j] = ndu[j][p];
        } else {
            std::vector<std::vector<double>> a(2, std::vector<double>(static_cast<std::size_t>(p + 1)));
            const int k = deriv;
            for (int r = 0; r <= p; ++r) {
                int s1 = 0, s2 = 1;
                a[0][0] = 1.0;
                double d = 0.0;
                for (int kk = 1; kk <= k; ++kk) {
                    d = 0.0;
                    const int rk = r - kk, pk = p - kk;
                    if (r >= kk) {
                        a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
                        d = a[s2][0] * ndu[rk][pk];
                    }
                    const int j1 = rk >= -1 ? 1 : -rk;
                    const int j2 = (r - 1 <= pk) ? kk - 1 : p - r;
                    for (int j = j1; j <= j2; ++j) {
                        a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][rk + j];
                        d += a[s2][j] * ndu[rk + j][pk];
                    }
                    if (r <= pk) {
                        a[s2][kk] = -a[s1][kk - 1] / ndu[pk + 1][r];
                        d += a[s2][kk] * ndu[r][pk];
                    }
                    std::swap(s1, s2);
                }
                ders[r] = d;
            }
            double factor = p;
            for (int kk = 1; kk < k; ++kk) factor *= (p - kk);
            for (auto& v : ders) v *= factor;
        }
        for (int j = 0; j <= p; ++j) row(static_cast<Eigen::Index>(span) - p + j) = ders[j];
    }

    template <typename Row>
    void eval_fourier_row(double x, int deriv, Row&& row) const {
        const double scale = 1.0 / std::sqrt(period_);
        row(0) = deriv == 0 ? scale : 0.0;
        for (int k = 1; 2 * k - 1 < rank_; ++k) {
            const double w = 2.0 * std::numbers::pi * k / period_;
            const double amp = std::numbers::sqrt2 * scale * std::pow(w, deriv);
            // d^n/dx^n cos(wx) = w^n cos(wx + n pi/2), likewise for sin.
            const double phase = w * x + deriv * std::numbers::pi / 2.0;
            row(2 * k - 1) = amp * std::cos(phase);
            row(2 * k) = amp * std::sin(phase);
        }
    }

    BasisKind kind_ = BasisKind::BSpline;
    int rank_ = 0;
    int degree_ = 0;
    double a_ = 0.0;
    double b_ = 1.0;
    double period_ = 1.0;
    std::vector<double> knots_;
};

/// Integral over the domain of (D^left phi_i)(D^right phi_j).
inline Matrix integral_matrix(const MarginalBasis& basis, int left_deriv, int right_deriv) {
    const auto rule = basis.integration_rule();
    const Matrix lhs = basis.evaluate(rule.nodes, left_deriv);
    const Matrix rhs = left_deriv == right_deriv ? lhs : basis.evaluate(rule.nodes, right_deriv);
    const Eigen::Map<const Vector> w(rule.weights.data(), static_cast<Eigen::Index>(rule.weights.size()));
    return lhs.transpose() * w.asDiagonal() * rhs;
}

/// J(i, j) = integral phi_i phi_j.
inline Matrix gram_matrix(const MarginalBasis& basis) {
    Matrix j = integral_matrix(basis, 0, 0);
    return 0.5 * (j + j.transpose());
}

/// R(i, j) = integral (L phi_i)(L phi_j) for L = d^order/dx^order.
inline Matrix penalty_matrix(const MarginalBasis& basis, PenaltyOperator op = {}) {
    detail::require(op.order >= 1, "penalty_matrix: operator order must be >= 1");
    detail::require(op.order <= basis.max_derivative(),
                    "penalty_matrix: order " + std::to_string(op.order) + " too high for spline degree " +
                        std::to_string(basis.degree()));
    Matrix r = integral_matrix(basis, op.order, op.order);
    return 0.5 * (r + r.transpose());
}

/// E(i, j) = integral phi_i phi_j''.
inline Matrix cross_matrix(const MarginalBasis& basis) {
    detail::require(basis.max_derivative() >= 2, "cross_matrix: basis is not twice differentiable (degree " +
                                                     std::to_string(basis.degree()) + ")");
    return integral_matrix(basis, 0, 2);
}

}  // namespace mpb
