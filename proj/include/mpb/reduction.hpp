#pragma once

// Isometric data reduction: thin SVD of each marginal evaluation matrix,
// compression of the data tensor onto the left singular subspaces, and the
// maps between original and transformed coefficient coordinates.

#include <span>
#include <string>
#include <vector>

#include "mpb/error.hpp"
#include "mpb/tensor.hpp"

namespace mpb {

/// Phi = U diag(singular) V'.
struct MarginalFactorization {
    Matrix u;         // n x m, orthonormal columns
    Vector singular;  // m, nonincreasing, positive
    Matrix v;         // m x m, orthogonal
};

/// Smallest singular value allowed relative to the largest.
inline constexpr double kRankTolerance = 1e-10;

/// Thin SVD of a basis evaluation matrix. `label` names the dimension in errors.
inline MarginalFactorization factorize(const Matrix& phi, const std::string& label = "basis") {
    detail::require(phi.rows() >= phi.cols(), label + ": evaluation matrix has fewer grid points (" +
                                                  std::to_string(phi.rows()) + ") than basis functions (" +
                                                  std::to_string(phi.cols()) + ")");
    detail::require(phi.cols() >= 1, label + ": empty basis");
    Eigen::JacobiSVD<Matrix> svd(phi, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& s = svd.singularValues();
    if (!(s(s.size() - 1) > kRankTolerance * s(0)))
        throw NumericalError(label + ": basis evaluation matrix is rank deficient (singular values " +
                             std::to_string(s(0)) + " .. " + std::to_string(s(s.size() - 1)) + ")");
    return {svd.matrixU(), s, svd.matrixV()};
}

/// Y x_0 U_0' x_1 U_1' ... x_{D-1} U_{D-1}'; the trailing subject mode is untouched.
inline DenseTensor compress(const DenseTensor& y, std::span<const MarginalFactorization> facs) {
    detail::require(y.order() == facs.size() + 1,
                    "compress: tensor of order " + std::to_string(y.order()) + " needs " +
                        std::to_string(y.order() - 1) + " factorizations, got " + std::to_string(facs.size()));
    DenseTensor g = y;
    for (std::size_t d = 0; d < facs.size(); ++d) {
        detail::require(static_cast<std::size_t>(facs[d].u.rows()) == y.dim(d),
                        "compress: dimension " + std::to_string(d) + " has " + std::to_string(y.dim(d)) +
                            " grid points but the basis was evaluated on " + std::to_string(facs[d].u.rows()));
        g = mode_multiply(g, facs[d].u.transpose(), d);
    }
    return g;
}

/// Inverse map onto the evaluation grid: G x_0 U_0 ... x_{D-1} U_{D-1}.
inline DenseTensor decompress(const DenseTensor& g, std::span<const MarginalFactorization> facs) {
    detail::require(g.order() == facs.size() + 1, "decompress: order mismatch");
    DenseTensor y = g;
    for (std::size_t d = 0; d < facs.size(); ++d) y = mode_multiply(y, facs[d].u, d);
    return y;
}

/// T = D^{-1} V' R V D^{-1}, so that tr(C~' T C~) = tr(C' R C) with C~ = D V' C.
inline Matrix penalty_transform(const MarginalFactorization& fac, const Matrix& r) {
    detail::require(r.rows() == fac.v.rows() && r.cols() == fac.v.rows(),
                    "penalty_transform: penalty matrix has wrong shape");
    const Vector inv = fac.singular.cwiseInverse();
    Matrix t = inv.asDiagonal() * (fac.v.transpose() * r * fac.v) * inv.asDiagonal();
    return 0.5 * (t + t.transpose());
}

/// C = V D^{-1} C~.
inline Matrix back_transform(const MarginalFactorization& fac, const Matrix& c_tilde) {
    detail::require(c_tilde.rows() == fac.v.rows(), "back_transform: coefficient rows must equal basis rank");
    return fac.v * (fac.singular.cwiseInverse().asDiagonal() * c_tilde);
}

/// C~ = D V' C.
inline Matrix forward_transform(const MarginalFactorization& fac, const Matrix& c) {
    detail::require(c.rows() == fac.v.rows(), "forward_transform: coefficient rows must equal basis rank");
    return fac.singular.asDiagonal() * (fac.v.transpose() * c);
}

}  // namespace mpb
