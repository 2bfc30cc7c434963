#pragma once

// Two-stage penalized functional PCA in MPB coordinates: eigenfunctions
// psi_j = s_j' zeta solve  J Sigma_b J s = nu (J + lambda R) s,  s' J s = 1.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>

#include "mpb/error.hpp"
#include "mpb/model.hpp"
#include "mpb/tensor.hpp"

namespace mpb {

struct FPCAResult {
    Matrix s;              // K x K', eigenvector coordinates
    Vector nu;             // K', nonincreasing
    Matrix scores;         // N x K' (empty unless computed)
    double lambda = 0.0;
    Vector var_explained;  // cumulative fractions
};

/// Column-centered sample covariance with 1/(N-1) normalization.
inline Matrix coef_covariance(const Matrix& b) {
    detail::require(b.rows() >= 2, "coef_covariance: need at least 2 subjects, got " + std::to_string(b.rows()));
    const Matrix centered = b.rowwise() - b.colwise().mean();
    Matrix cov = centered.transpose() * centered / static_cast<double>(b.rows() - 1);
    return 0.5 * (cov + cov.transpose());
}

/// Smallest k with cumulative share >= threshold.
inline Eigen::Index components_for_threshold(const Vector& nu, double threshold) {
    detail::require(threshold > 0.0 && threshold <= 1.0, "variance threshold must be in (0, 1]");
    const double total = nu.sum();
    if (!(total > 0.0)) return 1;
    double acc = 0.0;
    for (Eigen::Index j = 0; j < nu.size(); ++j) {
        acc += nu(j);
        if (acc / total >= threshold - 1e-12) return j + 1;
    }
    return nu.size();
}

/// Solves the generalized eigenproblem and keeps `k_dagger` components (all if unset).
inline FPCAResult solve_fpca(const Matrix& j_zeta, const Matrix& r_zeta, const Matrix& sigma_b, double lambda,
                             std::optional<Eigen::Index> k_dagger = std::nullopt) {
    const auto k = j_zeta.rows();
    detail::require(j_zeta.cols() == k && r_zeta.rows() == k && r_zeta.cols() == k && sigma_b.rows() == k &&
                        sigma_b.cols() == k,
                    "solve_fpca: J, R and Sigma must all be " + std::to_string(k) + "x" + std::to_string(k));
    detail::require(lambda >= 0.0 && std::isfinite(lambda), "solve_fpca: lambda must be >= 0");
    const Eigen::Index keep = k_dagger.value_or(k);
    detail::require(keep >= 1 && keep <= k, "solve_fpca: k_dagger must be in [1, " + std::to_string(k) + "]");

    const Matrix lhs_b = 0.5 * (j_zeta + j_zeta.transpose()) + lambda * 0.5 * (r_zeta + r_zeta.transpose());
    const Eigen::LLT<Matrix> llt(lhs_b);
    const Eigen::SelfAdjointEigenSolver<Matrix> jeig(0.5 * (j_zeta + j_zeta.transpose()), Eigen::EigenvaluesOnly);
    const double jmin = jeig.eigenvalues().minCoeff(), jmax = jeig.eigenvalues().maxCoeff();
    if (!(jmin > 1e-14 * std::max(jmax, 1e-300)))
        throw NumericalError("solve_fpca: J_zeta is not positive definite (eigenvalues " + std::to_string(jmin) +
                             " .. " + std::to_string(jmax) + ")");
    if (llt.info() != Eigen::Success)
        throw NumericalError("solve_fpca: J_zeta + lambda R_zeta is not positive definite");

    const Matrix l = llt.matrixL();
    // C = L^{-1} J Sigma J L^{-T} = M Sigma M' with M = L^{-1} J (one triangular solve).
    const Matrix mm = l.triangularView<Eigen::Lower>().solve(j_zeta);
    const Matrix c = mm * sigma_b * mm.transpose();
    const Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (c + c.transpose()));
    if (es.info() != Eigen::Success) throw NumericalError("solve_fpca: eigendecomposition failed");

    FPCAResult out;
    out.lambda = lambda;
    Vector nu_all(k);
    Matrix s_all(k, k);
    const double scale = std::max(es.eigenvalues().cwiseAbs().maxCoeff(), 1.0);
    for (Eigen::Index j = 0; j < k; ++j) {
        const Eigen::Index src = k - 1 - j;  // ascending -> descending
        double v = es.eigenvalues()(src);
        if (v < 0.0) {
            if (v < -1e-10 * scale)
                throw NumericalError("solve_fpca: negative eigenvalue " + detail::format_g(v) + " (largest " +
                                     detail::format_g(es.eigenvalues().maxCoeff()) +
                                     "); covariance or Gram input is not PSD");
            v = 0.0;
        }
        nu_all(j) = v;
        Vector s = l.transpose().triangularView<Eigen::Upper>().solve(es.eigenvectors().col(src));
        s /= std::sqrt(s.dot(j_zeta * s));
        Eigen::Index at = 0;
        s.cwiseAbs().maxCoeff(&at);
        if (s(at) < 0.0) s = -s;
        s_all.col(j) = s;
    }
    out.nu = nu_all.head(keep);
    out.s = s_all.leftCols(keep);
    const double total = nu_all.sum();
    out.var_explained.resize(keep);
    double acc = 0.0;
    for (Eigen::Index j = 0; j < keep; ++j) {
        acc += nu_all(j);
        out.var_explained(j) = total > 0.0 ? acc / total : 0.0;
    }
    return out;
}

/// score(i, j) = <U_i, psi_j> = b_i' J_zeta s_j.
inline Matrix fpca_scores(const Matrix& b, const Matrix& j_zeta, const FPCAResult& r) {
    detail::require(b.cols() == j_zeta.rows() && r.s.rows() == j_zeta.rows(), "fpca_scores: dimension mismatch");
    return b * j_zeta * r.s;
}

/// Model whose K' basis functions are the estimated eigenfunctions psi_j
/// (the zeta system with coefficient matrix S); subject coefficients are the scores.
struct EigenfunctionEvaluator {
    MPBModel zeta;  // the fitted marginal product system
    Matrix s;       // K x K'

    /// (#points x K') values of psi_j.
    Matrix evaluate(const Matrix& points) const { return evaluate_basis(zeta, points) * s; }

    /// (|g_0|, ..., |g_{D-1}|, K') tensor of psi_j on a product grid.
    DenseTensor evaluate_grid(const Grid& grid) const {
        return mode_multiply(evaluate_zeta_grid(zeta, grid), s.transpose(), zeta.dims());
    }
};

inline EigenfunctionEvaluator eigenfunction_model(const MPBModel& model, const FPCAResult& r) {
    model.validate();
    detail::require(r.s.rows() == model.rank(), "eigenfunction_model: eigenvector length " +
                                                    std::to_string(r.s.rows()) + " differs from model rank " +
                                                    std::to_string(model.rank()));
    return {model, r.s};
}

struct FPCAOptions {
    double lambda = 0.0;
    std::optional<Eigen::Index> k_dagger;  // unset: chosen by variance_threshold
    double variance_threshold = 0.99;
};

/// Assembles J_zeta and R_zeta from the model, solves, and computes scores.
inline FPCAResult run_fpca(const MPBModel& model, const FPCAOptions& opt = {}) {
    model.validate();
    const Matrix j = gram_zeta(model);
    const Matrix r = opt.lambda > 0.0 ? laplacian_penalty_zeta(model) : Matrix(Matrix::Zero(j.rows(), j.cols()));
    const Matrix sigma = coef_covariance(model.subject_coefs);
    auto full = solve_fpca(j, r, sigma, opt.lambda);
    const Eigen::Index keep = opt.k_dagger ? *opt.k_dagger : components_for_threshold(full.nu, opt.variance_threshold);
    detail::require(keep >= 1 && keep <= full.nu.size(), "run_fpca: k_dagger out of range");
    FPCAResult out;
    out.lambda = opt.lambda;
    out.nu = full.nu.head(keep);
    out.s = full.s.leftCols(keep);
    out.var_explained = full.var_explained.head(keep);
    out.scores = fpca_scores(model.subject_coefs, j, out);
    return out;
}

}  // namespace mpb
