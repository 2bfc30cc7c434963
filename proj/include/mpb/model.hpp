#pragma once

// Continuous marginal product basis representation
//
//   zeta_k(x) = prod_d xi_{k,d}(x_d),  xi_{k,d} = sum_j C_d(j, k) phi_{d,j},
//   U_i(x)    = sum_k B(i, k) zeta_k(x)  (+ gridded mean, if centered).

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mpb/basis.hpp"
#include "mpb/error.hpp"
#include "mpb/reduction.hpp"
#include "mpb/solver.hpp"
#include "mpb/tensor.hpp"

namespace mpb {

using Grid = std::vector<std::vector<double>>;  // one vector of points per marginal dimension

struct MPBModel {
    std::vector<MarginalBasis> bases;
    std::vector<Matrix> coefs;  // C_d, m_d x K
    Matrix subject_coefs;       // B, N x K
    std::optional<DenseTensor> mean_offset;
    Grid mean_grid;  // grid on which mean_offset was computed

    std::size_t dims() const noexcept { return bases.size(); }
    Eigen::Index rank() const noexcept { return coefs.empty() ? 0 : coefs.front().cols(); }
    Eigen::Index subjects() const noexcept { return subject_coefs.rows(); }

    void validate() const {
        detail::require(!bases.empty(), "model: no marginal bases");
        detail::require(coefs.size() == bases.size(), "model: need one coefficient matrix per basis");
        const auto k = rank();
        detail::require(k >= 1, "model: rank must be >= 1");
        for (std::size_t d = 0; d < bases.size(); ++d) {
            detail::require(coefs[d].cols() == k, "model: coefficient matrices disagree on rank");
            detail::require(coefs[d].rows() == bases[d].rank(),
                            "model: coefficient matrix " + std::to_string(d) + " rows must equal basis rank");
        }
        detail::require(subject_coefs.cols() == k, "model: subject coefficient columns must equal rank");
        if (mean_offset) {
            detail::require(mean_grid.size() == bases.size() && mean_offset->order() == bases.size(),
                            "model: mean offset must have one mode per dimension");
            for (std::size_t d = 0; d < bases.size(); ++d)
                detail::require(mean_offset->dim(d) == mean_grid[d].size(), "model: mean offset shape mismatch");
        }
    }
};

/// Phi_d(grid_d) C_d for every dimension: the marginal functions xi on the grid.
inline std::vector<Matrix> marginal_values(const MPBModel& model, const Grid& grid, int deriv = 0) {
    detail::require(grid.size() == model.dims(), "grid has " + std::to_string(grid.size()) +
                                                     " dimensions, model has " + std::to_string(model.dims()));
    std::vector<Matrix> out;
    for (std::size_t d = 0; d < model.dims(); ++d) out.push_back(model.bases[d].evaluate(grid[d], deriv) * model.coefs[d]);
    return out;
}

/// zeta_k at scattered points; `points` is (#points x D).
inline Matrix evaluate_basis(const MPBModel& model, const Matrix& points) {
    model.validate();
    detail::require(static_cast<std::size_t>(points.cols()) == model.dims(), "evaluate_basis: points must have D columns");
    Matrix out = Matrix::Ones(points.rows(), model.rank());
    for (std::size_t d = 0; d < model.dims(); ++d) {
        const Vector x = points.col(static_cast<Eigen::Index>(d));
        const Matrix xi = model.bases[d].evaluate(std::span<const double>(x.data(), static_cast<std::size_t>(x.size()))) *
                          model.coefs[d];
        out.array() *= xi.array();
    }
    return out;
}

namespace detail {

inline bool same_grid(const Grid& a, const Grid& b) { return a == b; }

}  // namespace detail

/// (|g_0|, ..., |g_{D-1}|, K) tensor of zeta_k on a product grid.
inline DenseTensor evaluate_zeta_grid(const MPBModel& model, const Grid& grid) {
    model.validate();
    auto f = marginal_values(model, grid);
    f.push_back(Matrix::Identity(model.rank(), model.rank()));
    return cp_full(f);
}

/// Fitted subject functions on a product grid: (|g_0|, ..., |g_{D-1}|, N).
inline DenseTensor evaluate_subjects(const MPBModel& model, const Grid& grid) {
    model.validate();
    if (model.mean_offset)
        detail::require(detail::same_grid(grid, model.mean_grid),
                        "evaluate_subjects: model carries a gridded mean but the requested grid differs");
    auto f = marginal_values(model, grid);
    f.push_back(model.subject_coefs);
    DenseTensor out = cp_full(f);
    if (model.mean_offset) {
        const auto n = static_cast<std::size_t>(model.subjects());
        const auto mean = model.mean_offset->data();
        auto data = out.data();
        for (std::size_t l = 0; l < mean.size(); ++l)
            for (std::size_t i = 0; i < n; ++i) data[l * n + i] += mean[l];
    }
    return out;
}

/// Per-dimension K x K matrices C_d' M_d C_d.
inline std::vector<Matrix> marginal_forms(const MPBModel& model, const std::vector<Matrix>& mats) {
    std::vector<Matrix> out;
    for (std::size_t d = 0; d < model.dims(); ++d) out.push_back(model.coefs[d].transpose() * mats[d] * model.coefs[d]);
    return out;
}

/// J_zeta(i, j) = <zeta_i, zeta_j> = prod_d c_{d,i}' J_phi_d c_{d,j}.
inline Matrix gram_zeta(const MPBModel& model) {
    model.validate();
    std::vector<Matrix> grams;
    for (const auto& b : model.bases) grams.push_back(gram_matrix(b));
    const auto j = marginal_forms(model, grams);
    Matrix out = Matrix::Ones(model.rank(), model.rank());
    for (const auto& m : j) out.array() *= m.array();
    return 0.5 * (out + out.transpose());
}

/// R_zeta(i, j) = <Laplacian zeta_i, Laplacian zeta_j>, assembled from the
/// marginal Gram, second-derivative penalty and cross matrices.
inline Matrix laplacian_penalty_zeta(const MPBModel& model) {
    model.validate();
    const std::size_t dd = model.dims();
    std::vector<Matrix> jphi, rphi, ephi;
    for (const auto& b : model.bases) {
        jphi.push_back(gram_matrix(b));
        rphi.push_back(penalty_matrix(b, PenaltyOperator{2}));
        ephi.push_back(cross_matrix(b));
    }
    const auto j = marginal_forms(model, jphi);
    const auto r = marginal_forms(model, rphi);
    const auto e = marginal_forms(model, ephi);  // e[d](i, j) = <xi_{d,i}, xi_{d,j}''>
    const auto k = model.rank();
    auto prod_j_except = [&](std::size_t skip1, std::size_t skip2) {
        Matrix p = Matrix::Ones(k, k);
        for (std::size_t b = 0; b < dd; ++b)
            if (b != skip1 && b != skip2) p.array() *= j[b].array();
        return p;
    };
    Matrix out = Matrix::Zero(k, k);
    for (std::size_t d = 0; d < dd; ++d) {
        out.array() += prod_j_except(d, d).array() * r[d].array();
        for (std::size_t a = 0; a < dd; ++a) {
            if (a == d) continue;
            // <xi_{d,i}'', xi_{d,j}> <xi_{a,i}, xi_{a,j}''>
            out.array() += prod_j_except(d, a).array() * e[d].transpose().array() * e[a].array();
        }
    }
    const double asym = (out - out.transpose()).norm();
    if (asym > 1e-8 * std::max(out.norm(), 1e-300))
        throw NumericalError("laplacian_penalty_zeta: assembled matrix is not symmetric");
    return 0.5 * (out + out.transpose());
}

struct Projection {
    Matrix coefs;               // N_new x K
    Vector residual_norms;      // ||y_i - fitted_i||_2 on the grid, per subject
    double squared_error = 0.0; // sum of squared residuals over all grid points and subjects
};

/// Discrete least-squares coefficients of gridded observations on span(zeta).
/// `y` has shape (|g_0|, ..., |g_{D-1}|, N_new), or omits the subject mode for a single function.
inline Projection project(const MPBModel& model, const DenseTensor& y_in, const Grid& grid) {
    model.validate();
    const std::size_t dd = model.dims();
    DenseTensor y = y_in;
    if (y.order() == dd) {
        Dims dims = y.dims();
        dims.push_back(1);
        y = DenseTensor(dims, y.values());
    }
    detail::require(y.order() == dd + 1, "project: data tensor has wrong order");
    for (std::size_t d = 0; d < dd; ++d)
        detail::require(y.dim(d) == grid.at(d).size(), "project: data extent in dimension " + std::to_string(d) +
                                                           " does not match the grid");
    const std::size_t n = y.dim(dd);
    if (model.mean_offset) {
        detail::require(detail::same_grid(grid, model.mean_grid),
                        "project: model carries a gridded mean but the grid differs");
        const auto mean = model.mean_offset->data();
        auto data = y.data();
        for (std::size_t l = 0; l < mean.size(); ++l)
            for (std::size_t i = 0; i < n; ++i) data[l * n + i] -= mean[l];
    }
    const auto xi = marginal_values(model, grid);
    const Matrix normal = gram_of_khatri_rao(xi);
    const Matrix rhs = mttkrp(y, xi, dd);  // N x K
    const Eigen::LDLT<Matrix> ldlt(normal);
    if (ldlt.info() != Eigen::Success || !(ldlt.rcond() > 1e-13))
        throw NumericalError("project: evaluated basis is (numerically) rank deficient on this grid");
    Projection p;
    p.coefs = ldlt.solve(rhs.transpose()).transpose();
    auto f = xi;
    f.push_back(p.coefs);
    const DenseTensor fitted = cp_full(f);
    p.residual_norms = Vector::Zero(static_cast<Eigen::Index>(n));
    const auto yv = y.data();
    const auto fv = fitted.data();
    for (std::size_t l = 0; l < yv.size(); ++l) {
        const double r = yv[l] - fv[l];
        p.residual_norms(static_cast<Eigen::Index>(l % n)) += r * r;
    }
    p.squared_error = p.residual_norms.sum();
    p.residual_norms = p.residual_norms.cwiseSqrt();
    return p;
}

/// L2 projection coefficients J_zeta^{-1} <U, zeta_k> from supplied inner products
/// (rows: functions, columns: k).
inline Matrix project_continuous(const MPBModel& model, const Matrix& inner_products) {
    const Matrix j = gram_zeta(model);
    detail::require(inner_products.cols() == j.rows(), "project_continuous: need one inner product per basis function");
    const Eigen::LDLT<Matrix> ldlt(j);
    if (ldlt.info() != Eigen::Success || !(ldlt.rcond() > 1e-13))
        throw NumericalError("project_continuous: J_zeta is singular");
    return ldlt.solve(inner_products.transpose()).transpose();
}

/// Everything produced by one end-to-end fit.
struct FitOutcome {
    MPBModel model;
    SolverState state;
    DenseTensor g_hat;
    std::vector<MarginalFactorization> factorizations;
    std::vector<Matrix> penalty_transforms;
    double data_squared_norm = 0.0;        // ||Y||^2 after centering
    double compressed_squared_norm = 0.0;  // ||G||^2
    double residual_ratio = 0.0;           // ||G - model||^2 / ||G||^2
    double data_residual_ratio = 0.0;      // ||Y - fitted||^2 / ||Y||^2
};

/// Sample mean over the trailing subject mode.
inline DenseTensor subject_mean(const DenseTensor& y) {
    const std::size_t n = y.dim(y.order() - 1);
    Dims dims(y.dims().begin(), y.dims().end() - 1);
    DenseTensor mean(dims);
    const auto src = y.data();
    auto dst = mean.data();
    for (std::size_t l = 0; l < dst.size(); ++l) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += src[l * n + i];
        dst[l] = s / static_cast<double>(n);
    }
    return mean;
}

/// Reduce, fit and back-transform: gridded data to a continuous MPB model.
inline FitOutcome fit_model(const DenseTensor& y_in, const Grid& grid, const std::vector<MarginalBasis>& bases,
                            const std::vector<PenaltyOperator>& ops, const SolverConfig& cfg, bool center = false,
                            const SolverState* warm_start = nullptr) {
    const std::size_t dd = bases.size();
    detail::require(dd >= 1, "fit_model: need at least one marginal basis");
    detail::require(y_in.order() == dd + 1, "fit_model: data tensor must have " + std::to_string(dd + 1) +
                                                " modes (grid dims + subjects), got " + std::to_string(y_in.order()));
    detail::require(grid.size() == dd && ops.size() == dd, "fit_model: grids and penalty operators must match bases");
    cfg.validate(dd);
    FitOutcome out;
    DenseTensor y = y_in;
    if (center) {
        DenseTensor mean = subject_mean(y);
        const std::size_t n = y.dim(dd);
        auto data = y.data();
        const auto mv = mean.data();
        for (std::size_t l = 0; l < mv.size(); ++l)
            for (std::size_t i = 0; i < n; ++i) data[l * n + i] -= mv[l];
        out.model.mean_offset = std::move(mean);
        out.model.mean_grid = grid;
    }
    for (std::size_t d = 0; d < dd; ++d) {
        detail::require(y.dim(d) == grid[d].size(), "fit_model: grid " + std::to_string(d) + " has " +
                                                        std::to_string(grid[d].size()) + " points but the data has " +
                                                        std::to_string(y.dim(d)));
        const Matrix phi = bases[d].evaluate(grid[d]);
        out.factorizations.push_back(factorize(phi, "dimension " + std::to_string(d)));
        const Matrix r = cfg.lambda(d) > 0.0 ? penalty_matrix(bases[d], ops[d])
                                             : Matrix(Matrix::Zero(bases[d].rank(), bases[d].rank()));
        out.penalty_transforms.push_back(penalty_transform(out.factorizations[d], r));
    }
    out.g_hat = compress(y, out.factorizations);
    out.state = warm_start ? fit(out.g_hat, out.penalty_transforms, cfg, *warm_start)
                           : fit(out.g_hat, out.penalty_transforms, cfg);
    out.data_squared_norm = y.squared_norm();
    out.compressed_squared_norm = out.g_hat.squared_norm();
    const double resid = residual_squared(out.g_hat, out.state.c_tilde, out.state.b);
    out.residual_ratio = out.compressed_squared_norm > 0.0 ? resid / out.compressed_squared_norm : 0.0;
    // ||Y - fitted||^2 = resid + ||Y - U U' Y||^2; the second term is formed
    // directly since ||Y||^2 - ||G||^2 cancels catastrophically for in-span data.
    DenseTensor outside = y;
    const auto back = decompress(out.g_hat, out.factorizations);
    for (std::size_t i = 0; i < outside.size(); ++i) outside.data()[i] -= back.data()[i];
    out.data_residual_ratio = out.data_squared_norm > 0.0 ? (resid + outside.squared_norm()) / out.data_squared_norm : 0.0;
    out.model.bases = bases;
    for (std::size_t d = 0; d < dd; ++d)
        out.model.coefs.push_back(back_transform(out.factorizations[d], out.state.c_tilde[d]));
    out.model.subject_coefs = out.state.b;
    return out;
}

}  // namespace mpb
