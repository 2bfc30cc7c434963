#pragma once

// Block coordinate descent for the compressed, penalized CP problem
//
//   min || G - sum_k c~_{0,k} o ... o c~_{D-1,k} o b_k ||_F^2
//       + sum_d lambda_d tr(C~_d' T_d C~_d) + lambda_coef * l(B)
//
// Factor blocks are solved exactly through a symmetric Sylvester equation;
// the subject block B is solved in closed form (ridge, l = ||.||_F^2) or by
// ADMM with soft thresholding (lasso, l = ||.||_1).

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mpb/error.hpp"
#include "mpb/tensor.hpp"

namespace mpb {

enum class CoefPenalty { Ridge, Lasso };
enum class InitKind { RandomNormal, Hosvd };

struct SolverConfig {
    int rank = 1;
    std::vector<double> lambda_marginal;  // one per marginal dimension; empty means all zero
    double lambda_coef = 0.0;
    CoefPenalty coef_penalty = CoefPenalty::Ridge;
    int max_outer_iters = 200;
    double outer_tol = 1e-8;
    double admm_tol_primal = 1e-6;
    double admm_tol_dual = 1e-6;
    int admm_max_iters = 500;
    double proximal_mu = 1e-8;
    std::optional<double> fixed_gamma;  // unset: ||W'W||_F / K
    InitKind init = InitKind::RandomNormal;
    std::uint64_t seed = 0;

    double lambda(std::size_t d) const { return lambda_marginal.empty() ? 0.0 : lambda_marginal.at(d); }

    void validate(std::size_t marginal_dims) const {
        detail::require(rank >= 1, "solver.rank must be >= 1");
        detail::require(lambda_marginal.empty() || lambda_marginal.size() == marginal_dims,
                        "solver.lambda_marginal must have one entry per dimension (" +
                            std::to_string(marginal_dims) + ")");
        for (double l : lambda_marginal) detail::require(l >= 0.0 && std::isfinite(l), "solver.lambda_marginal must be >= 0");
        detail::require(lambda_coef >= 0.0 && std::isfinite(lambda_coef), "solver.lambda_coef must be >= 0");
        detail::require(max_outer_iters >= 1, "solver.max_outer_iters must be >= 1");
        detail::require(admm_max_iters >= 1, "solver.admm_max_iters must be >= 1");
        detail::require(outer_tol > 0.0, "solver.outer_tol must be > 0");
        detail::require(admm_tol_primal > 0.0 && admm_tol_dual > 0.0, "solver.admm tolerances must be > 0");
        detail::require(proximal_mu >= 0.0, "solver.proximal_mu must be >= 0");
        detail::require(!fixed_gamma || *fixed_gamma > 0.0, "solver.gamma must be > 0");
    }
};

struct SolverState {
    std::vector<Matrix> c_tilde;  // D matrices, m_d x K
    Matrix b;                     // N x K
    Matrix z;                     // K x N, ADMM split copy of B'
    Matrix a_star;                // N x K, scaled dual
    std::vector<double> objective_trace;
    bool converged = false;
    int iters = 0;
    bool admm_converged = true;  // false if any ADMM solve hit its iteration cap
    std::vector<std::string> warnings;

    std::size_t rank() const { return static_cast<std::size_t>(b.cols()); }
};

namespace detail {

// Factors of every mode except `skip`, in mode order (B is the last mode).
inline std::vector<Matrix> factors_except(const SolverState& s, std::size_t skip) {
    std::vector<Matrix> out;
    for (std::size_t d = 0; d < s.c_tilde.size(); ++d)
        if (d != skip) out.push_back(s.c_tilde[d]);
    if (skip != s.c_tilde.size()) out.push_back(s.b);
    return out;
}

inline void check_shapes(const DenseTensor& g, const SolverState& s) {
    require(g.order() == s.c_tilde.size() + 1, "solver: tensor order does not match factor count");
    const auto k = s.b.cols();
    for (std::size_t d = 0; d < s.c_tilde.size(); ++d)
        require(static_cast<std::size_t>(s.c_tilde[d].rows()) == g.dim(d) && s.c_tilde[d].cols() == k,
                "solver: factor " + std::to_string(d) + " has shape " + std::to_string(s.c_tilde[d].rows()) + "x" +
                    std::to_string(s.c_tilde[d].cols()) + ", expected " + std::to_string(g.dim(d)) + "x" +
                    std::to_string(k));
    require(static_cast<std::size_t>(s.b.rows()) == g.dim(g.order() - 1), "solver: B rows must equal subject count");
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace detail

/// Model tensor sum_k c~_{0,k} o ... o b_k.
inline DenseTensor cp_model(const std::vector<Matrix>& c_tilde, const Matrix& b) {
    std::vector<Matrix> f = c_tilde;
    f.push_back(b);
    return cp_full(f);
}

/// Above this many entries the residual is evaluated through Gram identities
/// instead of forming the model tensor.
inline constexpr std::size_t kMaterializeLimit = std::size_t{1} << 24;

/// ||G - model||_F^2.
inline double residual_squared(const DenseTensor& g, const std::vector<Matrix>& c_tilde, const Matrix& b,
                               bool materialize) {
    if (materialize) {
        const DenseTensor m = cp_model(c_tilde, b);
        return (g.as_vector() - m.as_vector()).squaredNorm();
    }
    const Matrix gw = mttkrp(g, c_tilde, c_tilde.size());  // N x K
    const double cross = (gw.array() * b.array()).sum();
    Matrix gram = gram_of_khatri_rao(c_tilde);
    gram.array() *= (b.transpose() * b).array();
    return std::max(0.0, g.squared_norm() - 2.0 * cross + gram.sum());
}

inline double residual_squared(const DenseTensor& g, const std::vector<Matrix>& c_tilde, const Matrix& b) {
    return residual_squared(g, c_tilde, b, g.size() <= kMaterializeLimit);
}

inline double coef_penalty_value(const Matrix& b, CoefPenalty kind) {
    return kind == CoefPenalty::Ridge ? b.squaredNorm() : b.cwiseAbs().sum();
}

/// Full penalized objective.
inline double objective(const DenseTensor& g, const SolverState& s, std::span<const Matrix> t_mats,
                        const SolverConfig& cfg, std::optional<bool> materialize = std::nullopt) {
    detail::check_shapes(g, s);
    detail::require(t_mats.size() == s.c_tilde.size(), "objective: need one penalty matrix per dimension");
    for (const auto& c : s.c_tilde)
        if (!detail::all_finite(c)) throw NumericalError("objective: non-finite factor matrix");
    if (!detail::all_finite(s.b)) throw NumericalError("objective: non-finite subject coefficients");
    double f = materialize ? residual_squared(g, s.c_tilde, s.b, *materialize) : residual_squared(g, s.c_tilde, s.b);
    for (std::size_t d = 0; d < s.c_tilde.size(); ++d) {
        const double lam = cfg.lambda(d);
        if (lam > 0.0) f += lam * (s.c_tilde[d].transpose() * t_mats[d] * s.c_tilde[d]).trace();
    }
    if (cfg.lambda_coef > 0.0) f += cfg.lambda_coef * coef_penalty_value(s.b, cfg.coef_penalty);
    return f;
}

/// Solves X m + p X = q for symmetric m (K x K) and symmetric p (r x r) by
/// diagonalizing both coefficient matrices.
inline Matrix sylvester_solve(const Matrix& m, const Matrix& p, const Matrix& q) {
    detail::require(m.rows() == m.cols() && p.rows() == p.cols(), "sylvester_solve: coefficient matrices must be square");
    detail::require(q.rows() == p.rows() && q.cols() == m.rows(), "sylvester_solve: right-hand side has wrong shape");
    const Eigen::SelfAdjointEigenSolver<Matrix> em(0.5 * (m + m.transpose()));
    const Eigen::SelfAdjointEigenSolver<Matrix> ep(0.5 * (p + p.transpose()));
    if (em.info() != Eigen::Success || ep.info() != Eigen::Success)
        throw NumericalError("sylvester_solve: eigendecomposition failed");
    const Vector& lm = em.eigenvalues();
    const Vector& lp = ep.eigenvalues();
    const double scale = std::max({lm.cwiseAbs().maxCoeff(), lp.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min()});
    Matrix y = ep.eigenvectors().transpose() * q * em.eigenvectors();
    for (Eigen::Index j = 0; j < y.cols(); ++j)
        for (Eigen::Index i = 0; i < y.rows(); ++i) {
            const double den = lp(i) + lm(j);
            if (!(std::abs(den) > 64.0 * std::numeric_limits<double>::epsilon() * scale))
                throw NumericalError("sylvester_solve: spectra of the two coefficient matrices overlap "
                                     "(singular system); increase proximal_mu");
            y(i, j) /= den;
        }
    return ep.eigenvectors() * y * em.eigenvectors().transpose();
}

/// Solves X (m + mu I) + p X = q for symmetric positive semidefinite m and p and mu > 0.
/// Rounding noise below zero in either spectrum is clamped, so every denominator is at least mu.
inline Matrix sylvester_solve_psd(const Matrix& m, const Matrix& p, const Matrix& q, double mu) {
    detail::require(mu > 0.0, "sylvester_solve_psd: mu must be > 0");
    detail::require(m.rows() == m.cols() && p.rows() == p.cols(), "sylvester_solve: coefficient matrices must be square");
    detail::require(q.rows() == p.rows() && q.cols() == m.rows(), "sylvester_solve: right-hand side has wrong shape");
    const Eigen::SelfAdjointEigenSolver<Matrix> em(0.5 * (m + m.transpose()));
    const Eigen::SelfAdjointEigenSolver<Matrix> ep(0.5 * (p + p.transpose()));
    if (em.info() != Eigen::Success || ep.info() != Eigen::Success)
        throw NumericalError("sylvester_solve: eigendecomposition failed");
    const Vector lm = em.eigenvalues().cwiseMax(0.0).array() + mu;
    const Vector lp = ep.eigenvalues().cwiseMax(0.0);
    Matrix y = ep.eigenvectors().transpose() * q * em.eigenvectors();
    for (Eigen::Index j = 0; j < y.cols(); ++j)
        for (Eigen::Index i = 0; i < y.rows(); ++i) y(i, j) /= lp(i) + lm(j);
    return ep.eigenvectors() * y * em.eigenvectors().transpose();
}

/// Exact minimizer of the block-d subproblem (with proximal term mu ||X - C~_d||^2).
inline Matrix update_factor(const SolverState& s, const DenseTensor& g, std::size_t d, const Matrix& t_d,
                            const SolverConfig& cfg) {
    detail::check_shapes(g, s);
    detail::require(d < s.c_tilde.size(), "update_factor: dimension out of range");
    const auto others = detail::factors_except(s, d);
    const auto k = static_cast<Eigen::Index>(s.rank());
    const Matrix wtw = gram_of_khatri_rao(others);
    const Matrix gw = mttkrp(g, others, d);  // m_d x K
    const double mu = cfg.proximal_mu;
    const Matrix lhs = wtw + mu * Matrix::Identity(k, k);
    const Matrix rhs = gw + mu * s.c_tilde[d];
    const double lam = cfg.lambda(d);
    const Matrix pen = lam * t_d;
    Matrix next = mu > 0.0 ? sylvester_solve_psd(wtw, pen, rhs, mu) : sylvester_solve(lhs, pen, rhs);
#ifndef NDEBUG
    auto conditional = [&](const Matrix& x) {
        return -2.0 * (x.array() * gw.array()).sum() + (x * wtw * x.transpose()).trace() +
               lam * (x.transpose() * t_d * x).trace();
    };
    const double before = conditional(s.c_tilde[d]);
    const double after = conditional(next);
    assert(after <= before + 1e-8 * (std::abs(before) + g.squared_norm() + 1.0));
#endif
    return next;
}

/// Entrywise sign(x) max(|x| - kappa, 0).
inline Matrix soft_threshold(const Matrix& x, double kappa) {
    detail::require(kappa >= 0.0, "soft_threshold: kappa must be >= 0");
    return x.unaryExpr([kappa](double v) { return v > kappa ? v - kappa : (v < -kappa ? v + kappa : 0.0); });
}

/// Closed-form ridge update: B' = (W'W + lambda I)^{-1} W' G.
inline Matrix update_b_ridge(const SolverState& s, const DenseTensor& g, const SolverConfig& cfg) {
    detail::check_shapes(g, s);
    const std::size_t last = s.c_tilde.size();
    const auto k = static_cast<Eigen::Index>(s.rank());
    const Matrix normal = gram_of_khatri_rao(s.c_tilde) + cfg.lambda_coef * Matrix::Identity(k, k);
    const Matrix gw = mttkrp(g, s.c_tilde, last);  // N x K
    const Eigen::LLT<Matrix> llt(normal);
    if (llt.info() != Eigen::Success || !(llt.rcond() > 1e-14))
        throw NumericalError("update_b_ridge: singular normal matrix (rank-deficient factors with lambda_coef = 0)");
    return llt.solve(gw.transpose()).transpose();
}

struct AdmmResult {
    Matrix b;
    Matrix z;
    Matrix a_star;
    int iters = 0;
    bool converged = false;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    double gamma = 0.0;
};

/// Scaled-form ADMM for the lasso subject update, warm-started from s.z and s.a_star.
inline AdmmResult update_b_admm(const SolverState& s, const DenseTensor& g, const SolverConfig& cfg) {
    detail::check_shapes(g, s);
    const std::size_t last = s.c_tilde.size();
    const auto k = static_cast<Eigen::Index>(s.rank());
    const auto n = s.b.rows();
    const Matrix wtw = gram_of_khatri_rao(s.c_tilde);
    const Matrix wtg = mttkrp(g, s.c_tilde, last).transpose();  // K x N
    double gamma = cfg.fixed_gamma ? *cfg.fixed_gamma : wtw.norm() / static_cast<double>(k);
    if (!(gamma > 0.0)) gamma = 1.0;
    const Eigen::LLT<Matrix> llt(wtw + gamma * Matrix::Identity(k, k));
    if (llt.info() != Eigen::Success) throw NumericalError("update_b_admm: factorization of W'W + gamma I failed");

    AdmmResult r;
    r.gamma = gamma;
    r.z = (s.z.rows() == k && s.z.cols() == n) ? s.z : Matrix(s.b.transpose());
    r.a_star = (s.a_star.rows() == n && s.a_star.cols() == k) ? s.a_star : Matrix::Zero(n, k);
    const double scale = std::sqrt(static_cast<double>(n * k));
    const double kappa = cfg.lambda_coef / (2.0 * gamma);
    for (int it = 1; it <= cfg.admm_max_iters; ++it) {
        r.b = soft_threshold(r.z.transpose() - r.a_star, kappa);
        const Matrix z_prev = r.z;
        r.z = llt.solve(wtg + gamma * (r.b + r.a_star).transpose());
        r.a_star += r.b - r.z.transpose();
        r.primal_residual = (r.b - r.z.transpose()).norm();
        r.dual_residual = gamma * (r.z - z_prev).norm();
        r.iters = it;
        if (r.primal_residual <= cfg.admm_tol_primal * scale && r.dual_residual <= cfg.admm_tol_dual * scale) {
            r.converged = true;
            break;
        }
    }
    return r;
}

/// Residual ||G - model||^2 / ||G||^2.
inline double residual_ratio(const DenseTensor& g, const SolverState& s) {
    const double norm = g.squared_norm();
    detail::require(norm > 0.0, "residual_ratio: zero-norm tensor");
    return residual_squared(g, s.c_tilde, s.b) / norm;
}

/// Fixes the CP gauge: unit-norm factor columns with the magnitude moved into B,
/// largest-magnitude entry of each factor column positive, and components
/// ordered by decreasing weight.
inline void normalize_gauge(SolverState& s) {
    const auto k = static_cast<Eigen::Index>(s.rank());
    const bool has_z = s.z.rows() == k && s.z.cols() == s.b.rows();
    const bool has_a = s.a_star.rows() == s.b.rows() && s.a_star.cols() == k;
    for (Eigen::Index c = 0; c < k; ++c) {
        double factor = 1.0;
        for (auto& cd : s.c_tilde) {
            const double norm = cd.col(c).norm();
            if (norm == 0.0) continue;
            Eigen::Index at = 0;
            cd.col(c).cwiseAbs().maxCoeff(&at);
            const double sign = cd(at, c) < 0.0 ? -1.0 : 1.0;
            cd.col(c) *= sign / norm;
            factor *= sign * norm;
        }
        s.b.col(c) *= factor;
        if (has_z) s.z.row(c) *= factor;
        if (has_a) s.a_star.col(c) *= factor;
    }
    std::vector<Eigen::Index> order(static_cast<std::size_t>(k));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::vector<double> weight(static_cast<std::size_t>(k));
    for (Eigen::Index c = 0; c < k; ++c) {
        double w = s.b.col(c).norm();
        for (const auto& cd : s.c_tilde) w *= cd.col(c).norm();
        weight[static_cast<std::size_t>(c)] = w;
    }
    std::stable_sort(order.begin(), order.end(), [&](auto i, auto j) {
        return weight[static_cast<std::size_t>(i)] > weight[static_cast<std::size_t>(j)];
    });
    auto reorder_cols = [&](Matrix& m) {
        Matrix out(m.rows(), m.cols());
        for (Eigen::Index c = 0; c < k; ++c) out.col(c) = m.col(order[static_cast<std::size_t>(c)]);
        m = std::move(out);
    };
    for (auto& cd : s.c_tilde) reorder_cols(cd);
    reorder_cols(s.b);
    if (has_a) reorder_cols(s.a_star);
    if (has_z) {
        Matrix zt = s.z.transpose();
        reorder_cols(zt);
        s.z = zt.transpose();
    }
}

namespace detail {

inline Matrix random_unit_columns(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
    for (Eigen::Index j = 0; j < cols; ++j) {
        const double n = m.col(j).norm();
        if (n > 0.0) m.col(j) /= n;
    }
    return m;
}

inline Matrix leading_left_vectors(const DenseTensor& g, std::size_t d, Eigen::Index k, std::mt19937_64& rng) {
    const Matrix unf = mode_unfold(g, d);
    const Eigen::SelfAdjointEigenSolver<Matrix> es(unf * unf.transpose());
    const auto m = unf.rows();
    Matrix out(m, k);
    const Eigen::Index take = std::min(k, m);
    for (Eigen::Index j = 0; j < take; ++j) out.col(j) = es.eigenvectors().col(m - 1 - j);
    if (k > m) out.rightCols(k - m) = random_unit_columns(m, k - m, rng);
    return out;
}

inline void update_b(SolverState& s, const DenseTensor& g, const SolverConfig& cfg) {
    if (cfg.coef_penalty == CoefPenalty::Ridge) {
        s.b = update_b_ridge(s, g, cfg);
        return;
    }
    auto r = update_b_admm(s, g, cfg);
    if (!r.converged) s.admm_converged = false;
    s.z = std::move(r.z);
    s.a_star = std::move(r.a_star);
    // An inexact ADMM iterate may be worse than the current block; keep whichever is lower.
    if (s.b.cwiseAbs().sum() > 0.0) {
        const Matrix wtw = gram_of_khatri_rao(s.c_tilde);
        const Matrix gw = mttkrp(g, s.c_tilde, s.c_tilde.size());
        auto conditional = [&](const Matrix& b) {
            return (b * wtw).cwiseProduct(b).sum() - 2.0 * gw.cwiseProduct(b).sum() + cfg.lambda_coef * b.cwiseAbs().sum();
        };
        if (conditional(r.b) > conditional(s.b)) return;
    }
    s.b = std::move(r.b);
}

}  // namespace detail

/// Initial factors per cfg.init; B is then obtained from its own block update.
inline SolverState initial_state(const DenseTensor& g, const SolverConfig& cfg) {
    detail::require(g.order() >= 2, "fit: tensor needs at least one marginal mode and the subject mode");
    const std::size_t dims = g.order() - 1;
    cfg.validate(dims);
    const auto k = static_cast<Eigen::Index>(cfg.rank);
    std::mt19937_64 rng(cfg.seed);
    SolverState s;
    for (std::size_t d = 0; d < dims; ++d) {
        const auto m = static_cast<Eigen::Index>(g.dim(d));
        s.c_tilde.push_back(cfg.init == InitKind::Hosvd ? detail::leading_left_vectors(g, d, k, rng)
                                                        : detail::random_unit_columns(m, k, rng));
    }
    s.b = Matrix::Zero(static_cast<Eigen::Index>(g.dim(dims)), k);
    detail::update_b(s, g, cfg);
    return s;
}

/// Runs block coordinate descent from `state` until the relative objective
/// change drops below cfg.outer_tol or cfg.max_outer_iters sweeps are done.
inline SolverState fit(const DenseTensor& g, std::span<const Matrix> t_mats, const SolverConfig& cfg, SolverState state) {
    const std::size_t dims = g.order() - 1;
    cfg.validate(dims);
    detail::check_shapes(g, state);
    detail::require(t_mats.size() == dims, "fit: need one penalty matrix per dimension");
    for (std::size_t d = 0; d < dims; ++d)
        detail::require(static_cast<std::size_t>(t_mats[d].rows()) == g.dim(d) && t_mats[d].rows() == t_mats[d].cols(),
                        "fit: penalty matrix " + std::to_string(d) + " has wrong shape");
    detail::require(static_cast<std::size_t>(cfg.rank) == state.rank(), "fit: initial state rank differs from config");
    std::size_t prod_m = 1;
    for (std::size_t d = 0; d < dims; ++d) prod_m *= g.dim(d);
    if (static_cast<std::size_t>(cfg.rank) > prod_m)
        state.warnings.push_back("rank " + std::to_string(cfg.rank) + " exceeds the product of marginal ranks (" +
                                 std::to_string(prod_m) + ")");

    const double gnorm = g.squared_norm();
    double prev = objective(g, state, t_mats, cfg);
    state.objective_trace.assign(1, prev);
    state.converged = false;
    for (int it = 1; it <= cfg.max_outer_iters; ++it) {
        for (std::size_t d = 0; d < dims; ++d) {
            state.c_tilde[d] = update_factor(state, g, d, t_mats[d], cfg);
            if (!state.c_tilde[d].allFinite())
                throw NumericalError("fit: factor block " + std::to_string(d) + " became non-finite at sweep " +
                                     std::to_string(it));
        }
        detail::update_b(state, g, cfg);
        if (!state.b.allFinite())
            throw NumericalError("fit: subject block became non-finite at sweep " + std::to_string(it));
        const double f = objective(g, state, t_mats, cfg);
        if (!std::isfinite(f)) throw NumericalError("fit: objective became non-finite at sweep " + std::to_string(it));
        state.objective_trace.push_back(f);
        state.iters = it;
        const double ref = std::max(std::abs(prev), 1e-12 * gnorm);
        if (std::abs(prev - f) <= cfg.outer_tol * ref || f == 0.0) {
            state.converged = true;
            break;
        }
        prev = f;
    }
    if (!state.admm_converged) state.warnings.push_back("ADMM hit admm_max_iters in at least one subject update");
    normalize_gauge(state);
    return state;
}

inline SolverState fit(const DenseTensor& g, std::span<const Matrix> t_mats, const SolverConfig& cfg) {
    return fit(g, t_mats, cfg, initial_state(g, cfg));
}

}  // namespace mpb
