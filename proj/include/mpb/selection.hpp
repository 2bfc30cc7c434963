#pragma once

// Hyperparameter selection: marginal-rank variance criterion, global-rank
// normalized residual, and subject-fold cross-validation over (lambda_f, lambda_coef).

#include <algorithm>
#include <future>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "mpb/basis.hpp"
#include "mpb/error.hpp"
#include "mpb/model.hpp"
#include "mpb/reduction.hpp"
#include "mpb/solver.hpp"

namespace mpb {

enum class CriterionKind { MarginalVariance, NormalizedResidual, CvError };

inline const char* to_string(CriterionKind k) {
    switch (k) {
        case CriterionKind::MarginalVariance: return "marginal_variance";
        case CriterionKind::NormalizedResidual: return "normalized_residual";
        case CriterionKind::CvError: return "cv_error";
    }
    return "?";
}

struct SelectionRecord {
    std::vector<double> params;
    double criterion = 0.0;
    bool chosen = false;
};

struct SelectionReport {
    CriterionKind kind = CriterionKind::MarginalVariance;
    std::vector<std::string> param_names;
    std::vector<SelectionRecord> records;

    std::size_t chosen_index() const {
        for (std::size_t i = 0; i < records.size(); ++i)
            if (records[i].chosen) return i;
        throw ValidationError("selection report has no chosen record");
    }

    void write_csv(std::ostream& os) const {
        for (const auto& n : param_names) os << n << ',';
        os << "criterion,chosen\n";
        os.precision(17);
        for (const auto& r : records) {
            for (double p : r.params) os << p << ',';
            os << r.criterion << ',' << (r.chosen ? 1 : 0) << '\n';
        }
    }
};

/// ||Y x_d U_d'||^2 / ||Y||^2 for the given bases evaluated on `grid`.
inline double marginal_rank_criterion(const DenseTensor& y, const Grid& grid, const std::vector<MarginalBasis>& bases) {
    detail::require(y.order() == bases.size() + 1 && grid.size() == bases.size(),
                    "marginal_rank_criterion: need one basis and grid per marginal mode");
    const double norm = y.squared_norm();
    detail::require(norm > 0.0, "marginal_rank_criterion: zero-norm data");
    std::vector<MarginalFactorization> f;
    for (std::size_t d = 0; d < bases.size(); ++d)
        f.push_back(factorize(bases[d].evaluate(grid[d]), "dimension " + std::to_string(d)));
    return std::clamp(compress(y, f).squared_norm() / norm, 0.0, 1.0);
}

/// Evaluates candidates in order; the first meeting `threshold` is chosen
/// (the largest ratio if none does). Record params are the candidate ranks.
inline SelectionReport marginal_rank_sweep(const DenseTensor& y, const Grid& grid,
                                           const std::vector<std::vector<MarginalBasis>>& candidates,
                                           double threshold = 0.90) {
    detail::require(!candidates.empty(), "marginal_rank_sweep: no candidates");
    SelectionReport rep;
    rep.kind = CriterionKind::MarginalVariance;
    for (std::size_t d = 0; d < grid.size(); ++d) rep.param_names.push_back("m" + std::to_string(d));
    std::size_t pick = candidates.size();
    for (const auto& c : candidates) {
        SelectionRecord r;
        for (const auto& b : c) r.params.push_back(b.rank());
        r.criterion = marginal_rank_criterion(y, grid, c);
        if (pick == candidates.size() && r.criterion >= threshold) pick = rep.records.size();
        rep.records.push_back(std::move(r));
    }
    if (pick == candidates.size())
        pick = static_cast<std::size_t>(std::max_element(rep.records.begin(), rep.records.end(),
                                                         [](const auto& a, const auto& b) { return a.criterion < b.criterion; }) -
                                        rep.records.begin());
    rep.records[pick].chosen = true;
    return rep;
}

/// ||G - model||^2 / ||G||^2.
inline double global_rank_criterion(const DenseTensor& g, const SolverState& s) { return residual_ratio(g, s); }

/// Rank K+1 starting point from a rank-K state: a zero subject column and a
/// random unit factor column, so the starting objective equals the rank-K one.
inline SolverState pad_state(const SolverState& s, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    SolverState out = s;
    out.objective_trace.clear();
    out.warnings.clear();
    const auto k = static_cast<Eigen::Index>(s.rank());
    for (auto& c : out.c_tilde) {
        Matrix next(c.rows(), k + 1);
        next.leftCols(k) = c;
        next.col(k) = detail::random_unit_columns(c.rows(), 1, rng);
        c = std::move(next);
    }
    Matrix b = Matrix::Zero(s.b.rows(), k + 1);
    b.leftCols(k) = s.b;
    out.b = std::move(b);
    out.z.resize(0, 0);
    out.a_star.resize(0, 0);
    return out;
}

/// Fits each K in increasing order, warm-starting K from the previous fit
/// padded column by column. Chosen: smallest K with criterion <= threshold,
/// else the largest K.
inline SelectionReport global_rank_sweep(const DenseTensor& g, std::span<const Matrix> t_mats, SolverConfig cfg,
                                         std::vector<int> ranks, double threshold = 0.05) {
    detail::require(!ranks.empty(), "global_rank_sweep: no candidate ranks");
    std::sort(ranks.begin(), ranks.end());
    ranks.erase(std::unique(ranks.begin(), ranks.end()), ranks.end());
    detail::require(ranks.front() >= 1, "global_rank_sweep: ranks must be >= 1");
    SelectionReport rep;
    rep.kind = CriterionKind::NormalizedResidual;
    rep.param_names = {"K"};
    std::optional<SolverState> prev;
    for (int k : ranks) {
        cfg.rank = k;
        SolverState start = prev ? *prev : initial_state(g, cfg);
        while (static_cast<int>(start.rank()) < k) start = pad_state(start, cfg.seed + start.rank());
        prev = fit(g, t_mats, cfg, std::move(start));
        rep.records.push_back({{static_cast<double>(k)}, global_rank_criterion(g, *prev), false});
    }
    auto it = std::find_if(rep.records.begin(), rep.records.end(), [&](const auto& r) { return r.criterion <= threshold; });
    (it == rep.records.end() ? rep.records.back() : *it).chosen = true;
    return rep;
}

/// Sub-tensor of the given subjects (trailing mode).
inline DenseTensor select_subjects(const DenseTensor& y, const std::vector<std::size_t>& subjects) {
    const std::size_t n = y.dim(y.order() - 1);
    Dims dims = y.dims();
    dims.back() = subjects.size();
    DenseTensor out(dims);
    const std::size_t rows = y.size() / n;
    const auto src = y.data();
    auto dst = out.data();
    for (std::size_t l = 0; l < rows; ++l)
        for (std::size_t j = 0; j < subjects.size(); ++j) {
            detail::require(subjects[j] < n, "select_subjects: subject index out of range");
            dst[l * subjects.size() + j] = src[l * n + subjects[j]];
        }
    return out;
}

/// Fold index per subject: seeded shuffle, then round-robin.
inline std::vector<std::size_t> assign_folds(std::size_t n, std::size_t n_folds, std::uint64_t seed) {
    detail::require(n_folds >= 2, "cv: need at least 2 folds");
    detail::require(n >= n_folds, "cv: " + std::to_string(n) + " subjects cannot fill " + std::to_string(n_folds) + " folds");
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    // Fisher-Yates with an explicit draw so the order does not depend on the
    // standard library's shuffle implementation.
    for (std::size_t i = n; i-- > 1;) std::swap(perm[i], perm[static_cast<std::size_t>(rng() % (i + 1))]);
    std::vector<std::size_t> fold(n);
    for (std::size_t i = 0; i < n; ++i) fold[perm[i]] = i % n_folds;
    return fold;
}

inline std::vector<double> log_grid(double lo, double hi, std::size_t n) {
    detail::require(lo > 0.0 && hi >= lo && n >= 1, "log_grid: need 0 < lo <= hi and n >= 1");
    std::vector<double> out;
    for (double e : linspace(std::log10(lo), std::log10(hi), n)) out.push_back(std::pow(10.0, e));
    return out;
}

struct CvOptions {
    std::vector<double> lambda_f = log_grid(1e-10, 1e-2, 5);
    std::vector<double> lambda_coef = log_grid(1e-10, 1e-2, 5);
    std::size_t n_folds = 5;
    std::uint64_t seed = 0;
    bool center = false;
    unsigned threads = 1;
};

/// Mean held-out squared projection residual of one (lambda_f, lambda_coef) point.
inline double cv_error(const DenseTensor& y, const Grid& grid, const std::vector<MarginalBasis>& bases,
                       const std::vector<PenaltyOperator>& ops, SolverConfig cfg, double lambda_f, double lambda_coef,
                       const std::vector<std::size_t>& fold, std::size_t n_folds, bool center) {
    cfg.lambda_marginal.assign(bases.size(), lambda_f);
    cfg.lambda_coef = lambda_coef;
    double total = 0.0;
    const std::size_t points = y.size() / y.dim(y.order() - 1);
    for (std::size_t f = 0; f < n_folds; ++f) {
        std::vector<std::size_t> train, test;
        for (std::size_t i = 0; i < fold.size(); ++i) (fold[i] == f ? test : train).push_back(i);
        detail::require(!test.empty() && !train.empty(), "cv: fold " + std::to_string(f) + " is empty");
        const auto out = fit_model(select_subjects(y, train), grid, bases, ops, cfg, center);
        const auto p = project(out.model, select_subjects(y, test), grid);
        total += p.squared_error / static_cast<double>(points * test.size());
    }
    return total / static_cast<double>(n_folds);
}

/// Grid search; ties go to the larger (lambda_f, lambda_coef).
inline SelectionReport cv_lambda_grid(const DenseTensor& y, const Grid& grid, const std::vector<MarginalBasis>& bases,
                                      const std::vector<PenaltyOperator>& ops, const SolverConfig& cfg,
                                      const CvOptions& opt = {}) {
    detail::require(!opt.lambda_f.empty() && !opt.lambda_coef.empty(), "cv: empty lambda grid");
    for (double l : opt.lambda_f) detail::require(l >= 0.0, "cv: lambda_f values must be >= 0");
    for (double l : opt.lambda_coef) detail::require(l >= 0.0, "cv: lambda_coef values must be >= 0");
    const auto fold = assign_folds(y.dim(y.order() - 1), opt.n_folds, opt.seed);
    SelectionReport rep;
    rep.kind = CriterionKind::CvError;
    rep.param_names = {"lambda_f", "lambda_coef"};
    for (double lf : opt.lambda_f)
        for (double lb : opt.lambda_coef) rep.records.push_back({{lf, lb}, 0.0, false});

    auto eval = [&](std::size_t i) {
        return cv_error(y, grid, bases, ops, cfg, rep.records[i].params[0], rep.records[i].params[1], fold,
                        opt.n_folds, opt.center);
    };
    const unsigned threads = std::max(1u, opt.threads);
    for (std::size_t start = 0; start < rep.records.size(); start += threads) {
        std::vector<std::future<double>> jobs;
        const std::size_t stop = std::min(rep.records.size(), start + threads);
        for (std::size_t i = start; i < stop; ++i)
            jobs.push_back(std::async(threads > 1 ? std::launch::async : std::launch::deferred, eval, i));
        for (std::size_t i = start; i < stop; ++i) rep.records[i].criterion = jobs[i - start].get();
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < rep.records.size(); ++i) {
        const auto& a = rep.records[i];
        const auto& b = rep.records[best];
        if (a.criterion < b.criterion ||
            (a.criterion == b.criterion && std::tie(a.params[0], a.params[1]) > std::tie(b.params[0], b.params[1])))
            best = i;
    }
    rep.records[best].chosen = true;
    return rep;
}

}  // namespace mpb
