// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance [--only 4,5,...] [--known-fail 1,...]
//
// The process exits 0 when every failing criterion is listed in --known-fail
// (those still print FAIL), and 1 otherwise.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mpb/mpb.hpp"
#include "oracles.hpp"

using namespace mpb;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string sci(double v) { return fmt("%.3e", v); }

std::set<int> parse_list(const std::string& s) {
    std::set<int> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!tok.empty()) out.insert(std::stoi(tok));
    return out;
}

// max that treats a non-finite candidate as an infinitely bad value
double worse(double cur, double v) { return std::isfinite(v) ? std::max(cur, v) : INFINITY; }

double max_trace_increase(const std::vector<double>& trace) {
    if (trace.empty()) return 0.0;
    const double scale = std::max(std::abs(trace.front()), 1e-300);
    double worst = -1.0;
    for (std::size_t i = 1; i < trace.size(); ++i) worst = worse(worst, (trace[i] - trace[i - 1]) / scale);
    return worst;
}

// Traces of every fit run by criteria 8 and 11.
std::vector<std::vector<double>>& fit_traces() {
    static std::vector<std::vector<double>> t;
    return t;
}

// ---------------------------------------------------------------------------
// 1. Marginal product design: moMISE of the K=25, m=15 fit over 20 replications

Outcome criterion1() {
    const auto t0 = std::chrono::steady_clock::now();
    Sim51Config cfg;
    cfg.seed = 51;
    Sim51FitSpec spec;
    spec.marginal_rank = 15;
    spec.degree = 3;
    spec.penalty_order = 2;
    spec.solver.rank = 25;
    spec.solver.lambda_marginal.assign(3, 1e-3);
    spec.solver.lambda_coef = 1e-2;
    spec.solver.coef_penalty = CoefPenalty::Ridge;
    spec.solver.max_outer_iters = 3000;
    spec.solver.outer_tol = 1e-10;
    const int reps = 20;
    const auto recs = run_sim51(cfg, spec, reps);
    double momise = 0.0;
    for (const auto& r : recs) momise += r.mise / reps;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    // Least-squares projection of the noiseless truth onto the fitting spline space:
    // no estimator restricted to that space can score below it.
    double floor = 0.0;
    for (int r = 0; r < reps; ++r) {
        const auto d = generate_sim51(cfg, static_cast<std::uint64_t>(r));
        const auto basis = MarginalBasis::bspline(0, 1, spec.marginal_rank, spec.degree);
        std::vector<MarginalFactorization> f;
        for (int k = 0; k < 3; ++k) f.push_back(factorize(basis.evaluate(d.grid[static_cast<std::size_t>(k)])));
        floor += mise(d.truth, decompress(compress(d.truth, f), f), d.grid) / reps;
    }
    return {momise <= 0.01 && secs < 600.0,
            "moMISE " + fmt("%.4f", momise) + " over 20 replications (tol <= 0.01); spline-space projection floor " +
                fmt("%.4f", floor) + "; " + fmt("%.1f", secs) + " s (tol < 600)"};
}

// ---------------------------------------------------------------------------
// 2. Tensor-spline design: test MISE against K

Outcome criterion2() {
    const auto t0 = std::chrono::steady_clock::now();
    Sim52Config cfg;
    cfg.seed = 52;
    cfg.replications = 10;
    SolverConfig sc;
    sc.max_outer_iters = 2000;
    sc.outer_tol = 1e-10;
    sc.lambda_coef = 1e-10;
    const std::vector<int> ranks = {5, 10, 20, 30};
    const auto recs = run_sim52(cfg, ranks, sc);
    std::vector<double> mean(ranks.size(), 0.0);
    for (const auto& r : recs)
        for (std::size_t i = 0; i < ranks.size(); ++i)
            if (r.rank == ranks[i]) mean[i] += r.mise / cfg.replications;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool monotone = true;
    for (std::size_t i = 1; i < mean.size(); ++i) monotone = monotone && mean[i] < mean[i - 1];
    std::string d = "mean test MISE K=5/10/20/30: ";
    for (std::size_t i = 0; i < mean.size(); ++i) d += (i ? " / " : "") + sci(mean[i]);
    d += " (tol K=30 <= 0.06, strictly decreasing: " + std::string(monotone ? "yes" : "no") + "); " + fmt("%.1f", secs) +
         " s (tol < 900)";
    return {mean.back() <= 0.06 && monotone && secs < 900.0, d};
}

// ---------------------------------------------------------------------------
// 3. Two-stage FPCA recovers the leading eigen-subspace

Outcome criterion3() {
    Sim52Config cfg;
    cfg.seed = 53;
    cfg.test_subjects = 1;
    SolverConfig sc;
    sc.rank = 60;
    sc.max_outer_iters = 2000;
    sc.outer_tol = 1e-10;
    sc.lambda_coef = 1e-10;
    const int reps = 10;
    const std::vector<PenaltyOperator> ops(2, PenaltyOperator{2});
    double total = 0.0, worst = 1.0;
    for (int r = 0; r < reps; ++r) {
        const auto d = generate_sim52(cfg, static_cast<std::uint64_t>(r));
        sc.seed = split_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(r));
        const auto out = fit_model(d.train.values, d.grid, d.eigen.bases, ops, sc);
        FPCAOptions opt;
        opt.k_dagger = 5;
        const auto res = run_fpca(out.model, opt);
        const auto& c0 = out.model.coefs[0];
        const auto& c1 = out.model.coefs[1];
        const auto m1 = c1.rows();
        Matrix z(c0.rows() * m1, sc.rank);
        for (Eigen::Index k = 0; k < sc.rank; ++k)
            for (Eigen::Index a = 0; a < c0.rows(); ++a)
                for (Eigen::Index b = 0; b < m1; ++b) z(a * m1 + b, k) = c0(a, k) * c1(b, k);
        const Matrix inner = (z * res.s).transpose() * d.eigen.gram * d.eigen.psi_coefs.leftCols(5);
        const double align = inner.rowwise().squaredNorm().mean();
        total += align / reps;
        worst = std::min(worst, align);
    }
    return {total >= 0.95, "mean squared projection of psi_hat_1..5 onto the true span " + fmt("%.4f", total) +
                               " over 10 replications (tol >= 0.95); worst replication " + fmt("%.4f", worst)};
}

// ---------------------------------------------------------------------------
// 4. Objective equivalence under compression

Outcome criterion4() {
    std::mt19937_64 rng(404);
    double worst = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
        const std::size_t dd = 2 + static_cast<std::size_t>(rep % 2);
        Dims dims;
        std::vector<Matrix> phi, c, r;
        std::vector<MarginalFactorization> f;
        std::vector<double> lam;
        std::uniform_real_distribution<double> u(0.01, 2.0);
        const Eigen::Index k = 1 + rep % 4;
        for (std::size_t d = 0; d < dd; ++d) {
            const Eigen::Index m = 3 + static_cast<Eigen::Index>((rep + d) % 4);
            const Eigen::Index n = m + 2 + static_cast<Eigen::Index>(d);
            dims.push_back(static_cast<std::size_t>(n));
            phi.push_back(oracle::random_matrix(n, m, rng));
            c.push_back(oracle::random_matrix(m, k, rng));
            r.push_back(oracle::random_spd(m, rng, 0.0));
            f.push_back(factorize(phi.back()));
            lam.push_back(u(rng));
        }
        dims.push_back(static_cast<std::size_t>(3 + rep % 3));
        const auto y = oracle::random_tensor(dims, rng);
        const Matrix b = oracle::random_matrix(static_cast<Eigen::Index>(dims.back()), k, rng);
        const double lam_b = u(rng);
        const double full = oracle::cp_objective_full(y, phi, c, b, r, lam, lam_b);

        const auto g = compress(y, f);
        SolverState s;
        std::vector<Matrix> t;
        for (std::size_t d = 0; d < dd; ++d) {
            s.c_tilde.push_back(forward_transform(f[d], c[d]));
            t.push_back(penalty_transform(f[d], r[d]));
        }
        s.b = b;
        SolverConfig cfg;
        cfg.rank = static_cast<int>(k);
        cfg.lambda_marginal = lam;
        cfg.lambda_coef = lam_b;
        const double compressed = objective(g, s, t, cfg) + y.squared_norm() - g.squared_norm();
        worst = worse(worst, std::abs(compressed - full) / std::abs(full));
    }
    return {worst <= 1e-8, "max relative difference " + sci(worst) + " on 20 instances, D=2,3 (tol 1e-8)"};
}

// ---------------------------------------------------------------------------
// 5. Penalty identity in compressed coordinates vs quadrature

Outcome criterion5() {
    std::mt19937_64 rng(505);
    double worst = 0.0;
    for (int rep = 0; rep < 5; ++rep) {
        double lhs = 0.0, rhs = 0.0;
        for (int d = 0; d < 3; ++d) {
            const double a = -0.5 * d, b = 1.0 + 0.5 * rep;
            const int deg = 3 + (rep + d) % 2;
            const auto basis = MarginalBasis::bspline(a, b, 7 + d + rep % 3, deg);
            const PenaltyOperator op{1 + (rep + d) % 2};
            const double lam = 0.1 + 0.3 * d;
            const Matrix c = oracle::random_matrix(basis.rank(), 3, rng);
            const auto f = factorize(basis.evaluate(linspace(a, b, static_cast<std::size_t>(basis.rank()) + 9)));
            const Matrix t = penalty_transform(f, penalty_matrix(basis, op));
            const Matrix ct = forward_transform(f, c);
            lhs += lam * (ct.transpose() * t * ct).trace();
            for (Eigen::Index k = 0; k < 3; ++k) {
                const Vector ck = c.col(k);
                rhs += lam * oracle::simpson(
                                 [&](double x) {
                                     const double v = (basis.evaluate(std::vector<double>{x}, op.order) * ck)(0);
                                     return v * v;
                                 },
                                 a, b, 6000);
            }
        }
        worst = worse(worst, std::abs(lhs - rhs) / std::abs(rhs));
    }
    return {worst <= 1e-6, "max relative difference " + sci(worst) + " on 5 instances, D=3 (tol 1e-6)"};
}

// ---------------------------------------------------------------------------
// 6. Sylvester solver vs the Kronecker-vec system

Outcome criterion6() {
    std::mt19937_64 rng(606);
    double worst = 0.0;
    for (int rep = 0; rep < 50; ++rep) {
        const Eigen::Index k = 1 + rep % 6, m = 2 + rep % 9;
        std::uniform_real_distribution<double> u(1e-4, 10.0);
        const Matrix w = oracle::random_matrix(3 * k + 2, k, rng);
        const Matrix lhs = w.transpose() * w + 1e-8 * Matrix::Identity(k, k);
        const Matrix p = u(rng) * oracle::random_spd(m, rng, 0.0);
        const Matrix q = oracle::random_matrix(m, k, rng);
        const Matrix x = sylvester_solve(lhs, p, q);
        const Matrix a = oracle::kron(lhs.transpose(), Matrix::Identity(m, m)) + oracle::kron(Matrix::Identity(k, k), p);
        const Vector ref = a.fullPivLu().solve(oracle::vec(q));
        worst = worse(worst, (oracle::vec(x) - ref).norm() / ref.norm());
        worst = worse(worst, (x * lhs + p * x - q).norm() / q.norm());
    }
    return {worst <= 1e-9, "max relative residual/error " + sci(worst) + " on 50 instances (tol 1e-9)"};
}

// ---------------------------------------------------------------------------
// 7. ADMM lasso vs coordinate descent

Outcome criterion7() {
    std::mt19937_64 rng(707);
    double worst = 0.0, worst_res = 0.0;
    bool all_converged = true;
    int solves = 0;
    for (int rep = 0; rep < 5; ++rep) {
        const Dims dims{4, 3, 6};
        const auto g = oracle::random_tensor(dims, rng);
        SolverState s;
        s.c_tilde = {oracle::random_matrix(4, 3, rng), oracle::random_matrix(3, 3, rng)};
        s.b = oracle::random_matrix(6, 3, rng);
        SolverConfig cfg;
        cfg.rank = 3;
        cfg.coef_penalty = CoefPenalty::Lasso;
        cfg.admm_tol_primal = cfg.admm_tol_dual = 1e-9;
        cfg.admm_max_iters = 50000;
        const Matrix w = oracle::khatri_rao({s.c_tilde[1], s.c_tilde[0]});
        const Matrix gmat = oracle::unfold(g, 2);
        for (double lambda : {0.1, 1.0, 4.0, 16.0}) {
            cfg.lambda_coef = lambda;
            s.z.resize(0, 0);
            s.a_star.resize(0, 0);
            const auto r = update_b_admm(s, g, cfg);
            const double tol_scale = std::sqrt(6.0 * 3.0);
            all_converged = all_converged && r.converged;
            worst_res = worse(worse(worst_res, r.primal_residual / (cfg.admm_tol_primal * tol_scale)),
                              r.dual_residual / (cfg.admm_tol_dual * tol_scale));
            worst = worse(worst, (r.b - oracle::lasso_coordinate_descent(w, gmat, lambda)).cwiseAbs().maxCoeff());
            ++solves;
        }
    }
    return {worst <= 1e-5 && all_converged && worst_res <= 1.0,
            "max |B_admm - B_cd| " + sci(worst) + " over " + std::to_string(solves) +
                " solves, N=6, K=3 (tol 1e-5); max residual/tolerance " + fmt("%.3f", worst_res) + " (tol <= 1)"};
}

// ---------------------------------------------------------------------------
// 8. Monotone objective traces with mu > 0

Outcome criterion8() {
    std::mt19937_64 rng(808);
    for (int rep = 0; rep < 24; ++rep) {
        const Dims dims{6, 5, static_cast<std::size_t>(4 + rep % 3), 8};
        const auto g = oracle::random_tensor(dims, rng);
        std::vector<Matrix> t;
        for (std::size_t d = 0; d < 3; ++d) t.push_back(oracle::random_spd(static_cast<Eigen::Index>(dims[d]), rng, 0.0));
        SolverConfig cfg;
        cfg.rank = 2 + rep % 4;
        cfg.lambda_marginal = {0.05 * (1 + rep % 3), 0.2, 0.01};
        cfg.lambda_coef = rep % 2 ? 0.3 : 0.0;
        cfg.coef_penalty = rep % 4 < 2 ? CoefPenalty::Ridge : CoefPenalty::Lasso;
        cfg.proximal_mu = std::vector<double>{1e-8, 1e-4, 1e-2, 1e-1}[static_cast<std::size_t>(rep % 4)];
        cfg.max_outer_iters = 300;
        cfg.seed = static_cast<std::uint64_t>(rep);
        fit_traces().push_back(fit(g, t, cfg).objective_trace);
    }
    // Full pipeline on spline data with roughness penalties.
    Sim51Config sc;
    sc.points_per_dim = 14;
    sc.seed = 8;
    const auto d = generate_sim51(sc, 0);
    const std::vector<MarginalBasis> bases(3, MarginalBasis::bspline(0, 1, 8, 3));
    const std::vector<PenaltyOperator> ops(3, PenaltyOperator{2});
    for (auto pen : {CoefPenalty::Ridge, CoefPenalty::Lasso}) {
        SolverConfig cfg;
        cfg.rank = 6;
        cfg.lambda_marginal.assign(3, 1e-3);
        cfg.lambda_coef = 0.05;
        cfg.coef_penalty = pen;
        cfg.max_outer_iters = 400;
        fit_traces().push_back(fit_model(d.noisy, d.grid, bases, ops, cfg).state.objective_trace);
    }
    return {true, ""};  // verdict assembled in main once criterion 11's fits are in
}

// ---------------------------------------------------------------------------
// 9. J_zeta and R_zeta vs 2-D quadrature

Outcome criterion9() {
    std::mt19937_64 rng(909);
    double worst_j = 0.0, worst_r = 0.0;
    const std::vector<std::vector<MarginalBasis>> systems = {
        {MarginalBasis::bspline(0, 1, 8, 3), MarginalBasis::bspline(-1, 2, 6, 3)},
        {MarginalBasis::bspline(0, 2, 7, 4), MarginalBasis::bspline(0, 1, 9, 3)},
        {MarginalBasis::fourier(0, 1, 5, 1.0), MarginalBasis::bspline(0, 1, 6, 3)}};
    for (const auto& bases : systems) {
        MPBModel m;
        m.bases = bases;
        for (const auto& b : bases) m.coefs.push_back(oracle::random_matrix(b.rank(), 4, rng));
        m.subject_coefs = oracle::random_matrix(2, 4, rng);
        // Composite Simpson on a uniform 2-D grid.
        const int n = 1200;
        std::vector<std::vector<double>> x(2), w(2);
        for (int d = 0; d < 2; ++d) {
            const double a = bases[static_cast<std::size_t>(d)].lower(), b = bases[static_cast<std::size_t>(d)].upper();
            const double h = (b - a) / n;
            for (int i = 0; i <= n; ++i) {
                x[static_cast<std::size_t>(d)].push_back(a + i * h);
                w[static_cast<std::size_t>(d)].push_back(h / 3.0 * (i == 0 || i == n ? 1.0 : (i % 2 ? 4.0 : 2.0)));
            }
        }
        const Matrix v0 = bases[0].evaluate(x[0]) * m.coefs[0], v1 = bases[1].evaluate(x[1]) * m.coefs[1];
        const Matrix s0 = bases[0].evaluate(x[0], 2) * m.coefs[0], s1 = bases[1].evaluate(x[1], 2) * m.coefs[1];
        Matrix jq = Matrix::Zero(4, 4), rq = Matrix::Zero(4, 4);
        Vector z(4), lz(4);
        for (int i = 0; i <= n; ++i)
            for (int j = 0; j <= n; ++j) {
                const double wt = w[0][static_cast<std::size_t>(i)] * w[1][static_cast<std::size_t>(j)];
                for (int k = 0; k < 4; ++k) {
                    z(k) = v0(i, k) * v1(j, k);
                    lz(k) = s0(i, k) * v1(j, k) + v0(i, k) * s1(j, k);
                }
                jq.noalias() += wt * z * z.transpose();
                rq.noalias() += wt * lz * lz.transpose();
            }
        worst_j = worse(worst_j, oracle::rel_diff(gram_zeta(m), jq));
        worst_r = worse(worst_r, oracle::rel_diff(laplacian_penalty_zeta(m), rq));
    }
    return {worst_j <= 1e-6 && worst_r <= 1e-4,
            "J_zeta rel diff " + sci(worst_j) + " (tol 1e-6), R_zeta rel diff " + sci(worst_r) + " (tol 1e-4), 3 systems, D=2"};
}

// ---------------------------------------------------------------------------
// 10. FPCA constraints

Outcome criterion10() {
    std::mt19937_64 rng(1010);
    double norm_dev = 0.0, orth_dev = 0.0, var_dev = 0.0;
    int solves = 0;
    for (int rep = 0; rep < 6; ++rep) {
        MPBModel m;
        m.bases = {MarginalBasis::bspline(0, 1, 7 + rep % 3, 3), MarginalBasis::bspline(0, 2, 6, 3)};
        const Eigen::Index k = 3 + rep % 4;
        for (const auto& b : m.bases) m.coefs.push_back(oracle::random_matrix(b.rank(), k, rng));
        m.subject_coefs = oracle::random_matrix(25 + 5 * rep, k, rng);
        const Matrix j = gram_zeta(m), r = laplacian_penalty_zeta(m);
        for (double lambda : {0.0, 1e-4, 1e-2, 1.0}) {
            FPCAOptions opt;
            opt.lambda = lambda;
            opt.k_dagger = k;
            const auto res = run_fpca(m, opt);
            const Matrix sjs = res.s.transpose() * j * res.s;
            const Matrix slam = res.s.transpose() * (j + lambda * r) * res.s;
            for (Eigen::Index a = 0; a < k; ++a) {
                norm_dev = worse(norm_dev, std::abs(sjs(a, a) - 1.0));
                for (Eigen::Index b = 0; b < k; ++b)
                    if (a != b) orth_dev = worse(orth_dev, std::abs(slam(a, b)) / std::sqrt(slam(a, a) * slam(b, b)));
            }
            if (lambda == 0.0) {
                const Matrix cov = coef_covariance(res.scores);
                var_dev = worse(var_dev, (cov.diagonal() - res.nu).cwiseAbs().maxCoeff() / std::max(res.nu(0), 1.0));
            }
            ++solves;
        }
    }
    return {norm_dev <= 1e-8 && orth_dev <= 1e-8 && var_dev <= 1e-8,
            "max |s'Js - 1| " + sci(norm_dev) + ", max lambda-orthogonality defect " + sci(orth_dev) +
                ", max |var(score) - nu| at lambda=0 " + sci(var_dev) + " over " + std::to_string(solves) +
                " solves (tol 1e-8)"};
}

// ---------------------------------------------------------------------------
// 11. Noiseless in-class recovery

Outcome criterion11() {
    std::mt19937_64 rng(1111);
    std::string d;
    double worst = 0.0;
    for (int k : {1, 3}) {
        const Grid grid = {linspace(0, 1, 14), linspace(0, 2, 11), linspace(-1, 1, 12)};
        const std::vector<MarginalBasis> bases = {MarginalBasis::bspline(0, 1, 7, 3), MarginalBasis::bspline(0, 2, 6, 3),
                                                  MarginalBasis::bspline(-1, 1, 5, 2)};
        std::vector<Matrix> f;
        for (std::size_t dd = 0; dd < 3; ++dd)
            f.push_back(bases[dd].evaluate(grid[dd]) * oracle::random_matrix(bases[dd].rank(), k, rng));
        f.push_back(oracle::random_matrix(9, k, rng));
        const auto y = oracle::cp_full(f);
        SolverConfig cfg;
        cfg.rank = k;
        cfg.max_outer_iters = 5000;
        cfg.outer_tol = 1e-15;
        cfg.seed = 11;
        const auto out = fit_model(y, grid, bases, std::vector<PenaltyOperator>(3, PenaltyOperator{2}), cfg);
        fit_traces().push_back(out.state.objective_trace);
        // Residual against the data itself, not the solver's bookkeeping.
        const auto fitted = evaluate_subjects(out.model, grid);
        double num = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) num += std::pow(y.data()[i] - fitted.data()[i], 2);
        const double rel = std::sqrt(num / y.squared_norm());
        worst = worse(worst, rel);
        d += (d.empty() ? "" : ", ") + std::string("rank ") + std::to_string(k) + " relative residual " + sci(rel);
    }
    return {worst < 1e-6, d + " (tol < 1e-6)"};
}

// ---------------------------------------------------------------------------
// 12. Tensor kernels vs explicit loops

Outcome criterion12() {
    std::mt19937_64 rng(1212);
    double worst = 0.0;
    auto track = [&](double v) { worst = worse(worst, v); };
    const std::vector<Dims> shapes = {{5, 4}, {3, 4, 5}, {2, 3, 4, 5}, {4, 1, 3, 2}, {6, 5, 4, 3}};
    for (const auto& dims : shapes) {
        const auto t = oracle::random_tensor(dims, rng);
        const auto t2 = oracle::random_tensor(dims, rng);
        const Eigen::Index k = 3;
        std::vector<Matrix> all;
        for (std::size_t d : dims) all.push_back(oracle::random_matrix(static_cast<Eigen::Index>(d), k, rng));
        double ip = 0.0, nrm = 0.0;
        for (std::size_t i = 0; i < t.size(); ++i) {
            ip += t.data()[i] * t2.data()[i];
            nrm += std::abs(t.data()[i] * t2.data()[i]);
        }
        track(std::abs(inner_product(t, t2) - ip) / nrm);
        for (std::size_t d = 0; d < dims.size(); ++d) {
            const Matrix u = mode_unfold(t, d);
            track(oracle::rel_diff(u, oracle::unfold(t, d)));
            track(oracle::rel_diff(mode_fold(u, d, dims), t));
            const Matrix a = oracle::random_matrix(3, static_cast<Eigen::Index>(dims[d]), rng);
            track(oracle::rel_diff(mode_multiply(t, a, d), oracle::mode_product(t, a, d)));
            std::vector<Matrix> others;
            for (std::size_t e = 0; e < dims.size(); ++e)
                if (e != d) others.push_back(all[e]);
            track(oracle::rel_diff(mttkrp(t, others, d), oracle::mttkrp(t, all, d)));
        }
        const Matrix kr = khatri_rao(all);
        const Matrix kr_ref = oracle::khatri_rao(all);
        track(oracle::rel_diff(kr, kr_ref));
        track(oracle::rel_diff(gram_of_khatri_rao(all), kr_ref.transpose() * kr_ref));
        track(oracle::rel_diff(cp_full(all), oracle::cp_full(all)));
    }
    return {worst <= 1e-12, "max relative difference " + sci(worst) + " over unfold, fold, mode product, Khatri-Rao, "
                                                                       "Gram, MTTKRP, CP reconstruction, inner product "
                                                                       "(tol 1e-12)"};
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only, known;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--only" && i + 1 < argc)
            only = parse_list(argv[++i]);
        else if (a == "--known-fail" && i + 1 < argc)
            known = parse_list(argv[++i]);
        else {
            std::fprintf(stderr, "usage: acceptance [--only LIST] [--known-fail LIST]\n");
            return 2;
        }
    }
    const std::vector<std::pair<int, std::function<Outcome()>>> all = {
        {1, criterion1},  {2, criterion2},   {3, criterion3},   {4, criterion4},   {5, criterion5},   {6, criterion6},
        {7, criterion7},  {11, criterion11}, {8, criterion8},   {9, criterion9},   {10, criterion10}, {12, criterion12}};
    std::vector<std::pair<int, Outcome>> results;
    for (const auto& [id, fn] : all) {
        if (!only.empty() && !only.count(id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        if (id == 8) {
            double worst = -1.0;
            for (const auto& t : fit_traces()) worst = worse(worst, max_trace_increase(t));
            o = {worst <= 1e-10, "max relative objective increase " + sci(std::max(worst, 0.0)) + " over " +
                                     std::to_string(fit_traces().size()) + " fits, mu > 0 (slack 1e-10)"};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        o.detail += fmt(" [%.1f s]", secs);
        results.emplace_back(id, o);
    }
    std::sort(results.begin(), results.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    int failed = 0, unexpected = 0;
    for (const auto& [id, o] : results) {
        std::printf("criterion %2d  %s  %s\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str());
        if (!o.pass) {
            ++failed;
            if (!known.count(id)) ++unexpected;
        }
    }
    std::printf("%zu criteria: %zu pass, %d fail (%d not listed as known)\n", results.size(), results.size() - failed,
                failed, unexpected);
    std::fflush(stdout);
    return unexpected == 0 ? 0 : 1;
}
