#pragma once

// Simulation designs and error metrics:
//  - a marginal product Gaussian model on [0,1]^D with Fourier marginals,
//  - a 2-D Gaussian process with non-separable eigenfunctions built from a
//    tensor-product spline system,
//  - trapezoid-rule MISE.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mpb/basis.hpp"
#include "mpb/error.hpp"
#include "mpb/model.hpp"
#include "mpb/quadrature.hpp"
#include "mpb/solver.hpp"
#include "mpb/tensor.hpp"

namespace mpb {

/// Deterministic stream splitting: seed for replication `index` of `master`.
inline std::uint64_t split_seed(std::uint64_t master, std::uint64_t index) {
    std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

namespace detail {

inline Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, double sd, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, sd);
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = n(rng);
    return m;
}

/// Orthogonal Q of a Gaussian matrix with the R diagonal made positive.
inline Matrix random_orthogonal(Eigen::Index n, std::mt19937_64& rng) {
    const Matrix a = normal_matrix(n, n, 1.0, rng);
    const Eigen::HouseholderQR<Matrix> qr(a);
    Matrix q = qr.householderQ() * Matrix::Identity(n, n);
    const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < n; ++j)
        if (r(j, j) < 0.0) q.col(j) = -q.col(j);
    return q;
}

inline Vector decay_spectrum(Eigen::Index k, double rate) {
    Vector d(k);
    for (Eigen::Index i = 0; i < k; ++i) d(i) = std::exp(-rate * static_cast<double>(i + 1));
    return d;
}

}  // namespace detail

/// Trapezoid weights on a product grid, flattened last-index-fastest.
inline std::vector<double> product_trapezoid_weights(const Grid& grid) {
    std::vector<double> w{1.0};
    for (const auto& g : grid) {
        const auto wd = trapezoid_weights(g);
        std::vector<double> next;
        next.reserve(w.size() * wd.size());
        for (double a : w)
            for (double b : wd) next.push_back(a * b);
        w = std::move(next);
    }
    return w;
}

/// sum_i integral (truth_i - estimate_i)^2 by the trapezoid rule; both tensors
/// are (|g_0|, ..., |g_{D-1}|, N) evaluations on `grid`.
inline double mise(const DenseTensor& truth, const DenseTensor& estimate, const Grid& grid) {
    detail::require(truth.dims() == estimate.dims(), "mise: truth and estimate have different shapes");
    detail::require(truth.order() == grid.size() + 1, "mise: grid dimension does not match the tensors");
    for (std::size_t d = 0; d < grid.size(); ++d)
        detail::require(truth.dim(d) == grid[d].size(), "mise: grid " + std::to_string(d) + " does not match the tensors");
    const auto w = product_trapezoid_weights(grid);
    const std::size_t n = truth.dim(grid.size());
    const auto a = truth.data(), b = estimate.data();
    double total = 0.0;
    for (std::size_t l = 0; l < w.size(); ++l) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += (a[l * n + i] - b[l * n + i]) * (a[l * n + i] - b[l * n + i]);
        total += w[l] * s;
    }
    return total;
}

// ---------------------------------------------------------------------------
// Marginal product design

struct Sim51Config {
    int dims = 3;
    int true_marginal_rank = 11;
    int true_rank = 10;
    double coef_sd = 0.3;
    double decay = 0.7;
    double noise_variance = 0.5;
    int points_per_dim = 30;
    int subjects = 5;
    std::uint64_t seed = 0;
    bool fixed_factors = true;  // one C_t per setting (drawn from `seed`), else redrawn per replication

    void validate() const {
        detail::require(dims >= 1, "sim51.dims must be >= 1");
        detail::require(true_marginal_rank >= 1 && true_marginal_rank % 2 == 1,
                        "sim51.true_marginal_rank must be a positive odd integer (Fourier)");
        detail::require(true_rank >= 1, "sim51.true_rank must be >= 1");
        detail::require(coef_sd > 0.0 && decay > 0.0, "sim51.coef_sd and sim51.decay must be positive");
        detail::require(noise_variance >= 0.0, "sim51.noise_variance must be >= 0");
        detail::require(points_per_dim >= 2, "sim51.points_per_dim must be >= 2");
        detail::require(subjects >= 1, "sim51.subjects must be >= 1");
    }
};

struct Sim51Data {
    MPBModel truth_model;
    Grid grid;
    DenseTensor truth;
    DenseTensor noisy;
    Matrix sigma_a;
};

/// Factor matrices C_t (one per dimension); depend only on `seed`.
inline std::vector<Matrix> sim51_factors(const Sim51Config& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<Matrix> c;
    for (int d = 0; d < cfg.dims; ++d) c.push_back(detail::normal_matrix(cfg.true_marginal_rank, cfg.true_rank, cfg.coef_sd, rng));
    return c;
}

/// Sigma_A = O diag(exp(-decay k)) O', k = 1..K_t.
inline Matrix sim51_covariance(const Sim51Config& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const Matrix o = detail::random_orthogonal(cfg.true_rank, rng);
    return o * detail::decay_spectrum(cfg.true_rank, cfg.decay).asDiagonal() * o.transpose();
}

/// Replication `rep` of the design. Factors and Sigma_A are fixed by cfg.seed
/// (unless fixed_factors is false); subject scores and noise come from the
/// replication stream.
inline Sim51Data generate_sim51(const Sim51Config& cfg, std::uint64_t rep = 0) {
    cfg.validate();
    const std::uint64_t rep_seed = split_seed(cfg.seed, rep);
    const std::uint64_t truth_seed = cfg.fixed_factors ? split_seed(cfg.seed, ~std::uint64_t{0}) : split_seed(rep_seed, 1);
    Sim51Data out;
    out.sigma_a = sim51_covariance(cfg, split_seed(truth_seed, 2));
    const Eigen::SelfAdjointEigenSolver<Matrix> es(out.sigma_a);
    const Matrix root = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();

    std::mt19937_64 rng(rep_seed);
    const Matrix z = detail::normal_matrix(cfg.subjects, cfg.true_rank, 1.0, rng);
    MPBModel& m = out.truth_model;
    for (int d = 0; d < cfg.dims; ++d) m.bases.push_back(MarginalBasis::fourier(0.0, 1.0, cfg.true_marginal_rank, 1.0));
    m.coefs = sim51_factors(cfg, split_seed(truth_seed, 3));
    m.subject_coefs = z * root.transpose();
    for (int d = 0; d < cfg.dims; ++d) out.grid.push_back(linspace(0.0, 1.0, static_cast<std::size_t>(cfg.points_per_dim)));
    out.truth = evaluate_subjects(m, out.grid);
    out.noisy = out.truth;
    if (cfg.noise_variance > 0.0) {
        std::normal_distribution<double> noise(0.0, std::sqrt(cfg.noise_variance));
        for (auto& v : out.noisy.data()) v += noise(rng);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Non-separable 2-D eigenfunction design

struct Sim52Config {
    double lower = 0.0;
    double upper = 1.0;
    int rank0 = 10;
    int rank1 = 8;
    double decay = 0.7;
    int grid_points = 200;
    int train_subjects = 100;
    int test_subjects = 50;
    int replications = 25;
    std::uint64_t seed = 0;

    void validate() const {
        detail::require(upper > lower, "sim52: empty domain");
        detail::require(rank0 >= 4 && rank1 >= 4, "sim52: spline ranks must be >= 4 (cubic)");
        detail::require(decay > 0.0, "sim52.decay must be positive");
        detail::require(grid_points >= std::max(rank0, rank1), "sim52.grid_points must be >= the spline ranks");
        detail::require(train_subjects >= 1 && test_subjects >= 1, "sim52: subject counts must be >= 1");
        detail::require(replications >= 1, "sim52.replications must be >= 1");
    }
};

/// Orthonormal eigenfunctions psi = Gamma^{-1/2} P' vec(phi_0 (x) phi_1) of the
/// tensor-product spline system, ordered by decreasing Gamma.
struct Sim52EigenSystem {
    std::vector<MarginalBasis> bases;
    Matrix psi_coefs;  // (m0 m1) x (m0 m1); column k holds psi_k in the basis phi_{0,a} phi_{1,b}, index a*m1 + b
    Vector variances;  // exp(-decay k), k = 1..m0 m1
    Matrix gram;       // J_0 (x) J_1
};

inline Sim52EigenSystem sim52_eigensystem(const Sim52Config& cfg) {
    cfg.validate();
    Sim52EigenSystem e;
    e.bases = {MarginalBasis::bspline(cfg.lower, cfg.upper, cfg.rank0, 3),
               MarginalBasis::bspline(cfg.lower, cfg.upper, cfg.rank1, 3)};
    const Matrix j0 = gram_matrix(e.bases[0]), j1 = gram_matrix(e.bases[1]);
    const Eigen::Index m = j0.rows() * j1.rows();
    e.gram.resize(m, m);
    for (Eigen::Index a = 0; a < j0.rows(); ++a)
        for (Eigen::Index b = 0; b < j0.cols(); ++b) e.gram.block(a * j1.rows(), b * j1.cols(), j1.rows(), j1.cols()) = j0(a, b) * j1;
    const Eigen::SelfAdjointEigenSolver<Matrix> es(e.gram);
    e.psi_coefs.resize(m, m);
    for (Eigen::Index k = 0; k < m; ++k) {
        const Eigen::Index src = m - 1 - k;
        e.psi_coefs.col(k) = es.eigenvectors().col(src) / std::sqrt(es.eigenvalues()(src));
    }
    e.variances = detail::decay_spectrum(m, cfg.decay);
    return e;
}

struct Sim52Sample {
    Matrix scores;        // N x (m0 m1)
    Matrix field_coefs;   // N x (m0 m1), tensor-spline coefficients
    DenseTensor values;   // (grid, grid, N)
};

struct Sim52Data {
    Sim52EigenSystem eigen;
    Grid grid;
    Sim52Sample train;
    Sim52Sample test;
};

/// Values of fields with tensor-spline coefficients (rows) on a product grid.
inline DenseTensor evaluate_tensor_spline(const std::vector<MarginalBasis>& bases, const Matrix& coefs, const Grid& grid) {
    const Matrix p0 = bases[0].evaluate(grid[0]), p1 = bases[1].evaluate(grid[1]);
    const auto m0 = p0.cols(), m1 = p1.cols();
    detail::require(coefs.cols() == m0 * m1, "evaluate_tensor_spline: coefficient length mismatch");
    const auto n = static_cast<std::size_t>(coefs.rows());
    DenseTensor out({grid[0].size(), grid[1].size(), n});
    auto data = out.data();
    for (std::size_t i = 0; i < n; ++i) {
        // Row-major m0 x m1 coefficient block.
        const Matrix c = Eigen::Map<const RowMajorMatrix>(Vector(coefs.row(static_cast<Eigen::Index>(i)).transpose()).data(), m0, m1);
        const Matrix v = p0 * c * p1.transpose();
        for (Eigen::Index a = 0; a < v.rows(); ++a)
            for (Eigen::Index b = 0; b < v.cols(); ++b)
                data[(static_cast<std::size_t>(a) * grid[1].size() + static_cast<std::size_t>(b)) * n + i] = v(a, b);
    }
    return out;
}

inline Sim52Sample draw_sim52(const Sim52EigenSystem& e, const Grid& grid, int subjects, std::mt19937_64& rng) {
    Sim52Sample s;
    s.scores = detail::normal_matrix(subjects, e.variances.size(), 1.0, rng) * e.variances.cwiseSqrt().asDiagonal();
    s.field_coefs = s.scores * e.psi_coefs.transpose();
    s.values = evaluate_tensor_spline(e.bases, s.field_coefs, grid);
    return s;
}

/// Training and test samples of replication `rep`.
inline Sim52Data generate_sim52(const Sim52Config& cfg, std::uint64_t rep = 0) {
    Sim52Data out;
    out.eigen = sim52_eigensystem(cfg);
    const auto g = linspace(cfg.lower, cfg.upper, static_cast<std::size_t>(cfg.grid_points));
    out.grid = {g, g};
    std::mt19937_64 rng(split_seed(cfg.seed, rep));
    out.train = draw_sim52(out.eigen, out.grid, cfg.train_subjects, rng);
    out.test = draw_sim52(out.eigen, out.grid, cfg.test_subjects, rng);
    return out;
}

// ---------------------------------------------------------------------------
// Replication drivers

struct ReplicationRecord {
    int replication = 0;
    int rank = 0;
    std::uint64_t seed = 0;
    double mise = 0.0;
    int iters = 0;
    bool converged = false;
    double seconds = 0.0;
};

/// Fitting choices for the marginal product design.
struct Sim51FitSpec {
    int marginal_rank = 15;
    int degree = 3;
    int penalty_order = 2;
    SolverConfig solver;  // rank, lambdas, tolerances; the seed is replaced per replication
};

/// Fits every replication and scores MISE against the noiseless truth on the observation grid.
inline std::vector<ReplicationRecord> run_sim51(const Sim51Config& cfg, const Sim51FitSpec& spec, int replications) {
    detail::require(replications >= 1, "run_sim51: replications must be >= 1");
    std::vector<ReplicationRecord> out;
    for (int r = 0; r < replications; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto data = generate_sim51(cfg, static_cast<std::uint64_t>(r));
        std::vector<MarginalBasis> bases(static_cast<std::size_t>(cfg.dims), MarginalBasis::bspline(0.0, 1.0, spec.marginal_rank, spec.degree));
        std::vector<PenaltyOperator> ops(static_cast<std::size_t>(cfg.dims), PenaltyOperator{spec.penalty_order});
        SolverConfig sc = spec.solver;
        sc.seed = split_seed(cfg.seed ^ 0x5eedULL, static_cast<std::uint64_t>(r));
        const auto fitres = fit_model(data.noisy, data.grid, bases, ops, sc);
        ReplicationRecord rec;
        rec.replication = r;
        rec.rank = sc.rank;
        rec.seed = sc.seed;
        rec.mise = mise(data.truth, evaluate_subjects(fitres.model, data.grid), data.grid);
        rec.iters = fitres.state.iters;
        rec.converged = fitres.state.converged;
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        out.push_back(rec);
    }
    return out;
}

/// Test-set MISE of least-squares representations on a fitted model.
inline double test_mise(const MPBModel& model, const DenseTensor& test_values, const Grid& grid) {
    const auto p = project(model, test_values, grid);
    MPBModel rep = model;
    rep.subject_coefs = p.coefs;
    return mise(test_values, evaluate_subjects(rep, grid), grid);
}

/// For each replication and rank: fit on the training sample, represent the test sample.
inline std::vector<ReplicationRecord> run_sim52(const Sim52Config& cfg, const std::vector<int>& ranks,
                                                const SolverConfig& solver, int penalty_order = 2) {
    std::vector<ReplicationRecord> out;
    for (int r = 0; r < cfg.replications; ++r) {
        const auto data = generate_sim52(cfg, static_cast<std::uint64_t>(r));
        const std::vector<PenaltyOperator> ops(2, PenaltyOperator{penalty_order});
        for (int k : ranks) {
            const auto t0 = std::chrono::steady_clock::now();
            SolverConfig sc = solver;
            sc.rank = k;
            sc.seed = split_seed(cfg.seed ^ 0x5eedULL, static_cast<std::uint64_t>(r));
            const auto fitres = fit_model(data.train.values, data.grid, data.eigen.bases, ops, sc);
            ReplicationRecord rec;
            rec.replication = r;
            rec.rank = k;
            rec.seed = sc.seed;
            rec.mise = test_mise(fitres.model, data.test.values, data.grid);
            rec.iters = fitres.state.iters;
            rec.converged = fitres.state.converged;
            rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            out.push_back(rec);
        }
    }
    return out;
}

}  // namespace mpb
