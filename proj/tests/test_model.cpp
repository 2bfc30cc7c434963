#include <gtest/gtest.h>

#include <numbers>
#include <random>

#include "mpb/model.hpp"
#include "oracles.hpp"

using namespace mpb;

namespace {

MPBModel random_model(std::vector<MarginalBasis> bases, Eigen::Index k, Eigen::Index n, std::mt19937_64& rng) {
    MPBModel m;
    for (const auto& b : bases) m.coefs.push_back(oracle::random_matrix(b.rank(), k, rng));
    m.bases = std::move(bases);
    m.subject_coefs = oracle::random_matrix(n, k, rng);
    return m;
}

// Tensor Gauss-Legendre rule on [a0,b0] x [a1,b1] with many panels.
struct Rule2 {
    std::vector<double> x, y, w;
};

Rule2 tensor_rule(const MarginalBasis& b0, const MarginalBasis& b1, int panels) {
    const auto q0 = composite_gauss_legendre(linspace(b0.lower(), b0.upper(), static_cast<std::size_t>(panels) + 1), 6);
    const auto q1 = composite_gauss_legendre(linspace(b1.lower(), b1.upper(), static_cast<std::size_t>(panels) + 1), 6);
    Rule2 r;
    for (std::size_t i = 0; i < q0.nodes.size(); ++i)
        for (std::size_t j = 0; j < q1.nodes.size(); ++j) {
            r.x.push_back(q0.nodes[i]);
            r.y.push_back(q1.nodes[j]);
            r.w.push_back(q0.weights[i] * q1.weights[j]);
        }
    return r;
}

// zeta values (or Laplacians) at scattered points by explicit products.
Matrix zeta_at(const MPBModel& m, const std::vector<double>& x, const std::vector<double>& y, bool laplacian) {
    const Matrix v0 = m.bases[0].evaluate(x) * m.coefs[0], v1 = m.bases[1].evaluate(y) * m.coefs[1];
    if (!laplacian) return v0.cwiseProduct(v1);
    const Matrix d0 = m.bases[0].evaluate(x, 2) * m.coefs[0], d1 = m.bases[1].evaluate(y, 2) * m.coefs[1];
    return d0.cwiseProduct(v1) + v0.cwiseProduct(d1);
}

}  // namespace

TEST(Model, ConstantBasisGivesOnes) {
    MPBModel m;
    m.bases = {MarginalBasis::fourier(0, 2, 1, 2.0), MarginalBasis::fourier(0, 1, 1, 1.0)};
    m.coefs = {Matrix::Constant(1, 1, std::sqrt(2.0)), Matrix::Constant(1, 1, 1.0)};
    m.subject_coefs = Matrix::Ones(1, 1);
    Matrix pts(3, 2);
    pts << 0.1, 0.2, 1.5, 0.9, 2.0, 0.0;
    EXPECT_LE((evaluate_basis(m, pts).array() - 1.0).abs().maxCoeff(), 1e-14);
    EXPECT_LE(laplacian_penalty_zeta(m).norm(), 1e-12);
    pts(0, 0) = 2.5;
    EXPECT_THROW(evaluate_basis(m, pts), ValidationError);
}

TEST(Model, EvaluationMatchesGridLoop) {
    std::mt19937_64 rng(31);
    const auto m = random_model({MarginalBasis::bspline(0, 1, 6, 3), MarginalBasis::fourier(-1, 1, 5, 2.0),
                                 MarginalBasis::bspline(2, 3, 5, 2)},
                                3, 4, rng);
    const Grid grid = {linspace(0, 1, 5), linspace(-1, 1, 4), linspace(2, 3, 3)};
    const auto sub = evaluate_subjects(m, grid);
    const auto zg = evaluate_zeta_grid(m, grid);
    Matrix pts(60, 3);
    int row = 0;
    for (double a : grid[0])
        for (double b : grid[1])
            for (double c : grid[2]) pts.row(row++) << a, b, c;
    const Matrix z = evaluate_basis(m, pts);
    for (int p = 0; p < 60; ++p) {
        const auto i = static_cast<std::size_t>(p);
        for (Eigen::Index k = 0; k < 3; ++k) {
            double v = 1.0;
            for (std::size_t d = 0; d < 3; ++d) {
                const Matrix phi = m.bases[d].evaluate(std::vector<double>{pts(p, static_cast<Eigen::Index>(d))});
                v *= (phi * m.coefs[d].col(k))(0, 0);
            }
            EXPECT_NEAR(z(p, k), v, 1e-12 * (1 + std::abs(v)));
            EXPECT_NEAR(zg.data()[i * 3 + static_cast<std::size_t>(k)], v, 1e-12 * (1 + std::abs(v)));
        }
        const Vector u = m.subject_coefs * z.row(p).transpose();
        for (Eigen::Index s = 0; s < 4; ++s) EXPECT_NEAR(sub.data()[i * 4 + static_cast<std::size_t>(s)], u(s), 1e-12 * (1 + std::abs(u(s))));
    }
    // Separability: changing one coordinate rescales zeta_k by that marginal ratio only.
    Matrix a(2, 3), b(2, 3);
    a << 0.3, 0.1, 2.2, 0.7, 0.1, 2.2;
    b << 0.3, -0.6, 2.9, 0.7, -0.6, 2.9;
    const Matrix za = evaluate_basis(m, a), zb = evaluate_basis(m, b);
    for (Eigen::Index k = 0; k < 3; ++k) EXPECT_NEAR(za(1, k) / za(0, k), zb(1, k) / zb(0, k), 1e-10);
}

TEST(Model, MeanOffsetHandling) {
    std::mt19937_64 rng(32);
    auto m = random_model({MarginalBasis::bspline(0, 1, 5, 3), MarginalBasis::bspline(0, 1, 4, 3)}, 2, 3, rng);
    const Grid grid = {linspace(0, 1, 6), linspace(0, 1, 5)};
    m.mean_offset = oracle::random_tensor({6, 5}, rng);
    m.mean_grid = grid;
    m.subject_coefs.setZero();
    const auto u = evaluate_subjects(m, grid);
    for (std::size_t l = 0; l < 30; ++l)
        for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(u.data()[l * 3 + i], m.mean_offset->data()[l]);
    EXPECT_THROW(evaluate_subjects(m, Grid{linspace(0, 1, 6), linspace(0, 1, 6)}), ValidationError);
}

TEST(Model, GramMatchesQuadrature) {
    std::mt19937_64 rng(33);
    const auto m = random_model({MarginalBasis::bspline(0, 1, 7, 3), MarginalBasis::bspline(-1, 2, 6, 3)}, 4, 2, rng);
    const auto rule = tensor_rule(m.bases[0], m.bases[1], 120);
    const Matrix z = zeta_at(m, rule.x, rule.y, false);
    const Eigen::Map<const Vector> w(rule.w.data(), static_cast<Eigen::Index>(rule.w.size()));
    const Matrix ref = z.transpose() * w.asDiagonal() * z;
    const Matrix j = gram_zeta(m);
    EXPECT_LE(oracle::rel_diff(j, ref), 1e-12);
    for (Eigen::Index i = 0; i < 4; ++i) EXPECT_GE(j(i, i), 0.0);
}

TEST(Model, GramOfOrthonormalFunctionsIsIdentity) {
    MPBModel m;
    m.bases = {MarginalBasis::fourier(0, 1, 5, 1.0), MarginalBasis::fourier(0, 1, 3, 1.0)};
    std::mt19937_64 rng(34);
    m.coefs = {oracle::random_matrix(5, 3, rng).householderQr().householderQ() * Matrix::Identity(5, 3),
               oracle::random_matrix(3, 3, rng).householderQr().householderQ() * Matrix::Identity(3, 3)};
    m.subject_coefs = Matrix::Ones(1, 3);
    EXPECT_LE((gram_zeta(m) - Matrix::Identity(3, 3)).norm(), 1e-12);
}

// Exact oracle: tensor quadrature of the analytically differentiated Laplacian.
TEST(Model, LaplacianPenaltyMatchesQuadratureForSplines) {
    std::mt19937_64 rng(35);
    for (int deg : {3, 4}) {
        const auto m = random_model({MarginalBasis::bspline(0, 1, 8, deg), MarginalBasis::bspline(0, 2, 6, deg)}, 3, 2, rng);
        const auto rule = tensor_rule(m.bases[0], m.bases[1], 60);
        const Matrix lz = zeta_at(m, rule.x, rule.y, true);
        const Eigen::Map<const Vector> w(rule.w.data(), static_cast<Eigen::Index>(rule.w.size()));
        const Matrix ref = lz.transpose() * w.asDiagonal() * lz;
        EXPECT_LE(oracle::rel_diff(laplacian_penalty_zeta(m), ref), 1e-10) << "degree " << deg;
    }
}

TEST(Model, LaplacianPenaltyOneDimension) {
    std::mt19937_64 rng(36);
    const auto m = random_model({MarginalBasis::bspline(0, 1, 8, 3)}, 3, 2, rng);
    const Matrix ref = m.coefs[0].transpose() * penalty_matrix(m.bases[0], {2}) * m.coefs[0];
    EXPECT_LE(oracle::rel_diff(laplacian_penalty_zeta(m), ref), 1e-12);
}

TEST(Model, FunctionGramsInvariantUnderGauge) {
    std::mt19937_64 rng(37);
    auto m = random_model({MarginalBasis::bspline(0, 1, 6, 3), MarginalBasis::bspline(0, 1, 5, 3)}, 3, 4, rng);
    const Matrix j0 = m.subject_coefs * gram_zeta(m) * m.subject_coefs.transpose();
    const Matrix r0 = m.subject_coefs * laplacian_penalty_zeta(m) * m.subject_coefs.transpose();
    SolverState s;
    s.c_tilde = m.coefs;
    s.b = m.subject_coefs;
    normalize_gauge(s);
    m.coefs = s.c_tilde;
    m.subject_coefs = s.b;
    EXPECT_LE(oracle::rel_diff(m.subject_coefs * gram_zeta(m) * m.subject_coefs.transpose(), j0), 1e-10);
    EXPECT_LE(oracle::rel_diff(m.subject_coefs * laplacian_penalty_zeta(m) * m.subject_coefs.transpose(), r0), 1e-10);
}

TEST(Model, ProjectionReproducesSpanAndZero) {
    std::mt19937_64 rng(38);
    auto m = random_model({MarginalBasis::bspline(0, 1, 6, 3), MarginalBasis::fourier(0, 1, 5, 1.0)}, 4, 3, rng);
    const Grid grid = {linspace(0, 1, 20), linspace(0, 1, 15)};
    const auto y = evaluate_subjects(m, grid);
    const auto p = project(m, y, grid);
    EXPECT_LE(oracle::rel_diff(p.coefs, m.subject_coefs), 1e-8);
    EXPECT_LE(p.residual_norms.maxCoeff(), 1e-8 * y.frobenius_norm());
    const auto z = project(m, DenseTensor({20, 15, 2}), grid);
    EXPECT_EQ(z.coefs.norm(), 0.0);
    // A single function without the subject mode.
    DenseTensor one({20, 15});
    for (std::size_t l = 0; l < one.size(); ++l) one.data()[l] = y.data()[l * 3 + 1];
    EXPECT_LE(oracle::rel_diff(project(m, one, grid).coefs.row(0), m.subject_coefs.row(1)), 1e-8);
}

TEST(Model, ProjectionOfOrthogonalNoiseIsSmall) {
    std::mt19937_64 rng(39);
    auto m = random_model({MarginalBasis::bspline(0, 1, 5, 3), MarginalBasis::bspline(0, 1, 5, 3)}, 3, 1, rng);
    const Grid grid = {linspace(0, 1, 60), linspace(0, 1, 60)};
    // Remove the span component from noise by explicit least squares, then project.
    const auto zg = evaluate_zeta_grid(m, grid);
    const Matrix z = Eigen::Map<const RowMajorMatrix>(zg.data().data(), 3600, 3);
    Vector e(3600);
    std::normal_distribution<double> n01;
    for (auto& v : e) v = n01(rng);
    const Vector coef = z.colPivHouseholderQr().solve(e);
    const Vector resid = e - z * coef;
    const auto p = project(m, DenseTensor({60, 60}, std::vector<double>(resid.data(), resid.data() + resid.size())), grid);
    EXPECT_LE(p.coefs.norm(), 1e-10 * resid.norm());
}

TEST(Model, FitModelRoundTrip) {
    std::mt19937_64 rng(40);
    const std::vector<MarginalBasis> bases = {MarginalBasis::bspline(0, 1, 6, 3), MarginalBasis::bspline(0, 1, 5, 3)};
    const auto truth = random_model(bases, 2, 6, rng);
    const Grid grid = {linspace(0, 1, 25), linspace(0, 1, 20)};
    auto y = evaluate_subjects(truth, grid);
    std::normal_distribution<double> noise(0.0, 0.05);
    for (auto& v : y.data()) v += noise(rng);
    SolverConfig cfg;
    cfg.rank = 2;
    cfg.lambda_marginal = {1e-6, 1e-6};
    cfg.outer_tol = 1e-12;
    cfg.max_outer_iters = 1000;
    const auto out = fit_model(y, grid, bases, {PenaltyOperator{2}, PenaltyOperator{2}}, cfg);
    // Objective in data space: ||Y - fitted||^2 = compressed residual + projection constant.
    const auto fitted = evaluate_subjects(out.model, grid);
    double resid = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) resid += (y.data()[i] - fitted.data()[i]) * (y.data()[i] - fitted.data()[i]);
    EXPECT_NEAR(resid / y.squared_norm(), out.data_residual_ratio, 1e-8 * out.data_residual_ratio);
    const double comp = residual_squared(out.g_hat, out.state.c_tilde, out.state.b, true);
    EXPECT_NEAR(resid, comp + out.data_squared_norm - out.compressed_squared_norm, 1e-8 * resid);
    // Centered variant reproduces the data mean on the training grid.
    const auto centered = fit_model(y, grid, bases, {PenaltyOperator{2}, PenaltyOperator{2}}, cfg, true);
    ASSERT_TRUE(centered.model.mean_offset.has_value());
    EXPECT_LE(std::abs(centered.g_hat.as_vector().sum()), 1e-8);
}
