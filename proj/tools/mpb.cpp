// mpb: fit, analyze and simulate marginal product basis representations.
//
// Exit codes: 0 ok, 2 input validation, 3 numerical failure,
// 4 solver did not converge (outputs are still written).

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "mpb/mpb.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 2;
constexpr int kNumerical = 3;
constexpr int kNotConverged = 4;

struct Options {
    std::string config;
    std::string tensor;
    std::string model;
    std::string fpca;
    std::string out = ".";
    std::optional<std::uint64_t> seed;
    unsigned threads = 1;
    std::string mode;
    std::optional<double> lambda;
    std::optional<int> k_dagger;
    std::optional<double> threshold;
    double tol = 1e-8;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string g17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

fs::path prepare_out(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw mpb::ValidationError("cannot create output directory '" + dir + "': " + ec.message());
    return fs::path(dir);
}

void write_json(const fs::path& p, const json& j) {
    std::ofstream os(p);
    if (!os) throw mpb::ValidationError("cannot open '" + p.string() + "' for writing");
    os << j.dump(2) << '\n';
}

std::ofstream open_csv(const fs::path& p) {
    std::ofstream os(p);
    if (!os) throw mpb::ValidationError("cannot open '" + p.string() + "' for writing");
    return os;
}

mpb::RunConfig load_config(const Options& o) {
    mpb::RunConfig cfg = o.config.empty() ? mpb::parse_run_config(json::object()) : mpb::load_run_config(o.config);
    if (o.seed) {
        cfg.seed = *o.seed;
        cfg.solver.seed = *o.seed;
    }
    cfg.select.cv.threads = o.threads;
    cfg.select.cv.seed = cfg.seed;
    return cfg;
}

/// Grid from the config, or equispaced over the domain at the tensor's resolution.
mpb::Grid resolve_grid(const mpb::RunConfig& cfg, const mpb::DenseTensor& y) {
    mpb::detail::require(cfg.dims() >= 1, "config: field 'domain' is required");
    mpb::detail::require(cfg.bases.size() == cfg.dims(), "config: field 'bases' is required");
    mpb::detail::require(y.order() == cfg.dims() + 1, "tensor has " + std::to_string(y.order()) +
                                                          " modes; config describes " + std::to_string(cfg.dims()) +
                                                          " dimensions plus subjects");
    if (!cfg.grid.empty()) return cfg.grid;
    mpb::Grid g;
    for (std::size_t d = 0; d < cfg.dims(); ++d) g.push_back(mpb::linspace(cfg.domain[d].first, cfg.domain[d].second, y.dim(d)));
    return g;
}

int cmd_fit(const Options& o) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto cfg = load_config(o);
    mpb::detail::require(!o.tensor.empty(), "fit: --tensor is required");
    const auto y = mpb::read_tensor(o.tensor);
    const auto grid = resolve_grid(cfg, y);
    const double t_load = seconds_since(t0);
    spdlog::info("fit: tensor {} subjects, rank {}", y.dim(y.order() - 1), cfg.solver.rank);

    const auto t1 = std::chrono::steady_clock::now();
    const auto res = mpb::fit_model(y, grid, cfg.make_bases(), cfg.make_ops(), cfg.solver, cfg.center);
    const double t_fit = seconds_since(t1);
    for (const auto& w : res.state.warnings) spdlog::warn("fit: {}", w);

    const auto dir = prepare_out(o.out);
    mpb::write_model((dir / cfg.output.model).string(), res.model);
    json report;
    report["rank"] = cfg.solver.rank;
    report["seed"] = cfg.seed;
    report["iterations"] = res.state.iters;
    report["converged"] = res.state.converged;
    report["objective_trace"] = res.state.objective_trace;
    report["residual_ratio"] = res.residual_ratio;
    report["data_residual_ratio"] = res.data_residual_ratio;
    report["warnings"] = res.state.warnings;
    report["timings"] = {{"load_seconds", t_load}, {"fit_seconds", t_fit}, {"total_seconds", seconds_since(t0)}};
    write_json(dir / cfg.output.report, report);
    spdlog::info("fit: {} iterations, residual ratio {:.3e}", res.state.iters, res.residual_ratio);
    if (!res.state.converged) {
        spdlog::warn("fit: stopped at max_outer_iters without meeting outer_tol");
        return kNotConverged;
    }
    return kOk;
}

int cmd_fpca(const Options& o) {
    auto cfg = load_config(o);
    mpb::detail::require(!o.model.empty(), "fpca: --model is required");
    const auto model = mpb::read_model(o.model);
    if (o.lambda) cfg.fpca.lambda = *o.lambda;
    if (o.k_dagger) cfg.fpca.k_dagger = *o.k_dagger;
    if (o.threshold) cfg.fpca.variance_threshold = *o.threshold;
    const auto r = mpb::run_fpca(model, cfg.fpca);

    const auto dir = prepare_out(o.out);
    mpb::write_fpca((dir / "fpca.mpbe").string(), r);
    auto nu = open_csv(dir / "eigenvalues.csv");
    nu << "component,nu,cumulative_variance\n";
    std::cout << "component  nu  cumulative\n";
    for (Eigen::Index j = 0; j < r.nu.size(); ++j) {
        nu << j + 1 << ',' << g17(r.nu(j)) << ',' << g17(r.var_explained(j)) << '\n';
        std::printf("%9ld  %.6g  %.6f\n", static_cast<long>(j + 1), r.nu(j), r.var_explained(j));
    }
    auto sc = open_csv(dir / "scores.csv");
    sc << "subject";
    for (Eigen::Index j = 0; j < r.scores.cols(); ++j) sc << ",psi" << j + 1;
    sc << '\n';
    for (Eigen::Index i = 0; i < r.scores.rows(); ++i) {
        sc << i;
        for (Eigen::Index j = 0; j < r.scores.cols(); ++j) sc << ',' << g17(r.scores(i, j));
        sc << '\n';
    }
    return kOk;
}

int cmd_select(const Options& o) {
    auto cfg = load_config(o);
    mpb::detail::require(!o.tensor.empty(), "select: --tensor is required");
    if (!o.mode.empty()) {
        if (o.mode == "marginal-rank")
            cfg.select.mode = mpb::SelectMode::MarginalRank;
        else if (o.mode == "global-rank")
            cfg.select.mode = mpb::SelectMode::GlobalRank;
        else if (o.mode == "cv")
            cfg.select.mode = mpb::SelectMode::Cv;
        else
            throw mpb::ValidationError("select: --mode must be marginal-rank, global-rank or cv");
    }
    const auto y = mpb::read_tensor(o.tensor);
    const auto grid = resolve_grid(cfg, y);
    const auto bases = cfg.make_bases();
    mpb::SelectionReport rep;
    switch (cfg.select.mode) {
        case mpb::SelectMode::MarginalRank: {
            mpb::detail::require(!cfg.select.marginal_ranks.empty(), "config: field 'select.marginal_ranks' is required");
            std::vector<std::vector<mpb::MarginalBasis>> cands;
            for (int m : cfg.select.marginal_ranks) {
                auto c = cfg;
                for (auto& b : c.bases) b.rank = m;
                cands.push_back(c.make_bases());
            }
            rep = mpb::marginal_rank_sweep(y, grid, cands, cfg.select.marginal_threshold);
            break;
        }
        case mpb::SelectMode::GlobalRank: {
            mpb::detail::require(!cfg.select.ranks.empty(), "config: field 'select.ranks' is required");
            std::vector<mpb::MarginalFactorization> f;
            std::vector<mpb::Matrix> t;
            const auto ops = cfg.make_ops();
            for (std::size_t d = 0; d < bases.size(); ++d) {
                f.push_back(mpb::factorize(bases[d].evaluate(grid[d]), "dimension " + std::to_string(d)));
                const mpb::Matrix r = cfg.solver.lambda(d) > 0.0 ? mpb::penalty_matrix(bases[d], ops[d])
                                                                 : mpb::Matrix(mpb::Matrix::Zero(bases[d].rank(), bases[d].rank()));
                t.push_back(mpb::penalty_transform(f[d], r));
            }
            rep = mpb::global_rank_sweep(mpb::compress(y, f), t, cfg.solver, cfg.select.ranks, cfg.select.rank_threshold);
            break;
        }
        case mpb::SelectMode::Cv:
            rep = mpb::cv_lambda_grid(y, grid, bases, cfg.make_ops(), cfg.solver, [&] {
                auto cv = cfg.select.cv;
                cv.center = cfg.center;
                return cv;
            }());
            break;
    }
    const auto dir = prepare_out(o.out);
    auto os = open_csv(dir / "selection.csv");
    rep.write_csv(os);
    const auto& pick = rep.records[rep.chosen_index()];
    std::string params;
    for (std::size_t i = 0; i < pick.params.size(); ++i)
        params += (i ? ", " : "") + rep.param_names[i] + "=" + mpb::detail::format_g(pick.params[i]);
    std::cout << mpb::to_string(rep.kind) << ": chose " << params << " (criterion " << g17(pick.criterion) << ")\n";
    return kOk;
}

int cmd_simulate(const Options& o) {
    const auto cfg = load_config(o);
    const auto& s = cfg.simulate;
    const auto dir = prepare_out(o.out);
    auto metrics = open_csv(dir / "metrics.csv");
    metrics << "replication,rank,seed,mise,iters,converged,seconds\n";
    auto emit = [&](const mpb::ReplicationRecord& r) {
        metrics << r.replication << ',' << r.rank << ',' << r.seed << ',' << g17(r.mise) << ',' << r.iters << ','
                << (r.converged ? 1 : 0) << ',' << g17(r.seconds) << '\n';
    };
    std::vector<mpb::ReplicationRecord> records;
    char name[64];
    if (s.design == mpb::SimDesign::Sim51) {
        auto c = s.sim51;
        c.seed = cfg.seed;
        for (int r = 0; r < s.replications; ++r) {
            const auto d = mpb::generate_sim51(c, static_cast<std::uint64_t>(r));
            std::snprintf(name, sizeof name, "rep%03d_", r);
            mpb::write_tensor((dir / (std::string(name) + "noisy.mpbt")).string(), d.noisy);
            mpb::write_tensor((dir / (std::string(name) + "truth.mpbt")).string(), d.truth);
            mpb::write_model((dir / (std::string(name) + "truth.mpbm")).string(), d.truth_model);
        }
        if (s.fit) {
            auto spec = s.fit51;
            spec.penalty_order = s.penalty_order;
            spec.solver = cfg.solver;
            records = mpb::run_sim51(c, spec, s.replications);
        }
    } else {
        auto c = s.sim52;
        c.seed = cfg.seed;
        for (int r = 0; r < s.replications; ++r) {
            const auto d = mpb::generate_sim52(c, static_cast<std::uint64_t>(r));
            std::snprintf(name, sizeof name, "rep%03d_", r);
            mpb::write_tensor((dir / (std::string(name) + "train.mpbt")).string(), d.train.values);
            mpb::write_tensor((dir / (std::string(name) + "test.mpbt")).string(), d.test.values);
        }
        if (s.fit) records = mpb::run_sim52(c, s.ranks52, cfg.solver, s.penalty_order);
    }
    for (const auto& r : records) emit(r);

    json summary;
    summary["design"] = s.design == mpb::SimDesign::Sim51 ? "sim51" : "sim52";
    summary["replications"] = s.replications;
    summary["seed"] = cfg.seed;
    std::map<int, std::pair<double, int>> by_rank;
    for (const auto& r : records) {
        by_rank[r.rank].first += r.mise;
        by_rank[r.rank].second += 1;
    }
    summary["momise"] = json::object();
    for (const auto& [k, v] : by_rank) {
        summary["momise"][std::to_string(k)] = v.first / v.second;
        std::cout << "rank " << k << ": moMISE " << g17(v.first / v.second) << " over " << v.second << " replications\n";
    }
    write_json(dir / "summary.json", summary);
    return kOk;
}

int cmd_verify(const Options& o) {
    mpb::detail::require(!o.model.empty(), "verify: --model is required");
    const auto model = mpb::read_model(o.model);
    bool ok = true;
    auto check = [&](const std::string& what, double value, double tol) {
        const bool pass = std::isfinite(value) && value <= tol;
        std::cout << (pass ? "PASS " : "FAIL ") << what << " = " << mpb::detail::format_g(value) << " (tol "
                  << mpb::detail::format_g(tol) << ")\n";
        ok = ok && pass;
    };
    const mpb::Matrix j = mpb::gram_zeta(model);
    check("gram asymmetry", (j - j.transpose()).norm() / j.norm(), o.tol);
    if (!o.fpca.empty()) {
        const auto r = mpb::read_fpca(o.fpca);
        mpb::detail::require(r.s.rows() == model.rank(), "verify: FPCA file does not match the model rank");
        const mpb::Matrix sjs = r.s.transpose() * j * r.s;
        check("max |s'Js - 1|", (sjs.diagonal().array() - 1.0).abs().maxCoeff(), o.tol);
        mpb::Matrix lam = sjs;
        if (r.lambda > 0.0) lam += r.lambda * r.s.transpose() * mpb::laplacian_penalty_zeta(model) * r.s;
        double off = 0.0;
        for (Eigen::Index a = 0; a < lam.cols(); ++a)
            for (Eigen::Index b = 0; b < lam.cols(); ++b)
                if (a != b) off = std::max(off, std::abs(lam(a, b)) / std::sqrt(lam(a, a) * lam(b, b)));
        check("max lambda-orthogonality defect", off, o.tol);
        double rise = 0.0;
        for (Eigen::Index a = 1; a < r.nu.size(); ++a) rise = std::max(rise, r.nu(a) - r.nu(a - 1));
        check("eigenvalue increase", rise, 0.0);
        if (r.scores.rows() == model.subjects()) {
            const mpb::Matrix expect = mpb::fpca_scores(model.subject_coefs, j, r);
            check("score consistency", (expect - r.scores).norm() / std::max(expect.norm(), 1e-300), o.tol);
            if (r.lambda == 0.0 && r.scores.rows() >= 2) {
                const mpb::Matrix cov = mpb::coef_covariance(r.scores);
                check("score variance vs nu", (cov.diagonal() - r.nu).cwiseAbs().maxCoeff() / std::max(r.nu(0), 1e-300), o.tol);
            }
        }
    }
    return ok ? kOk : kNumerical;
}

int cmd_info(const Options& o) {
    json info;
    if (!o.tensor.empty()) {
        const auto t = mpb::read_tensor(o.tensor);
        info["tensor"] = {{"dims", t.dims()}, {"norm", std::sqrt(t.squared_norm())}};
    }
    if (!o.model.empty()) {
        const auto m = mpb::read_model(o.model);
        json bases = json::array();
        for (const auto& b : m.bases) bases.push_back(mpb::basis_to_json(b));
        info["model"] = {{"dims", m.dims()}, {"rank", m.rank()}, {"subjects", m.subjects()}, {"centered", m.mean_offset.has_value()},
                         {"bases", bases}};
    }
    if (!o.fpca.empty()) {
        const auto r = mpb::read_fpca(o.fpca);
        info["fpca"] = {{"components", r.s.cols()}, {"lambda", r.lambda},
                        {"nu", std::vector<double>(r.nu.data(), r.nu.data() + r.nu.size())}};
    }
    mpb::detail::require(!info.empty(), "info: give --tensor, --model or --fpca");
    std::cout << info.dump(2) << '\n';
    return kOk;
}

void setup_logging() {
    auto logger = spdlog::stderr_color_mt("mpb");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%l] %v");
    spdlog::set_level(spdlog::level::warn);
    if (const char* env = std::getenv("MPB_LOG")) {
        const auto lvl = spdlog::level::from_str(env);
        // from_str maps unknown names to "off"
        if (lvl != spdlog::level::off || std::string(env) == "off")
            spdlog::set_level(lvl);
        else
            spdlog::warn("MPB_LOG='{}' is not a level name; using warn", env);
    }
}

}  // namespace

int main(int argc, char** argv) {
    setup_logging();
    CLI::App app{"Marginal product basis representations of multidimensional functional data"};
    app.require_subcommand(1);
    Options o;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
        sub->add_option("--out", o.out, "output directory");
        sub->add_option("--seed", o.seed, "overrides the config seed");
        sub->add_option("--threads", o.threads, "worker threads for cross-validation")->check(CLI::PositiveNumber);
    };
    auto* fit = app.add_subcommand("fit", "fit a model to a tensor file");
    common(fit);
    fit->add_option("--tensor", o.tensor, "data tensor (dims..., subjects)")->required();
    auto* fpca = app.add_subcommand("fpca", "functional PCA of a fitted model");
    common(fpca);
    fpca->add_option("--model", o.model, "model file")->required();
    fpca->add_option("--lambda", o.lambda, "roughness penalty weight");
    fpca->add_option("--k-dagger", o.k_dagger, "number of components");
    fpca->add_option("--threshold", o.threshold, "cumulative variance threshold");
    auto* sel = app.add_subcommand("select", "hyperparameter selection");
    common(sel);
    sel->add_option("--tensor", o.tensor, "data tensor")->required();
    sel->add_option("--mode", o.mode, "marginal-rank | global-rank | cv");
    auto* sim = app.add_subcommand("simulate", "generate simulation data and score fits");
    common(sim);
    auto* ver = app.add_subcommand("verify", "recheck constraints of model and FPCA files");
    ver->add_option("--model", o.model, "model file")->required();
    ver->add_option("--fpca", o.fpca, "FPCA file");
    ver->add_option("--tol", o.tol, "tolerance");
    auto* inf = app.add_subcommand("info", "describe files");
    inf->add_option("--tensor", o.tensor, "tensor file");
    inf->add_option("--model", o.model, "model file");
    inf->add_option("--fpca", o.fpca, "FPCA file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kValidation;
    }

    try {
        if (*fit) return cmd_fit(o);
        if (*fpca) return cmd_fpca(o);
        if (*sel) return cmd_select(o);
        if (*sim) return cmd_simulate(o);
        if (*ver) return cmd_verify(o);
        if (*inf) return cmd_info(o);
    } catch (const mpb::ValidationError& e) {
        spdlog::error("{}", e.what());
        return kValidation;
    } catch (const mpb::NumericalError& e) {
        spdlog::error("{}", e.what());
        return kNumerical;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return kNumerical;
    }
    return kOk;
}
