#pragma once

// JSON run configuration for the command-line front end. Every object is
// checked against its allowed keys; unknown keys and wrongly typed values are
// rejected with the dotted path of the offending field.

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "mpb/basis.hpp"
#include "mpb/error.hpp"
#include "mpb/fpca.hpp"
#include "mpb/model.hpp"
#include "mpb/quadrature.hpp"
#include "mpb/selection.hpp"
#include "mpb/sim.hpp"
#include "mpb/solver.hpp"

namespace mpb {

struct BasisSpec {
    BasisKind kind = BasisKind::BSpline;
    int rank = 10;
    int degree = 3;
    std::optional<double> period;  // Fourier; defaults to the domain length
};

struct OutputSpec {
    std::string dir = ".";
    std::string model = "model.mpbm";
    std::string report = "report.json";
};

enum class SelectMode { MarginalRank, GlobalRank, Cv };

struct SelectSpec {
    SelectMode mode = SelectMode::GlobalRank;
    std::vector<int> marginal_ranks;  // candidate m, applied to every dimension
    double marginal_threshold = 0.90;
    std::vector<int> ranks;           // candidate K
    double rank_threshold = 0.05;
    CvOptions cv;
};

enum class SimDesign { Sim51, Sim52 };

struct SimulateSpec {
    SimDesign design = SimDesign::Sim51;
    int replications = 1;
    Sim51Config sim51;
    Sim51FitSpec fit51;
    Sim52Config sim52;
    std::vector<int> ranks52 = {5, 10, 20, 30};
    int penalty_order = 2;
    bool fit = true;  // also fit and score MISE
};

struct RunConfig {
    std::vector<std::pair<double, double>> domain;
    std::vector<BasisSpec> bases;
    std::vector<int> penalty_orders;
    Grid grid;
    SolverConfig solver;
    bool center = false;
    std::uint64_t seed = 0;
    OutputSpec output;
    FPCAOptions fpca;
    SelectSpec select;
    SimulateSpec simulate;

    std::size_t dims() const noexcept { return domain.size(); }

    std::vector<MarginalBasis> make_bases() const {
        std::vector<MarginalBasis> out;
        for (std::size_t d = 0; d < bases.size(); ++d) {
            const auto [a, b] = domain.at(d);
            const auto& s = bases[d];
            out.push_back(s.kind == BasisKind::BSpline ? MarginalBasis::bspline(a, b, s.rank, s.degree)
                                                       : MarginalBasis::fourier(a, b, s.rank, s.period.value_or(b - a)));
        }
        return out;
    }

    std::vector<PenaltyOperator> make_ops() const {
        std::vector<PenaltyOperator> out;
        for (int o : penalty_orders) out.push_back(PenaltyOperator{o});
        return out;
    }
};

namespace config_detail {

using nlohmann::json;

class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ValidationError("config: '" + where() + "' must be an object");
    }

    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key);
    }

    const json& at(const std::string& key) {
        seen_.insert(key);
        if (!j_.contains(key)) throw ValidationError("config: missing field '" + name(key) + "'");
        return j_.at(key);
    }

    std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    int integer(const std::string& key, int fallback) { return has(key) ? as_int(at(key), name(key)) : fallback; }
    double number(const std::string& key, double fallback) { return has(key) ? as_double(at(key), name(key)) : fallback; }
    bool boolean(const std::string& key, bool fallback) {
        if (!has(key)) return fallback;
        if (!at(key).is_boolean()) throw ValidationError("config: field '" + name(key) + "' must be a boolean");
        return at(key).get<bool>();
    }
    std::string string(const std::string& key, const std::string& fallback) {
        if (!has(key)) return fallback;
        if (!at(key).is_string()) throw ValidationError("config: field '" + name(key) + "' must be a string");
        return at(key).get<std::string>();
    }
    std::uint64_t u64(const std::string& key, std::uint64_t fallback) {
        if (!has(key)) return fallback;
        const auto& v = at(key);
        if (!v.is_number_unsigned()) throw ValidationError("config: field '" + name(key) + "' must be a non-negative integer");
        return v.get<std::uint64_t>();
    }
    std::vector<double> numbers(const std::string& key) { return as_doubles(at(key), name(key)); }
    std::vector<int> integers(const std::string& key) {
        const auto& v = at(key);
        if (!v.is_array()) throw ValidationError("config: field '" + name(key) + "' must be an array of integers");
        std::vector<int> out;
        for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as_int(v[i], name(key) + "[" + std::to_string(i) + "]"));
        return out;
    }

    /// Throws on any key that was never asked for.
    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!seen_.count(k)) throw ValidationError("config: unknown key '" + name(k) + "'");
    }

    static int as_int(const json& v, const std::string& where) {
        if (!v.is_number_integer()) throw ValidationError("config: field '" + where + "' must be an integer");
        return v.get<int>();
    }
    static double as_double(const json& v, const std::string& where) {
        if (!v.is_number()) throw ValidationError("config: field '" + where + "' must be a number");
        return v.get<double>();
    }
    static std::vector<double> as_doubles(const json& v, const std::string& where) {
        if (!v.is_array()) throw ValidationError("config: field '" + where + "' must be an array of numbers");
        std::vector<double> out;
        for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as_double(v[i], where + "[" + std::to_string(i) + "]"));
        return out;
    }

private:
    std::string where() const { return path_.empty() ? "<root>" : path_; }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

/// An array with one entry per dimension, or a single non-array value broadcast to all.
inline std::vector<json> per_dimension(const json& v, std::size_t dims, const std::string& where) {
    if (!v.is_array()) return std::vector<json>(dims, v);
    if (v.size() == 1 && dims > 1) return std::vector<json>(dims, v[0]);
    if (v.size() != dims)
        throw ValidationError("config: field '" + where + "' has " + std::to_string(v.size()) + " entries, expected " +
                              std::to_string(dims));
    return {v.begin(), v.end()};
}

inline BasisSpec parse_basis(const json& j, const std::string& where) {
    Reader r(j, where);
    BasisSpec b;
    const auto kind = r.string("kind", "bspline");
    if (kind == "bspline")
        b.kind = BasisKind::BSpline;
    else if (kind == "fourier")
        b.kind = BasisKind::Fourier;
    else
        throw ValidationError("config: field '" + r.name("kind") + "' must be \"bspline\" or \"fourier\"");
    b.rank = r.integer("rank", b.rank);
    b.degree = r.integer("degree", b.degree);
    if (r.has("period")) b.period = Reader::as_double(r.at("period"), r.name("period"));
    r.finish();
    return b;
}

inline SolverConfig parse_solver(const json& j, std::size_t dims, SolverConfig s = {}) {
    Reader r(j, "solver");
    s.rank = r.integer("rank", s.rank);
    if (r.has("lambda_marginal")) {
        const auto& v = r.at("lambda_marginal");
        s.lambda_marginal.clear();
        for (const auto& x : per_dimension(v, dims, "solver.lambda_marginal"))
            s.lambda_marginal.push_back(Reader::as_double(x, "solver.lambda_marginal"));
    }
    s.lambda_coef = r.number("lambda_coef", s.lambda_coef);
    const auto pen = r.string("coef_penalty", s.coef_penalty == CoefPenalty::Ridge ? "ridge" : "lasso");
    if (pen == "ridge")
        s.coef_penalty = CoefPenalty::Ridge;
    else if (pen == "lasso")
        s.coef_penalty = CoefPenalty::Lasso;
    else
        throw ValidationError("config: field 'solver.coef_penalty' must be \"ridge\" or \"lasso\"");
    s.max_outer_iters = r.integer("max_outer_iters", s.max_outer_iters);
    s.outer_tol = r.number("outer_tol", s.outer_tol);
    s.admm_tol_primal = r.number("admm_tol_primal", s.admm_tol_primal);
    s.admm_tol_dual = r.number("admm_tol_dual", s.admm_tol_dual);
    s.admm_max_iters = r.integer("admm_max_iters", s.admm_max_iters);
    s.proximal_mu = r.number("proximal_mu", s.proximal_mu);
    if (r.has("gamma")) s.fixed_gamma = Reader::as_double(r.at("gamma"), "solver.gamma");
    const auto init = r.string("init", s.init == InitKind::Hosvd ? "hosvd" : "random");
    if (init == "random")
        s.init = InitKind::RandomNormal;
    else if (init == "hosvd")
        s.init = InitKind::Hosvd;
    else
        throw ValidationError("config: field 'solver.init' must be \"random\" or \"hosvd\"");
    r.finish();
    return s;
}

inline std::vector<double> parse_grid(const json& j, std::pair<double, double> dom, const std::string& where) {
    if (j.is_array()) return Reader::as_doubles(j, where);
    Reader r(j, where);
    const int n = r.integer("equispaced", 0);
    r.finish();
    if (n < 2) throw ValidationError("config: field '" + where + ".equispaced' must be >= 2");
    return linspace(dom.first, dom.second, static_cast<std::size_t>(n));
}

inline void parse_select(const json& j, SelectSpec& s) {
    Reader r(j, "select");
    const auto mode = r.string("mode", "global-rank");
    if (mode == "marginal-rank")
        s.mode = SelectMode::MarginalRank;
    else if (mode == "global-rank")
        s.mode = SelectMode::GlobalRank;
    else if (mode == "cv")
        s.mode = SelectMode::Cv;
    else
        throw ValidationError("config: field 'select.mode' must be marginal-rank, global-rank or cv");
    if (r.has("marginal_ranks")) s.marginal_ranks = r.integers("marginal_ranks");
    s.marginal_threshold = r.number("marginal_threshold", s.marginal_threshold);
    if (r.has("ranks")) s.ranks = r.integers("ranks");
    s.rank_threshold = r.number("rank_threshold", s.rank_threshold);
    if (r.has("lambda_f")) s.cv.lambda_f = r.numbers("lambda_f");
    if (r.has("lambda_coef")) s.cv.lambda_coef = r.numbers("lambda_coef");
    s.cv.n_folds = static_cast<std::size_t>(r.integer("folds", static_cast<int>(s.cv.n_folds)));
    r.finish();
}

inline void parse_fpca(const json& j, FPCAOptions& f) {
    Reader r(j, "fpca");
    f.lambda = r.number("lambda", f.lambda);
    if (r.has("k_dagger")) f.k_dagger = Reader::as_int(r.at("k_dagger"), "fpca.k_dagger");
    f.variance_threshold = r.number("variance_threshold", f.variance_threshold);
    r.finish();
    detail::require(f.lambda >= 0.0, "config: field 'fpca.lambda' must be >= 0");
    detail::require(!f.k_dagger || *f.k_dagger >= 1, "config: field 'fpca.k_dagger' must be >= 1");
    detail::require(f.variance_threshold > 0.0 && f.variance_threshold <= 1.0,
                    "config: field 'fpca.variance_threshold' must be in (0, 1]");
}

inline void parse_simulate(const json& j, SimulateSpec& s) {
    Reader r(j, "simulate");
    const auto design = r.string("design", "sim51");
    if (design == "sim51")
        s.design = SimDesign::Sim51;
    else if (design == "sim52")
        s.design = SimDesign::Sim52;
    else
        throw ValidationError("config: field 'simulate.design' must be \"sim51\" or \"sim52\"");
    s.replications = r.integer("replications", s.replications);
    s.fit = r.boolean("fit", s.fit);
    s.penalty_order = r.integer("penalty_order", s.penalty_order);
    if (r.has("sim51")) {
        Reader q(r.at("sim51"), "simulate.sim51");
        auto& c = s.sim51;
        c.dims = q.integer("dims", c.dims);
        c.true_marginal_rank = q.integer("true_marginal_rank", c.true_marginal_rank);
        c.true_rank = q.integer("true_rank", c.true_rank);
        c.coef_sd = q.number("coef_sd", c.coef_sd);
        c.decay = q.number("decay", c.decay);
        c.noise_variance = q.number("noise_variance", c.noise_variance);
        c.points_per_dim = q.integer("points_per_dim", c.points_per_dim);
        c.subjects = q.integer("subjects", c.subjects);
        c.fixed_factors = q.boolean("fixed_factors", c.fixed_factors);
        s.fit51.marginal_rank = q.integer("fit_marginal_rank", s.fit51.marginal_rank);
        s.fit51.degree = q.integer("fit_degree", s.fit51.degree);
        q.finish();
        c.validate();
    }
    if (r.has("sim52")) {
        Reader q(r.at("sim52"), "simulate.sim52");
        auto& c = s.sim52;
        c.lower = q.number("lower", c.lower);
        c.upper = q.number("upper", c.upper);
        c.rank0 = q.integer("rank0", c.rank0);
        c.rank1 = q.integer("rank1", c.rank1);
        c.decay = q.number("decay", c.decay);
        c.grid_points = q.integer("grid_points", c.grid_points);
        c.train_subjects = q.integer("train_subjects", c.train_subjects);
        c.test_subjects = q.integer("test_subjects", c.test_subjects);
        if (q.has("fit_ranks")) s.ranks52 = q.integers("fit_ranks");
        q.finish();
    }
    detail::require(s.replications >= 1, "config: field 'simulate.replications' must be >= 1");
    s.sim52.replications = s.replications;
}

}  // namespace config_detail

/// Parses and validates a run configuration document.
inline RunConfig parse_run_config(const nlohmann::json& j) {
    using config_detail::Reader;
    Reader r(j, "");
    RunConfig c;
    c.seed = r.u64("seed", 0);
    if (r.has("domain")) {
        const auto& dom = r.at("domain");
        if (!dom.is_array() || dom.empty()) throw ValidationError("config: field 'domain' must be a non-empty array of [lower, upper]");
        for (std::size_t d = 0; d < dom.size(); ++d) {
            const auto where = "domain[" + std::to_string(d) + "]";
            const auto ab = Reader::as_doubles(dom[d], where);
            if (ab.size() != 2 || !(ab[1] > ab[0])) throw ValidationError("config: field '" + where + "' must be [lower, upper] with lower < upper");
            c.domain.emplace_back(ab[0], ab[1]);
        }
    }
    const std::size_t dims = c.domain.size();
    if (r.has("bases")) {
        detail::require(dims > 0, "config: field 'bases' requires 'domain'");
        const auto items = config_detail::per_dimension(r.at("bases"), dims, "bases");
        for (std::size_t d = 0; d < dims; ++d) c.bases.push_back(config_detail::parse_basis(items[d], "bases[" + std::to_string(d) + "]"));
    }
    if (r.has("penalty_orders")) {
        detail::require(dims > 0, "config: field 'penalty_orders' requires 'domain'");
        for (const auto& v : config_detail::per_dimension(r.at("penalty_orders"), dims, "penalty_orders")) {
            const int o = Reader::as_int(v, "penalty_orders");
            detail::require(o >= 0, "config: field 'penalty_orders' entries must be >= 0");
            c.penalty_orders.push_back(o);
        }
    } else {
        c.penalty_orders.assign(dims, 2);
    }
    if (r.has("grids")) {
        detail::require(dims > 0, "config: field 'grids' requires 'domain'");
        const auto items = config_detail::per_dimension(r.at("grids"), dims, "grids");
        for (std::size_t d = 0; d < dims; ++d)
            c.grid.push_back(config_detail::parse_grid(items[d], c.domain[d], "grids[" + std::to_string(d) + "]"));
    }
    if (r.has("solver")) c.solver = config_detail::parse_solver(r.at("solver"), dims);
    c.center = r.boolean("center", false);
    if (r.has("output")) {
        Reader o(r.at("output"), "output");
        c.output.dir = o.string("dir", c.output.dir);
        c.output.model = o.string("model", c.output.model);
        c.output.report = o.string("report", c.output.report);
        o.finish();
    }
    if (r.has("fpca")) config_detail::parse_fpca(r.at("fpca"), c.fpca);
    if (r.has("select")) config_detail::parse_select(r.at("select"), c.select);
    if (r.has("simulate")) config_detail::parse_simulate(r.at("simulate"), c.simulate);
    r.finish();
    c.solver.seed = c.seed;
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ValidationError("cannot open config '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("config '" + path + "' is not valid JSON: " + e.what());
    }
    return parse_run_config(j);
}

}  // namespace mpb
