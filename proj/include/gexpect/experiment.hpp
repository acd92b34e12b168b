#pragma once

// Config-driven experiment runner behind the `gexpect` command line tool.
//
// Config (JSON):
//   {"name": str, "kind": str, "seed": int,
//    "sigma": <covariance-set object> | "<path relative to the config>",
//    "params": {...kind specific...}, "output_dir": str (optional)}
//
// Report (JSON, keys sorted):
//   {"config": <echo>, "checks": [{name, lhs, rhs, tolerance, ok, n_paths, seed}],
//    "ok": bool, "series": {NAME: {"columns": [...], "rows": [[...]]}},
//    "artifacts": [file names], "timings": {...}}

#include "gexpect/control_sim.hpp"
#include "gexpect/covariance_set.hpp"
#include "gexpect/estimate.hpp"
#include "gexpect/g_normal.hpp"
#include "gexpect/g_pde.hpp"
#include "gexpect/parallel.hpp"
#include "gexpect/stoch_integral.hpp"

#include "json.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace gexpect {

/// Bad invocation, unreadable or invalid config: exit status 2.
class usage_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int check_failed = 1;
inline constexpr int usage = 2;
} // namespace exit_code

using Json = nlohmann::json;
using Functional = std::function<double(const Vector&)>;

namespace detail {

template <class T>
T param(const Json& params, const std::string& key, T fallback)
{
    if (!params.contains(key)) {
        return fallback;
    }
    try {
        return params.at(key).get<T>();
    } catch (const Json::exception& e) {
        throw usage_error("params." + key + ": " + e.what());
    }
}

template <class T>
T required(const Json& params, const std::string& key)
{
    if (!params.contains(key)) {
        throw usage_error("params." + key + " is required");
    }
    return param<T>(params, key, T{});
}

inline Vector to_vector(const std::vector<double>& v)
{
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline Matrix to_matrix(const std::vector<double>& row_major, std::size_t n)
{
    if (row_major.size() != n * n) {
        throw usage_error("matrix parameter needs " + std::to_string(n * n) + " entries");
    }
    Matrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row_major[i * n + j];
        }
    }
    return m;
}

} // namespace detail

/// f by name: x2 = |x|^2, neg_x2 = -|x|^2, abs = sum |x_i|, cos = cos(sum x_i),
/// linear = sum x_i, quadratic = <D x, x> with D = diag(params.d_diag).
inline Functional named_functional(const std::string& name, const Json& params, std::size_t dim)
{
    if (name == "x2") {
        return [](const Vector& x) { return x.squaredNorm(); };
    }
    if (name == "neg_x2") {
        return [](const Vector& x) { return -x.squaredNorm(); };
    }
    if (name == "abs") {
        return [](const Vector& x) { return x.cwiseAbs().sum(); };
    }
    if (name == "cos") {
        return [](const Vector& x) { return std::cos(x.sum()); };
    }
    if (name == "linear") {
        return [](const Vector& x) { return x.sum(); };
    }
    if (name == "quadratic") {
        const Vector d = detail::to_vector(detail::required<std::vector<double>>(params, "d_diag"));
        if (static_cast<std::size_t>(d.size()) != dim) {
            throw usage_error("params.d_diag must have one entry per dimension");
        }
        return [d](const Vector& x) { return x.dot(d.cwiseProduct(x)); };
    }
    throw usage_error("unknown functional '" + name + "'");
}

/// Mutable state of one run.
struct RunContext {
    Json config;
    Json params;
    CovarianceSet sigma;
    std::uint64_t seed = 0;
    std::filesystem::path out_dir;
    std::vector<CheckRecord> checks;
    Json series = Json::object();
    std::vector<std::string> artifacts;
    Json timings = Json::object();

    void add(CheckRecord r) { checks.push_back(std::move(r)); }

    std::ofstream artifact(const std::string& file)
    {
        std::filesystem::create_directories(out_dir);
        std::ofstream os(out_dir / file);
        if (!os) {
            throw std::runtime_error("cannot write " + (out_dir / file).string());
        }
        artifacts.push_back(file);
        return os;
    }

    void add_series(const std::string& name, std::vector<std::string> columns, Json rows)
    {
        series[name] = {{"columns", std::move(columns)}, {"rows", std::move(rows)}};
    }

    std::uint64_t seed_for(std::uint64_t k) const { return sub_seed(seed, k); }
};

namespace experiments {

inline void moments(RunContext& ctx)
{
    const auto m_max = detail::param<unsigned>(ctx.params, "m_max", 3);
    const auto n = detail::param<std::size_t>(ctx.params, "n_samples", 100000);
    const double scale = detail::param<double>(ctx.params, "scale", 1.0);
    if (m_max < 1) {
        throw usage_error("params.m_max must be >= 1");
    }
    const GNormal gn(ctx.sigma, scale);
    ctx.add(CheckRecord::near("moment_m1_identity", moment_upper(gn, 1), scale * ctx.sigma.max_trace(), 1e-12));
    Json rows = Json::array();
    for (unsigned m = 1; m <= m_max; ++m) {
        const auto b = moment_bounds_check(gn, m);
        const double k = moment_bound_constant(m);
        const double slack = 1e-12 * (1.0 + b.value);
        ctx.add(CheckRecord::at_most("moment_sandwich_lower_m" + std::to_string(m), b.lower, k * b.value, slack));
        ctx.add(CheckRecord::at_most("moment_sandwich_upper_m" + std::to_string(m), b.value, k * b.upper, slack));
        const auto est = static_upper_expectation(
            gn, [m](const Vector& x) { return std::pow(x.squaredNorm(), m); }, n, ctx.seed_for(m));
        ctx.add(CheckRecord::near("moment_mc_m" + std::to_string(m), est.value, b.value, 3.0 * est.std_error)
                    .with_sampling(n, ctx.seed_for(m)));
        rows.push_back({m, b.value, est.value, est.std_error});
    }
    ctx.add_series("moments", {"m", "exact", "mc", "std_error"}, std::move(rows));
    const auto samples = sample_gaussian(gn.scaled_sigma().extreme(0), std::min<std::size_t>(n, 1000), ctx.seed_for(0));
    auto os = ctx.artifact("samples.csv");
    write_samples_csv(os, samples);
}

inline void band(RunContext& ctx)
{
    const std::size_t dim = ctx.sigma.dim();
    const auto n = detail::param<std::size_t>(ctx.params, "n_samples", 100000);
    std::vector<Vector> dirs;
    if (ctx.params.contains("directions")) {
        for (const auto& d : ctx.params.at("directions")) {
            dirs.push_back(detail::to_vector(d.get<std::vector<double>>()));
            if (static_cast<std::size_t>(dirs.back().size()) != dim) {
                throw usage_error("params.directions: wrong dimension");
            }
        }
    } else {
        for (std::size_t i = 0; i < dim; ++i) {
            dirs.push_back(Vector::Unit(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(i)));
        }
    }
    const GNormal gn(ctx.sigma);
    Json rows = Json::array();
    for (std::size_t i = 0; i < dirs.size(); ++i) {
        const Vector h = dirs[i];
        const auto b = project_band(gn, HVector(h));
        const auto up = static_upper_expectation(
            gn, [&](const Vector& x) { const double v = h.dot(x); return v * v; }, n, ctx.seed_for(i));
        const auto down = static_upper_expectation(
            gn, [&](const Vector& x) { const double v = h.dot(x); return -v * v; }, n, ctx.seed_for(i));
        const std::string tag = std::to_string(i);
        ctx.add(CheckRecord::near("band_up_" + tag, up.value, b.sigma_up_sq, 3.0 * up.std_error)
                    .with_sampling(n, ctx.seed_for(i)));
        ctx.add(CheckRecord::near("band_down_" + tag, -down.value, b.sigma_down_sq, 3.0 * down.std_error)
                    .with_sampling(n, ctx.seed_for(i)));
        rows.push_back({i, b.sigma_up_sq, b.sigma_down_sq, up.value, -down.value});
    }
    ctx.add_series("band", {"direction", "sigma_up_sq", "sigma_down_sq", "mc_up", "mc_down"}, std::move(rows));
}

inline Matrix matrix_param(const RunContext& ctx, const std::string& key)
{
    const std::size_t n = ctx.sigma.dim();
    if (!ctx.params.contains(key)) {
        return Matrix::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    }
    return detail::to_matrix(ctx.params.at(key).get<std::vector<double>>(), n);
}

inline std::vector<ControlPolicy> constant_policies(const CovarianceSet& sigma)
{
    std::vector<ControlPolicy> out;
    for (std::size_t i = 0; i < sigma.size(); ++i) {
        out.push_back(ControlPolicy::constant(i));
    }
    return out;
}

inline void isometry(RunContext& ctx)
{
    const double T = detail::param<double>(ctx.params, "T", 1.0);
    const auto steps = detail::param<std::size_t>(ctx.params, "steps", 6);
    const auto n_paths = detail::param<std::size_t>(ctx.params, "n_paths", 20000);
    const auto trials = detail::param<std::size_t>(ctx.params, "trials", 20);
    const std::size_t dim = ctx.sigma.dim();
    const Matrix phi0 = matrix_param(ctx, "phi");
    const auto part = uniform_partition(T, steps);

    const auto det = ito_isometry_check(ElementaryProcess::constant(part, phi0), ctx.sigma, constant_policies(ctx.sigma),
                                        {T, steps, n_paths, ctx.seed_for(0)});
    ctx.add(CheckRecord::near("isometry_equality_deterministic", det.lhs, det.rhs, 3.0 * det.lhs_se)
                .with_sampling(n_paths, ctx.seed_for(0)));

    PolicyFamily fam;
    fam.bang_bang = [](double, const Vector& x) { return x.sum(); };
    const auto policies = fam.enumerate(ctx.sigma.size(), steps);
    std::mt19937_64 rng(ctx.seed_for(1));
    std::normal_distribution<double> z;
    for (std::size_t k = 0; k < trials; ++k) {
        Matrix a(dim, dim), b(dim, dim);
        for (auto& x : a.reshaped()) {
            x = z(rng);
        }
        for (auto& x : b.reshaped()) {
            x = z(rng);
        }
        const auto phi = ElementaryProcess::adapted(
            part, [a, b](std::size_t, double, const Vector& x) { return Matrix(a * std::tanh(x.sum()) + b * std::cos(x(0))); },
            dim, dim);
        const auto r = ito_isometry_check(phi, ctx.sigma, policies, {T, steps, n_paths / 4 + 1, ctx.seed_for(10 + k)});
        ctx.add(r.record("isometry_adapted_" + std::to_string(k)));
    }
    const auto paths = simulate_gbm(ctx.sigma, ControlPolicy::constant(0), std::min<std::size_t>(n_paths, 50), steps, T,
                                    ctx.seed_for(0));
    {
        auto os = ctx.artifact("paths.csv");
        write_paths_csv(os, paths);
    }
    auto meta = ctx.artifact("paths.json");
    meta << paths_sidecar(paths).dump(2) << '\n';
}

inline void bdg(RunContext& ctx)
{
    const double T = detail::param<double>(ctx.params, "T", 1.0);
    const auto steps = detail::param<std::size_t>(ctx.params, "steps", 4);
    const auto n_paths = detail::param<std::size_t>(ctx.params, "n_paths", 40000);
    const auto ps = detail::param<std::vector<double>>(ctx.params, "p", {1.0, 2.0, 4.0});
    const Matrix phi0 = matrix_param(ctx, "phi");
    const auto phi = ElementaryProcess::constant(uniform_partition(T, steps), phi0);
    Json rows = Json::array();
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const double p = ps[i];
        try {
            bdg_constant(p);
        } catch (const std::invalid_argument& e) {
            throw usage_error(e.what());
        }
        const auto r = bdg_check(phi, ctx.sigma, p, constant_policies(ctx.sigma), {T, steps, n_paths, ctx.seed_for(i)});
        std::ostringstream tag;
        tag << p;
        ctx.add(r.record("bdg_p" + tag.str()));
        rows.push_back({p, r.cp_estimate, r.constant});
    }
    ctx.add_series("bdg", {"p", "ratio", "constant"}, std::move(rows));
}

inline void sigma_integral(RunContext& ctx)
{
    const std::size_t dim = ctx.sigma.dim();
    const Vector a = detail::to_vector(detail::required<std::vector<double>>(ctx.params, "a_diag"));
    if (static_cast<std::size_t>(a.size()) != dim) {
        throw usage_error("params.a_diag must have one entry per dimension");
    }
    const double T = detail::param<double>(ctx.params, "T", 1.0);
    const auto quad = detail::param<std::size_t>(ctx.params, "quad_steps", 10000);
    const auto n_paths = detail::param<std::size_t>(ctx.params, "n_paths", 100000);
    const auto steps = detail::param<std::size_t>(ctx.params, "steps", 50);
    const SymOperator gen = SymOperator::diagonal(a);
    const auto sig = sigma_of_integral([&](double t) { return mat_exp(gen, T - t).matrix(); }, ctx.sigma, T, quad);
    // closed form: entry (i, j) = q_ij (e^{(a_i + a_j)T} - 1) / (a_i + a_j)
    const auto part = uniform_partition(T, steps);
    std::vector<Matrix> blocks;
    for (std::size_t k = 0; k < steps; ++k) {
        blocks.push_back(mat_exp(gen, T - 0.5 * (part[k] + part[k + 1])).matrix());
    }
    const auto phi = ElementaryProcess::deterministic(part, blocks);
    Json rows = Json::array();
    for (std::size_t e = 0; e < ctx.sigma.size(); ++e) {
        const Matrix& q = ctx.sigma.extreme(e).matrix();
        Matrix closed(q.rows(), q.cols());
        for (Eigen::Index i = 0; i < q.rows(); ++i) {
            for (Eigen::Index j = 0; j < q.cols(); ++j) {
                const double s = a(i) + a(j);
                closed(i, j) = q(i, j) * (s == 0.0 ? T : std::expm1(s * T) / s);
            }
        }
        const std::string tag = std::to_string(e);
        const double quad_err = (sig.extreme(e).matrix() - closed).norm();
        ctx.add(CheckRecord::near("sigma_integral_closed_form_" + tag, quad_err, 0.0, 1e-6));
        const auto paths = simulate_gbm(ctx.sigma, ControlPolicy::constant(e), n_paths, steps, T, ctx.seed_for(e));
        const auto r = integrate_elementary(phi, paths);
        const Vector mean = r.values.rowwise().mean();
        const Matrix c = r.values.colwise() - mean;
        const Matrix cov = c * c.transpose() / static_cast<double>(n_paths - 1);
        const double emp_err = (cov - sig.extreme(e).matrix()).norm();
        ctx.add(CheckRecord::near("sigma_integral_empirical_" + tag, emp_err, 0.0, 0.05)
                    .with_sampling(n_paths, ctx.seed_for(e)));
        rows.push_back({e, quad_err, emp_err});
    }
    ctx.add_series("sigma_integral", {"extreme", "closed_form_error", "empirical_error"}, std::move(rows));
    auto os = ctx.artifact("sigma_integral.json");
    os << to_json(sig).dump() << '\n';
}

inline void fubini(RunContext& ctx)
{
    const double T = detail::param<double>(ctx.params, "T", 1.0);
    const auto steps = detail::param<std::size_t>(ctx.params, "steps", 8);
    const auto n_paths = detail::param<std::size_t>(ctx.params, "n_paths", 1000);
    const auto points = detail::param<std::size_t>(ctx.params, "points", 3);
    const auto trials = detail::param<std::size_t>(ctx.params, "trials", 10);
    const std::size_t dim = ctx.sigma.dim();
    const auto part = uniform_partition(T, steps / 2 ? steps / 2 : 1);
    std::mt19937_64 rng(ctx.seed_for(0));
    std::normal_distribution<double> z;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto random_matrix = [&] {
        Matrix m(dim, dim);
        for (auto& x : m.reshaped()) {
            x = z(rng);
        }
        return m;
    };
    for (std::size_t t = 0; t < trials; ++t) {
        const auto paths = simulate_gbm(ctx.sigma, ControlPolicy::constant(t % ctx.sigma.size()), n_paths, steps, T,
                                        ctx.seed_for(1 + t));
        std::vector<ElementaryProcess> family;
        std::vector<double> weights;
        for (std::size_t j = 0; j < points; ++j) {
            if (j % 2 == 0) {
                std::vector<Matrix> blocks;
                for (std::size_t k = 0; k + 1 < part.size(); ++k) {
                    blocks.push_back(random_matrix());
                }
                family.push_back(ElementaryProcess::deterministic(part, blocks));
            } else {
                const Matrix m = random_matrix();
                family.push_back(ElementaryProcess::adapted(
                    part, [m](std::size_t, double, const Vector& x) { return Matrix(m * std::sin(x.sum())); }, dim,
                    dim));
            }
            weights.push_back(u(rng));
        }
        const auto r = fubini_check(family, weights, paths);
        ctx.add(CheckRecord::near("fubini_" + std::to_string(t), r.diff_norm, 0.0, 1e-10)
                    .with_sampling(n_paths, ctx.seed_for(1 + t)));
    }
    const auto paths = simulate_gbm(ctx.sigma, ControlPolicy::constant(0), n_paths, steps, T, ctx.seed_for(0));
    const auto base = ElementaryProcess::constant(part, random_matrix());
    ctx.add(CheckRecord::near("fubini_single_point", fubini_check({base}, {1.0}, paths).diff_norm, 0.0, 0.0));
    ctx.add(CheckRecord::near("fubini_zero_measure", fubini_check({base, base}, {0.0, 0.0}, paths).rhs.norm(), 0.0, 0.0));
}

inline std::vector<double> list_param(const Json& params, const std::string& key, std::vector<double> fallback)
{
    return detail::param<std::vector<double>>(params, key, std::move(fallback));
}

inline PdeProblem box_problem(const RunContext& ctx, Functional f, double T, double half_width)
{
    const auto n = static_cast<Eigen::Index>(ctx.sigma.dim());
    return PdeProblem{ctx.sigma, Vector(), std::move(f), T, Vector::Constant(n, -half_width),
                      Vector::Constant(n, half_width)};
}

inline void gheat(RunContext& ctx)
{
    if (ctx.sigma.dim() != 1) {
        throw usage_error("gheat: the battery is one-dimensional");
    }
    const double T = detail::param<double>(ctx.params, "T", 1.0);
    const double half = detail::param<double>(ctx.params, "half_width", 6.0);
    const auto nodes = detail::param<std::size_t>(ctx.params, "nodes", 121);
    const auto lattice_steps = detail::param<std::size_t>(ctx.params, "lattice_steps", 400);
    const auto x0s = list_param(ctx.params, "x0", {0.0, 0.5});
    const auto names = detail::param<std::vector<std::string>>(ctx.params, "functionals", {"x2", "neg_x2", "abs"});
    const Json mc = detail::param<Json>(ctx.params, "mc", Json::object());
    const auto mc_steps = detail::param<std::size_t>(mc, "steps", 10);
    const auto mc_paths = detail::param<std::size_t>(mc, "n_paths", 40000);

    double up = 0.0, down = std::numeric_limits<double>::infinity();
    for (const auto& q : ctx.sigma.extremes()) {
        up = std::max(up, q.matrix()(0, 0));
        down = std::min(down, q.matrix()(0, 0));
    }
    const VolatilityBand vb(up, down);
    PolicyFamily fam;
    fam.bang_bang = [](double, const Vector& x) { return x(0); };
    const double h = 2.0 * half / static_cast<double>(nodes - 1);

    for (std::size_t fi = 0; fi < names.size(); ++fi) {
        const auto f = named_functional(names[fi], ctx.params, 1);
        const auto sol = solve_gheat(box_problem(ctx, f, T, half), {{nodes}});
        const double disc = 2.0 * (h * h + sol.dt);
        if (fi == 0) {
            auto os = ctx.artifact("gheat_" + names[fi] + "_t0.csv");
            write_slice_csv(os, sol, 0);
        }
        for (std::size_t xi = 0; xi < x0s.size(); ++xi) {
            const double x0 = x0s[xi];
            const std::string tag = names[fi] + "_x" + std::to_string(xi);
            const double pde = sol.value_at(0, Vector::Constant(1, x0));
            const double lat = lattice_1d(vb, [&](double x) { return f(Vector::Constant(1, x)); }, x0, T, lattice_steps);
            const auto seed = ctx.seed_for(100 * fi + xi);
            const auto est = estimate_upper_expectation(ctx.sigma, f, HVector(Vector::Constant(1, x0)),
                                                        {T, mc_steps, mc_paths, seed}, fam);
            const double tol_mc = 3.0 * est.std_error + disc;
            ctx.add(CheckRecord::near("gheat_pde_vs_lattice_" + tag, pde, lat, disc));
            ctx.add(CheckRecord::near("gheat_pde_vs_mc_" + tag, pde, est.value, tol_mc).with_sampling(mc_paths, seed));
            ctx.add(CheckRecord::near("gheat_lattice_vs_mc_" + tag, lat, est.value, tol_mc).with_sampling(mc_paths, seed));
            if (names[fi] == "x2") {
                ctx.add(CheckRecord::near("gheat_closed_form_" + tag, pde, up * T + x0 * x0, tol_mc));
            }
            if (fi == 0 && xi == 0) {
                Json rows = Json::array();
                for (std::size_t j = 0; j < est.policies.size(); ++j) {
                    rows.push_back({j, est.per_policy[j].value, est.per_policy[j].std_error, est.policies[j].label()});
                }
                ctx.add_series("policy_sweep", {"policy", "value", "std_error", "label"}, std::move(rows));
            }
        }
    }
    // refinement series for the first functional at the first probe
    const auto f0 = named_functional(names.front(), ctx.params, 1);
    const double ref = lattice_1d(vb, [&](double x) { return f0(Vector::Constant(1, x)); }, x0s.front(), T, 4 * lattice_steps);
    Json rows = Json::array();
    for (std::size_t m : {nodes / 4, nodes / 2, nodes}) {
        const std::size_t cells = std::max<std::size_t>(2, m - m % 2);
        const auto sol = solve_gheat(box_problem(ctx, f0, T, half), {{cells + 1}});
        rows.push_back({2.0 * half / static_cast<double>(cells),
                        std::abs(sol.value_at(0, Vector::Constant(1, x0s.front())) - ref)});
    }
    ctx.add_series("convergence", {"h", "error"}, std::move(rows));
}

inline std::vector<Vector> probe_points(const RunContext& ctx, double half)
{
    const std::size_t dim = ctx.sigma.dim();
    std::vector<Vector> out;
    if (ctx.params.contains("probes")) {
        for (const auto& p : ctx.params.at("probes")) {
            out.push_back(detail::to_vector(p.get<std::vector<double>>()));
            if (static_cast<std::size_t>(out.back().size()) != dim) {
                throw usage_error("params.probes: wrong dimension");
            }
        }
        return out;
    }
    const auto n = detail::param<std::size_t>(ctx.params, "n_probes", 10);
    std::mt19937_64 rng(ctx.seed_for(999));
    std::uniform_real_distribution<double> u(-0.5 * half, 0.5 * half);
    for (std::size_t k = 0; k < n; ++k) {
        Vector x(static_cast<Eigen::Index>(dim));
        for (auto& v : x) {
            v = u(rng);
        }
        out.push_back(x);
    }
    return out;
}

inline void gpde(RunContext& ctx)
{
    const std::size_t dim = ctx.sigma.dim();
    const Vector a = detail::to_vector(detail::required<std::vector<double>>(ctx.params, "a_diag"));
    if (static_cast<std::size_t>(a.size()) != dim) {
        throw usage_error("params.a_diag must have one entry per dimension");
    }
    const double T = detail::param<double>(ctx.params, "T", 1.0);
    const double half = detail::param<double>(ctx.params, "half_width", 4.0);
    const auto nodes = detail::param<std::size_t>(ctx.params, "nodes", 81);
    const double c = detail::param<double>(ctx.params, "C", 2.0);
    const auto f = named_functional(detail::param<std::string>(ctx.params, "functional", "quadratic"), ctx.params, dim);
    const Json mc = detail::param<Json>(ctx.params, "mc", Json::object());
    McControl ctl;
    ctl.steps = detail::param<std::size_t>(mc, "steps", 100);
    ctl.n_paths = detail::param<std::size_t>(mc, "n_paths", 20000);
    ctl.family.switch_stride = detail::param<std::size_t>(mc, "switch_stride", 10);

    auto problem = box_problem(ctx, f, T, half);
    problem.a_diag = a;
    const auto sol = solve_gpde(problem, {std::vector<std::size_t>(dim, nodes)});
    const double h = 2.0 * half / static_cast<double>(nodes - 1);
    const double disc = c * (h * h + sol.dt);
    Json rows = Json::array();
    const auto probes = probe_points(ctx, half);
    for (std::size_t k = 0; k < probes.size(); ++k) {
        ctl.seed = ctx.seed_for(k);
        const auto est = mc_value(problem, HVector(probes[k]), 0.0, ctl);
        const double pde = sol.value_at(0, probes[k]);
        ctx.add(CheckRecord::near("gpde_probe_" + std::to_string(k), pde, est.value, 3.0 * est.std_error + disc)
                    .with_sampling(ctl.n_paths, ctl.seed));
        rows.push_back({k, pde, est.value, est.std_error});
    }
    ctx.add_series("probes", {"probe", "pde", "mc", "std_error"}, std::move(rows));
    ctx.add(CheckRecord::at_most("gpde_cfl_ratio", sol.cfl_ratio, 1.0, 0.0));
    auto os = ctx.artifact("gpde_t0.csv");
    write_slice_csv(os, sol, 0);
}

inline void ou(RunContext& ctx)
{
    const std::size_t dim = ctx.sigma.dim();
    const double lambda = detail::param<double>(ctx.params, "lambda", 1.0);
    const double T = detail::param<double>(ctx.params, "T", 1.0);
    const auto steps = detail::param<std::size_t>(ctx.params, "steps", 50);
    const auto n_paths = detail::param<std::size_t>(ctx.params, "n_paths", 2000);
    const auto x0 = list_param(ctx.params, "x0", std::vector<double>(dim, 0.5));
    if (x0.size() != dim) {
        throw usage_error("params.x0 must have one entry per dimension");
    }
    const SymOperator gen = SymOperator::diagonal(Vector::Constant(static_cast<Eigen::Index>(dim), -lambda));

    // flow property on a three-point split
    const auto full = ou_mild_path(gen, ctx.sigma, ControlPolicy::constant(0), HVector(detail::to_vector(x0)), 0.0, T,
                                   steps, n_paths, ctx.seed_for(0));
    const auto mid = ou_restart(gen, full, steps / 3);
    const auto late = ou_restart(gen, mid, steps / 3);
    double worst = 0.0;
    for (std::size_t p = 0; p < full.n_paths(); ++p) {
        worst = std::max(worst, (mid.state(p, mid.steps()) - full.state(p, full.steps())).norm());
        worst = std::max(worst, (late.state(p, late.steps()) - full.state(p, full.steps())).norm());
    }
    ctx.add(CheckRecord::near("ou_flow_property", worst, 0.0, 1e-10).with_sampling(n_paths, ctx.seed_for(0)));

    // scalar closed form E[X_T^2] = e^{-2 lambda T} x^2 + up (1 - e^{-2 lambda T}) / (2 lambda)
    if (dim == 1) {
        double up = 0.0;
        for (const auto& q : ctx.sigma.extremes()) {
            up = std::max(up, q.matrix()(0, 0));
        }
        const double half = detail::param<double>(ctx.params, "half_width", 5.0);
        const auto nodes = detail::param<std::size_t>(ctx.params, "nodes", 201);
        auto problem = box_problem(ctx, [](const Vector& x) { return x(0) * x(0); }, T, half);
        problem.a_diag = Vector::Constant(1, -lambda);
        const auto sol = solve_gpde(problem, {{nodes}});
        const double h = 2.0 * half / static_cast<double>(nodes - 1);
        const double disc = 2.0 * (h * h + sol.dt);
        const auto probes = list_param(ctx.params, "probes", {0.0, 0.7, -1.1});
        const auto mc_paths = detail::param<std::size_t>(ctx.params, "mc_paths", 20000);
        for (std::size_t k = 0; k < probes.size(); ++k) {
            const double x = probes[k];
            const double e2 = std::exp(-2.0 * lambda * T);
            const double exact = e2 * x * x + up * (1.0 - e2) / (2.0 * lambda);
            const std::string tag = std::to_string(k);
            ctx.add(CheckRecord::near("ou_pde_closed_form_" + tag, sol.value_at(0, Vector::Constant(1, x)), exact, disc));
            McControl ctl{steps, mc_paths, ctx.seed_for(10 + k), {}};
            const auto est = mc_value(problem, HVector(Vector::Constant(1, x)), 0.0, ctl);
            ctx.add(CheckRecord::near("ou_mc_closed_form_" + tag, est.value, exact,
                                      3.0 * est.std_error + 2.0 * lambda * up * T / static_cast<double>(steps))
                        .with_sampling(mc_paths, ctl.seed));
        }
    }
}

inline void nested(RunContext& ctx)
{
    if (ctx.sigma.dim() != 1) {
        throw usage_error("nested: one-dimensional covariance sets only");
    }
    const double T = detail::param<double>(ctx.params, "T", 1.0);
    const auto inner_paths = detail::param<std::size_t>(ctx.params, "inner_paths", 4000);
    const auto outer_paths = detail::param<std::size_t>(ctx.params, "outer_paths", 20000);
    double up = 0.0, down = std::numeric_limits<double>::infinity();
    for (const auto& q : ctx.sigma.extremes()) {
        up = std::max(up, q.matrix()(0, 0));
        down = std::min(down, q.matrix()(0, 0));
    }
    const double c = detail::param<double>(ctx.params, "c", 0.5 * (up + down) * T);
    PolicyFamily fam;
    const NestedSpec inner{HVector::zero(1), {T, 1, inner_paths, ctx.seed_for(1)}, fam};
    const NestedSpec outer{HVector::zero(1), {T, 1, outer_paths, ctx.seed_for(2)}, fam};

    const auto sum = nested_expectation(
        ctx.sigma, [](const Vector& x, const Vector& y) { return x(0) * x(0) - y(0) * y(0); }, inner, outer);
    const auto g1 = estimate_upper_expectation(ctx.sigma, [](const Vector& x) { return x(0) * x(0); }, outer.x0,
                                               outer.sim, fam);
    const auto g2 = estimate_upper_expectation(ctx.sigma, [](const Vector& y) { return -y(0) * y(0); }, inner.x0,
                                               inner.sim, fam);
    ctx.add(CheckRecord::near("nested_sum_split", sum.value, g1.value + g2.value, 3.0 * (g1.std_error + g2.std_error))
                .with_sampling(outer_paths, ctx.seed_for(2)));
    ctx.add(CheckRecord::near("nested_sum_closed_form", sum.value, (up - down) * T,
                              3.0 * (g1.std_error + g2.std_error))
                .with_sampling(outer_paths, ctx.seed_for(2)));

    // x (y^2 - c): E[X^+] E[g(Y)]^+ + E[X^-] E[-g(Y)]^+ from band values
    const auto prod = nested_expectation(
        ctx.sigma, [c](const Vector& x, const Vector& y) { return x(0) * (y(0) * y(0) - c); }, inner, outer);
    const double pos = std::sqrt(up * T / (2.0 * std::acos(-1.0)));
    const double formula = pos * std::max(up * T - c, 0.0) + pos * std::max(c - down * T, 0.0);
    const double inner_se = std::sqrt(2.0 * up * up * T * T / static_cast<double>(inner_paths)) * std::sqrt(up * T);
    ctx.add(CheckRecord::near("nested_product_formula", prod.value, formula, 3.0 * (prod.std_error + inner_se))
                .with_sampling(outer_paths, ctx.seed_for(2)));

    const auto constant = nested_expectation(ctx.sigma, [](const Vector&, const Vector&) { return 1.5; }, inner, outer);
    ctx.add(CheckRecord::near("nested_constant", constant.value, 1.5, 0.0));
}

} // namespace experiments

inline const std::map<std::string, std::function<void(RunContext&)>>& experiment_kinds()
{
    static const std::map<std::string, std::function<void(RunContext&)>> kinds = {
        {"moments", experiments::moments},
        {"band", experiments::band},
        {"isometry", experiments::isometry},
        {"bdg", experiments::bdg},
        {"sigma_integral", experiments::sigma_integral},
        {"fubini", experiments::fubini},
        {"gheat", experiments::gheat},
        {"gpde", experiments::gpde},
        {"ou", experiments::ou},
        {"nested", experiments::nested},
    };
    return kinds;
}

inline Json read_json_file(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is) {
        throw usage_error("cannot read " + path.string());
    }
    try {
        return Json::parse(is);
    } catch (const Json::parse_error& e) {
        throw usage_error(path.string() + ": " + e.what());
    }
}

/// Seed from GEXPECT_SEED_OVERRIDE, if set.
inline std::optional<std::uint64_t> seed_override_from_env()
{
    const char* v = std::getenv("GEXPECT_SEED_OVERRIDE");
    if (!v || !*v) {
        return std::nullopt;
    }
    std::size_t used = 0;
    unsigned long long s = 0;
    try {
        s = std::stoull(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != std::string(v).size() || std::string(v).front() == '-') {
        throw usage_error("GEXPECT_SEED_OVERRIDE must be a nonnegative integer");
    }
    return s;
}

struct RunOptions {
    std::optional<std::filesystem::path> out_dir;
    std::optional<std::uint64_t> seed_override;
};

/// Runs one config; writes report.json and artifacts into the output
/// directory and returns the report.
inline Json run_experiment(const Json& config, const std::filesystem::path& config_dir, const RunOptions& opts)
{
    const auto t_start = std::chrono::steady_clock::now();
    if (!config.is_object()) {
        throw usage_error("config must be a JSON object");
    }
    for (const char* key : {"name", "kind", "seed", "sigma"}) {
        if (!config.contains(key)) {
            throw usage_error(std::string("config: missing '") + key + "'");
        }
    }
    const auto kind = config.at("kind").get<std::string>();
    const auto& kinds = experiment_kinds();
    const auto runner = kinds.find(kind);
    if (runner == kinds.end()) {
        throw usage_error("config: unknown kind '" + kind + "'");
    }
    if (!config.at("seed").is_number_unsigned()) {
        throw usage_error("config: seed must be a nonnegative integer");
    }

    Json sigma_json = config.at("sigma");
    if (sigma_json.is_string()) {
        sigma_json = read_json_file(config_dir / sigma_json.get<std::string>());
    }
    std::optional<CovarianceSet> sigma;
    try {
        sigma = covariance_set_from_json(sigma_json);
    } catch (const std::exception& e) {
        throw usage_error(std::string("config.sigma: ") + e.what());
    }

    RunContext ctx{config, config.value("params", Json::object()), *sigma, 0, {}, {}, Json::object(), {}, Json::object()};
    ctx.seed = opts.seed_override.value_or(config.at("seed").get<std::uint64_t>());
    if (opts.out_dir) {
        ctx.out_dir = *opts.out_dir;
    } else if (config.contains("output_dir")) {
        ctx.out_dir = config_dir / config.at("output_dir").get<std::string>();
    } else {
        ctx.out_dir = std::filesystem::path("out") / config.at("name").get<std::string>();
    }
    if (opts.seed_override) {
        ctx.config["seed"] = *opts.seed_override;
    }

    try {
        runner->second(ctx);
    } catch (const usage_error&) {
        throw;
    } catch (const dimension_error& e) {
        throw usage_error(e.what());
    }

    Json checks = Json::array();
    bool ok = !ctx.checks.empty();
    for (auto& c : ctx.checks) {
        if (c.n_paths == 0) {
            c.seed = ctx.seed;
        }
        checks.push_back(to_json(c));
        ok = ok && c.ok;
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    ctx.timings["total_seconds"] = seconds;
    ctx.timings["threads"] = thread_limit();
    ctx.artifacts.push_back("report.json");
    Json report = {{"config", ctx.config},       {"checks", std::move(checks)}, {"ok", ok},
                   {"series", ctx.series},       {"artifacts", ctx.artifacts}, {"timings", ctx.timings}};
    std::filesystem::create_directories(ctx.out_dir);
    std::ofstream os(ctx.out_dir / "report.json");
    os << report.dump(2) << '\n';
    return report;
}

/// `gexpect run`: returns the process exit status.
inline int run_command(const std::filesystem::path& config_path, const RunOptions& base, std::ostream& out,
                       std::ostream& err)
{
    try {
        RunOptions opts = base;
        if (!opts.seed_override) {
            opts.seed_override = seed_override_from_env();
        }
        const Json config = read_json_file(config_path);
        const Json report = run_experiment(config, config_path.parent_path(), opts);
        for (const auto& c : report.at("checks")) {
            out << (c.at("ok").get<bool>() ? "ok   " : "FAIL ") << c.at("name").get<std::string>() << "  lhs="
                << c.at("lhs").get<double>() << " rhs=" << c.at("rhs").get<double>()
                << " tol=" << c.at("tolerance").get<double>() << '\n';
        }
        return report.at("ok").get<bool>() ? exit_code::ok : exit_code::check_failed;
    } catch (const usage_error& e) {
        err << "gexpect: " << e.what() << '\n';
        return exit_code::usage;
    } catch (const Json::exception& e) {
        err << "gexpect: invalid config: " << e.what() << '\n';
        return exit_code::usage;
    }
}

/// Flat CSV of one report series, rows sorted by the first column.
inline void write_series_csv(std::ostream& os, const Json& series)
{
    const auto& columns = series.at("columns");
    for (std::size_t i = 0; i < columns.size(); ++i) {
        os << (i ? "," : "") << columns[i].get<std::string>();
    }
    os << '\n';
    std::vector<Json> rows(series.at("rows").begin(), series.at("rows").end());
    std::stable_sort(rows.begin(), rows.end(), [](const Json& a, const Json& b) { return a.at(0) < b.at(0); });
    os.precision(17);
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            os << (i ? "," : "");
            if (row[i].is_string()) {
                os << row[i].get<std::string>();
            } else if (row[i].is_number_integer()) {
                os << row[i].get<long long>();
            } else {
                os << row[i].get<double>();
            }
        }
        os << '\n';
    }
}

/// `gexpect plot`: writes NAME.csv next to the report (or into out_dir).
inline int plot_command(const std::filesystem::path& report_path, const std::string& series,
                        const std::optional<std::filesystem::path>& out_dir, std::ostream& out, std::ostream& err)
{
    try {
        const Json report = read_json_file(report_path);
        if (!report.contains("series") || !report.at("series").contains(series)) {
            throw usage_error("report has no series '" + series + "'");
        }
        const auto dir = out_dir.value_or(report_path.parent_path());
        std::filesystem::create_directories(dir.empty() ? "." : dir);
        const auto path = dir / (series + ".csv");
        std::ofstream os(path);
        if (!os) {
            throw usage_error("cannot write " + path.string());
        }
        write_series_csv(os, report.at("series").at(series));
        out << path.string() << '\n';
        return exit_code::ok;
    } catch (const usage_error& e) {
        err << "gexpect: " << e.what() << '\n';
        return exit_code::usage;
    } catch (const Json::exception& e) {
        err << "gexpect: invalid report: " << e.what() << '\n';
        return exit_code::usage;
    }
}

} // namespace gexpect
