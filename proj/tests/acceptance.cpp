// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 on any failure.

#include "gexpect/experiment.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

using namespace gexpect;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigs = GEXPECT_CONFIG_DIR;

struct Outcome {
    bool ok = true;
    std::string note;
    std::size_t failures = 0;

    void expect(bool cond, const std::string& what)
    {
        if (!cond && ++failures <= 3) {
            note += (note.empty() ? "" : "; ") + what;
        }
        ok = ok && cond;
    }
};

Matrix random_psd(std::size_t n, std::mt19937_64& rng)
{
    std::normal_distribution<double> z;
    Matrix g(n, n);
    for (auto& x : g.reshaped()) {
        x = z(rng);
    }
    return g * g.transpose() / static_cast<double>(n);
}

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng)
{
    std::normal_distribution<double> z;
    Matrix g(r, c);
    for (auto& x : g.reshaped()) {
        x = z(rng);
    }
    return g;
}

Json run_config(const std::string& file, const std::string& tag)
{
    RunOptions opts;
    opts.out_dir = fs::temp_directory_path() / ("gexpect_acceptance_" + tag);
    fs::remove_all(*opts.out_dir);
    std::ifstream is(kConfigs / file);
    return run_experiment(Json::parse(is), kConfigs, opts);
}

void expect_report(Outcome& out, const Json& report, const std::string& prefix = "")
{
    for (const auto& c : report.at("checks")) {
        const auto name = c.at("name").get<std::string>();
        if (name.rfind(prefix, 0) == 0) {
            std::ostringstream os;
            os << name << " lhs=" << c.at("lhs").get<double>() << " rhs=" << c.at("rhs").get<double>()
               << " tol=" << c.at("tolerance").get<double>();
            out.expect(c.at("ok").get<bool>(), os.str());
        }
    }
}

std::vector<CovarianceSet> moment_sets()
{
    std::mt19937_64 rng(101);
    Matrix pair0(2, 2), pair1(2, 2);
    pair0 << 1.0, 0.3, 0.3, 0.6;
    pair1 << 0.5, -0.2, -0.2, 1.0;
    return {
        CovarianceSet::from_matrices({Matrix::Constant(1, 1, 1.0), Matrix::Constant(1, 1, 0.25)}, "band1"),
        CovarianceSet::singleton(Matrix::Identity(2, 2), "identity2"),
        CovarianceSet::from_matrices({pair0, pair1}, "pair2"),
        CovarianceSet::from_matrices({random_psd(4, rng), random_psd(4, rng), random_psd(4, rng)}, "random4"),
        CovarianceSet::from_matrices({Vector{{1.0, 0.5, 0.2, 0.1}}.asDiagonal().toDenseMatrix(),
                                      Vector{{0.1, 0.2, 0.5, 1.0}}.asDiagonal().toDenseMatrix()},
                                     "diag4"),
    };
}

Outcome moment_identity()
{
    Outcome out;
    std::uint64_t seed = 1;
    for (const auto& s : moment_sets()) {
        const GNormal gn(s);
        const double exact = moment_upper(gn, 1);
        out.expect(std::abs(exact - s.max_trace()) <= 1e-12, s.label() + ": moment_upper(1) != sup Tr Q");
        const auto est = static_upper_expectation(gn, [](const Vector& x) { return x.squaredNorm(); }, 100000, seed++);
        out.expect(std::abs(est.value - exact) <= 3.0 * est.std_error, s.label() + ": MC outside 3 SE");
    }
    return out;
}

Outcome moment_recursion()
{
    Outcome out;
    std::uint64_t seed = 7;
    for (double sigma : {0.5, 1.0, 1.5}) {
        const double v = sigma * sigma;
        const PsdOperator q(Matrix::Constant(1, 1, v));
        out.expect(std::abs(gaussian_even_moment(q, 2) - 3.0 * v * v) <= 1e-10, "m=2 recursion");
        out.expect(std::abs(gaussian_even_moment(q, 3) - 15.0 * v * v * v) <= 1e-10, "m=3 recursion");
        const GNormal gn(CovarianceSet::singleton(q.matrix()));
        for (unsigned m : {2u, 3u}) {
            const double exact = gaussian_even_moment(q, m);
            const auto est = static_upper_expectation(gn, [m](const Vector& x) { return std::pow(x(0), 2 * m); },
                                                      1000000, seed++);
            std::ostringstream os;
            os << "MC m=" << m << " sigma=" << sigma << " rel err " << std::abs(est.value / exact - 1.0);
            out.expect(std::abs(est.value - exact) <= 0.01 * exact, os.str());
        }
    }
    return out;
}

// Shared-seed sup of sample means is sublinear sample by sample, so every law
// must hold up to rounding.
Outcome sublinear_laws()
{
    Outcome out;
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double eps = 1e-10;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + static_cast<std::size_t>(trial % 3);
        const auto sigma = CovarianceSet::from_matrices({random_psd(n, rng), random_psd(n, rng)});
        Vector c1(n), c2(n);
        for (std::size_t i = 0; i < n; ++i) {
            c1(i) = u(rng);
            c2(i) = u(rng);
        }
        const double shift = 0.2 + std::abs(u(rng));
        const double lambda = 0.1 + 3.0 * std::abs(u(rng));
        const double konst = 5.0 * u(rng);
        auto f = [&](const Vector& x) { return std::pow(x.dot(c1), 2) - x.dot(c2); };
        auto g = [&](const Vector& x) { return std::cos(x.dot(c2)) + x.dot(c1); };

        std::function<McEstimate(const Functional&)> e;
        const std::uint64_t seed = 5000 + static_cast<std::uint64_t>(trial);
        if (trial % 2 == 0) {
            const GNormal gn(sigma);
            e = [gn, seed](const Functional& h) { return static_upper_expectation(gn, h, 4000, seed); };
        } else {
            PolicyFamily fam;
            fam.bang_bang = [c1](double, const Vector& x) { return x.dot(c1); };
            const SimulationSpec spec(1.0, 4, 1000, seed);
            e = [sigma, spec, fam, n](const Functional& h) {
                const auto r = estimate_upper_expectation(sigma, h, HVector::zero(n), spec, fam);
                return McEstimate{r.value, r.std_error, spec.n_paths, r.argmax};
            };
        }
        const std::string tag = " (case " + std::to_string(trial) + ")";
        const double vf = e(f).value;
        const double vg = e(g).value;
        const double scale = 1.0 + std::abs(vf) + std::abs(vg);
        // monotonicity: f <= f + shift and f <= max(f, g)
        out.expect(vf <= e([&](const Vector& x) { return f(x) + shift * std::exp(-x.squaredNorm()); }).value + eps * scale,
                   "monotonicity" + tag);
        out.expect(std::max(vf, vg) <= e([&](const Vector& x) { return std::max(f(x), g(x)); }).value + eps * scale,
                   "monotonicity max" + tag);
        out.expect(e([&](const Vector& x) { return f(x) + g(x); }).value <= vf + vg + eps * scale, "subadditivity" + tag);
        out.expect(std::abs(e([&](const Vector& x) { return lambda * f(x); }).value - lambda * vf) <= eps * scale * lambda,
                   "positive homogeneity" + tag);
        out.expect(std::abs(e([&](const Vector&) { return konst; }).value - konst) <= eps * (1.0 + std::abs(konst)),
                   "constant preservation" + tag);
        out.expect(std::abs(e([&](const Vector& x) { return f(x) + konst; }).value - (vf + konst)) <= eps * (scale + std::abs(konst)),
                   "translation by constants" + tag);
        const double xy = e([&](const Vector& x) { return std::abs(f(x) * g(x)); }).value;
        const double xx = e([&](const Vector& x) { return f(x) * f(x); }).value;
        const double yy = e([&](const Vector& x) { return g(x) * g(x); }).value;
        out.expect(xy <= std::sqrt(xx * yy) * (1.0 + eps) + eps, "CBS" + tag);
    }
    return out;
}

Outcome ito_isometry()
{
    Outcome out;
    std::mt19937_64 rng(404);
    const double T = 1.0;
    const std::size_t steps = 6;
    const auto part = uniform_partition(T, steps);
    Matrix q0(2, 2), q1(2, 2);
    q0 << 1.0, 0.3, 0.3, 0.6;
    q1 << 0.5, -0.2, -0.2, 1.0;
    const auto sigma = CovarianceSet::from_matrices({q0, q1}, "pair");
    std::vector<ControlPolicy> constants{ControlPolicy::constant(0), ControlPolicy::constant(1)};

    PolicyFamily fam;
    fam.bang_bang = [](double, const Vector& x) { return x(0) - x(1); };
    fam.switch_stride = 2;
    const auto policies = fam.enumerate(sigma.size(), steps);
    for (std::size_t k = 0; k < 20; ++k) {
        const Matrix a = random_matrix(2, 2, rng);
        const Matrix b = random_matrix(2, 2, rng);
        const auto phi = ElementaryProcess::adapted(
            part, [a, b](std::size_t, double t, const Vector& x) { return Matrix(a * std::tanh(x.sum()) + (1.0 + t) * b * std::cos(x(1))); },
            2, 2);
        const auto r = ito_isometry_check(phi, sigma, policies, {T, steps, 6000, 700 + k});
        out.expect(r.ok, "adapted integrand " + std::to_string(k) + " violates the inequality");
    }
    // deterministic battery: constant, time-varying scalar profile, rectangular
    std::vector<ElementaryProcess> det;
    det.push_back(ElementaryProcess::constant(part, random_matrix(2, 2, rng)));
    std::vector<Matrix> blocks;
    const Matrix m = random_matrix(2, 2, rng);
    for (std::size_t k = 0; k < steps; ++k) {
        blocks.push_back((1.0 + 0.5 * static_cast<double>(k)) * m);
    }
    det.push_back(ElementaryProcess::deterministic(part, blocks));
    det.push_back(ElementaryProcess::constant(part, random_matrix(3, 2, rng)));
    for (std::size_t k = 0; k < det.size(); ++k) {
        const auto r = ito_isometry_check(det[k], sigma, constants, {T, steps, 40000, 900 + k});
        std::ostringstream os;
        os << "deterministic " << k << ": lhs " << r.lhs << " rhs " << r.rhs << " 3SE " << 3.0 * r.lhs_se;
        out.expect(std::abs(r.lhs - r.rhs) <= 3.0 * r.lhs_se, os.str());
    }
    return out;
}

Outcome bdg()
{
    Outcome out;
    std::mt19937_64 rng(505);
    const double T = 1.0;
    const std::size_t steps = 4;
    const auto part = uniform_partition(T, steps);
    struct Case {
        CovarianceSet sigma;
        ElementaryProcess phi;
    };
    std::vector<Case> battery;
    const auto band = CovarianceSet::from_matrices({Matrix::Constant(1, 1, 1.0), Matrix::Constant(1, 1, 0.25)}, "band");
    battery.push_back({band, ElementaryProcess::constant(part, Matrix::Identity(1, 1))});
    battery.push_back({band, ElementaryProcess::deterministic(
                                 part, {Matrix::Constant(1, 1, 2.0), Matrix::Constant(1, 1, 0.5),
                                        Matrix::Constant(1, 1, -1.0), Matrix::Constant(1, 1, 1.5)})});
    const auto pair = CovarianceSet::from_matrices({random_psd(2, rng), random_psd(2, rng)}, "pair");
    battery.push_back({pair, ElementaryProcess::constant(part, random_matrix(2, 2, rng))});
    std::vector<Matrix> blocks;
    for (std::size_t k = 0; k < steps; ++k) {
        blocks.push_back(random_matrix(2, 2, rng));
    }
    battery.push_back({pair, ElementaryProcess::deterministic(part, blocks)});

    for (std::size_t i = 0; i < battery.size(); ++i) {
        std::vector<ControlPolicy> constants;
        for (std::size_t e = 0; e < battery[i].sigma.size(); ++e) {
            constants.push_back(ControlPolicy::constant(e));
        }
        const auto r2 = bdg_check(battery[i].phi, battery[i].sigma, 2.0, constants, {T, steps, 40000, 60 + i});
        std::ostringstream os2;
        os2 << "case " << i << " p=2 ratio " << r2.cp_estimate;
        out.expect(r2.cp_estimate <= 1.0 + 3.0 * r2.lhs_se / r2.rhs, os2.str());
        const auto r4 = bdg_check(battery[i].phi, battery[i].sigma, 4.0, constants, {T, steps, 40000, 80 + i});
        std::ostringstream os4;
        os4 << "case " << i << " p=4 ratio " << r4.cp_estimate << " > " << bdg_constant(4.0);
        out.expect(r4.cp_estimate <= bdg_constant(4.0), os4.str());
    }
    return out;
}

Outcome sigma_integral_theorem()
{
    Outcome out;
    expect_report(out, run_config("sigma_integral_2d.json", "sigma_integral"));
    return out;
}

Outcome gheat_representation()
{
    Outcome out;
    expect_report(out, run_config("gheat_1d.json", "gheat"));
    return out;
}

Outcome full_representation()
{
    Outcome out;
    const Json gpde = run_config("gpde_2d.json", "gpde");
    out.expect(gpde.at("series").at("probes").at("rows").size() == 10, "expected 10 probes");
    expect_report(out, gpde);
    expect_report(out, run_config("ou_1d.json", "ou"), "ou_pde_closed_form");
    return out;
}

Outcome scheme_monotonicity()
{
    Outcome out;
    std::mt19937_64 rng(909);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Matrix q0(2, 2), q1(2, 2);
    q0 << 1.0, 0.3, 0.3, 0.6;
    q1 << 0.5, -0.2, -0.2, 1.0;
    const auto pair = CovarianceSet::from_matrices({q0, q1}, "pair");
    const auto band = CovarianceSet::from_matrices({Matrix::Constant(1, 1, 1.0), Matrix::Constant(1, 1, 0.25)}, "band");
    std::size_t violations = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const bool two_d = trial % 2 == 0;
        const double a1 = u(rng), a2 = u(rng), c = std::abs(u(rng)) + 0.05, k = 3.0 * u(rng);
        const Functional f = [=](const Vector& x) {
            return std::sin(a1 * x(0) + a2 * x(x.size() - 1)) + std::abs(x(0) - k * x(x.size() - 1)) * 0.3;
        };
        const Functional g = [=](const Vector& x) { return f(x) + c * std::max(0.0, 1.0 - x.squaredNorm()); };
        const auto& sigma = two_d ? pair : band;
        const auto n = static_cast<Eigen::Index>(sigma.dim());
        PdeProblem pf{sigma, Vector(), f, 0.5, Vector::Constant(n, -2.0), Vector::Constant(n, 2.0)};
        pf.a_diag = two_d ? Vector{{-0.5 + 0.3 * u(rng), -1.0}} : Vector::Constant(1, -std::abs(u(rng)));
        PdeProblem pg = pf;
        pg.terminal = g;
        const MeshSpec mesh{std::vector<std::size_t>(sigma.dim(), two_d ? 21 : 81)};
        const auto sf = solve_gpde(pf, mesh);
        const auto sg = solve_gpde(pg, mesh);
        for (std::size_t s = 0; s < sf.slices.size(); ++s) {
            for (std::size_t i = 0; i < sf.size(); ++i) {
                violations += sf.slices[s][i] > sg.slices[s][i] ? 1 : 0;
            }
        }
    }
    out.expect(violations == 0, std::to_string(violations) + " node violations");
    return out;
}

Outcome fubini_and_flow()
{
    Outcome out;
    expect_report(out, run_config("fubini_2d.json", "fubini"));
    expect_report(out, run_config("ou_1d.json", "ou_flow"), "ou_flow");
    Matrix q0(2, 2), q1(2, 2);
    q0 << 1.0, 0.3, 0.3, 0.6;
    q1 << 0.5, -0.2, -0.2, 1.0;
    const auto sigma = CovarianceSet::from_matrices({q0, q1});
    Matrix a(2, 2);
    a << -1.0, 0.4, 0.4, -2.0;
    const SymOperator gen(a);
    const auto pol = ControlPolicy::feedback([](std::size_t, double, const Vector& x) { return x(0) > 0 ? 0u : 1u; });
    const auto full = ou_mild_path(gen, sigma, pol, HVector(Vector{{0.3, -0.7}}), 0.0, 1.0, 60, 500, 77);
    double worst = 0.0;
    for (std::size_t from : {10u, 25u, 47u}) {
        const auto restart = ou_restart(gen, full, from);
        for (std::size_t p = 0; p < full.n_paths(); ++p) {
            for (std::size_t k = 0; k <= restart.steps(); ++k) {
                worst = std::max(worst, (restart.state(p, k) - full.state(p, from + k)).norm());
            }
        }
    }
    std::ostringstream os;
    os << "2-d flow discrepancy " << worst;
    out.expect(worst < 1e-10, os.str());
    return out;
}

std::string slurp(const fs::path& p)
{
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

Outcome determinism()
{
    Outcome out;
    for (const char* file : {"moments_identity.json", "band_2d.json", "isometry_2d.json", "bdg_1d.json"}) {
        std::ifstream is(kConfigs / file);
        const Json cfg = Json::parse(is);
        std::vector<fs::path> dirs;
        for (int rep = 0; rep < 2; ++rep) {
            RunOptions opts;
            opts.out_dir = fs::temp_directory_path() / ("gexpect_det_" + std::to_string(rep));
            fs::remove_all(*opts.out_dir);
            set_thread_limit(rep == 0 ? 1 : 3);
            const Json report = run_experiment(cfg, kConfigs, opts);
            dirs.push_back(*opts.out_dir);
        }
        set_thread_limit(0);
        for (const auto& entry : fs::directory_iterator(dirs[0])) {
            const auto name = entry.path().filename();
            std::string a = slurp(dirs[0] / name);
            std::string b = slurp(dirs[1] / name);
            if (name == "report.json") {
                Json ja = Json::parse(a), jb = Json::parse(b);
                ja.erase("timings");
                jb.erase("timings");
                a = ja.dump();
                b = jb.dump();
            }
            out.expect(a == b, std::string(file) + ": " + name.string() + " differs");
        }
    }
    return out;
}

struct Criterion {
    int id;
    const char* title;
    double limit_seconds;
    Outcome (*run)();
};

} // namespace

int main()
{
    const Criterion criteria[] = {
        {1, "Moment identity", 10, moment_identity},
        {2, "Moment recursion", 30, moment_recursion},
        {3, "Sublinear-expectation laws", 60, sublinear_laws},
        {4, "Ito isometry", 60, ito_isometry},
        {5, "BDG", 60, bdg},
        {6, "Sigma_I of a nonrandom integral", 120, sigma_integral_theorem},
        {7, "G-heat representation", 120, gheat_representation},
        {8, "Full OU/G-PDE representation", 300, full_representation},
        {9, "Scheme monotonicity", 60, scheme_monotonicity},
        {10, "Fubini and flow", 30, fubini_and_flow},
        {11, "Determinism", 10, determinism},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome r;
        try {
            r = c.run();
        } catch (const std::exception& e) {
            r.ok = false;
            r.note = std::string("exception: ") + e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (r.ok && secs > c.limit_seconds) {
            r.ok = false;
            r.note = "over the runtime limit";
        }
        failed += r.ok ? 0 : 1;
        std::printf("%s  [%2d] %-34s %7.2f s (limit %3.0f s)%s%s\n", r.ok ? "PASS" : "FAIL", c.id, c.title, secs,
                    c.limit_seconds, r.note.empty() ? "" : "  ", r.note.c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(std::size(criteria)) - failed, std::size(criteria));
    return failed == 0 ? 0 : 1;
}
