#pragma once

// Explicit monotone finite differences for
//   u_t + <Ax, D u> + G(D^2 u) = 0,  u(T, .) = f
// on a box in 1-3 dimensions (A = 0 is the G-heat equation), the OU mild
// solution X_tau = e^{(tau-t)A} x + int_t^tau e^{(tau-s)A} dB_s, and the Monte
// Carlo side of the representation u(t, x) = E[f(X_T^{t,x})].
//
// Stencils: D_ii by the usual three-point difference; D_ij (i != j) by the
// seven-point difference whose off-centre weights are nonnegative for the
// sign of q_ij, so every extreme contributes a monotone linear stencil when
// q_ii / h_i^2 >= sum_{j != i} |q_ij| / (h_i h_j).  Transport is centred where
// the diffusion of every extreme dominates it and upwind elsewhere.  On a
// face of the box, second differences across that face are dropped (linear
// extrapolation) and transport uses the inward one-sided difference.

#include "gexpect/control_sim.hpp"
#include "gexpect/covariance_set.hpp"
#include "gexpect/operator_core.hpp"
#include "gexpect/parallel.hpp"
#include "gexpect/stoch_integral.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

namespace gexpect {

class cfl_error : public std::domain_error {
public:
    cfl_error(const std::string& what, double required_dt) : std::domain_error(what), required_dt_(required_dt) {}

    double required_dt() const { return required_dt_; }

private:
    double required_dt_;
};

struct PdeProblem {
    CovarianceSet sigma;
    Vector a_diag;                                // diagonal of A; empty means A = 0
    std::function<double(const Vector&)> terminal;
    double T = 1.0;
    Vector lo;
    Vector hi;
    std::string bc = "linear_extrapolation";

    std::size_t dim() const { return sigma.dim(); }
    bool has_drift() const { return a_diag.size() > 0 && !a_diag.isZero(0.0); }

    void validate() const
    {
        const std::size_t n = dim();
        if (n < 1 || n > 3) {
            throw dimension_error("PdeProblem: dimension must be 1, 2 or 3");
        }
        detail::require_dims(n, static_cast<std::size_t>(lo.size()), "PdeProblem box");
        detail::require_dims(n, static_cast<std::size_t>(hi.size()), "PdeProblem box");
        if (a_diag.size() > 0) {
            detail::require_dims(n, static_cast<std::size_t>(a_diag.size()), "PdeProblem generator");
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (!(hi(static_cast<Eigen::Index>(i)) > lo(static_cast<Eigen::Index>(i)))) {
                throw std::invalid_argument("PdeProblem: empty box");
            }
        }
        if (!(T > 0.0)) {
            throw std::domain_error("PdeProblem: T must be > 0");
        }
        if (!terminal) {
            throw std::invalid_argument("PdeProblem: missing terminal function");
        }
        if (bc != "linear_extrapolation") {
            throw std::invalid_argument("PdeProblem: unknown boundary treatment '" + bc + "'");
        }
    }
};

struct MeshSpec {
    std::vector<std::size_t> nodes; // per axis, >= 3
    double dt = 0.0;                // 0: largest stable step times 0.9
    std::size_t save_every = 0;     // extra slices every k steps; 0: none
};

class GridSolution {
public:
    std::vector<std::vector<double>> mesh;
    double dt = 0.0;
    std::size_t steps = 0;
    double cfl_ratio = 0.0;
    bool monotone = true;
    std::vector<double> times;               // ascending; times[0] = 0, times.back() = T
    std::vector<std::vector<double>> slices; // one flat array per saved time

    std::size_t dim() const { return mesh.size(); }
    std::size_t size() const
    {
        std::size_t n = 1;
        for (const auto& m : mesh) {
            n *= m.size();
        }
        return n;
    }
    std::size_t stride(std::size_t axis) const
    {
        std::size_t s = 1;
        for (std::size_t i = 0; i < axis; ++i) {
            s *= mesh[i].size();
        }
        return s;
    }
    std::vector<std::size_t> multi_index(std::size_t flat) const
    {
        std::vector<std::size_t> out(dim());
        for (std::size_t i = 0; i < dim(); ++i) {
            out[i] = flat % mesh[i].size();
            flat /= mesh[i].size();
        }
        return out;
    }
    Vector node(std::size_t flat) const
    {
        const auto idx = multi_index(flat);
        Vector x(static_cast<Eigen::Index>(dim()));
        for (std::size_t i = 0; i < dim(); ++i) {
            x(static_cast<Eigen::Index>(i)) = mesh[i][idx[i]];
        }
        return x;
    }

    std::size_t slice_index(double t) const
    {
        for (std::size_t k = 0; k < times.size(); ++k) {
            if (std::abs(times[k] - t) <= 1e-9 * std::max(1.0, times.back())) {
                return k;
            }
        }
        throw std::invalid_argument("GridSolution: no saved slice at t = " + std::to_string(t));
    }

    /// Multilinear interpolation of slice k at x (clamped to the box).
    double value_at(std::size_t k, const Vector& x) const
    {
        detail::require_dims(dim(), static_cast<std::size_t>(x.size()), "GridSolution::value_at");
        const auto& u = slices.at(k);
        std::vector<std::size_t> base(dim());
        std::vector<double> w(dim());
        for (std::size_t i = 0; i < dim(); ++i) {
            const auto& m = mesh[i];
            const double h = m[1] - m[0];
            const double xi = std::clamp(x(static_cast<Eigen::Index>(i)), m.front(), m.back());
            auto j = static_cast<std::size_t>(std::floor((xi - m.front()) / h));
            j = std::min(j, m.size() - 2);
            base[i] = j;
            w[i] = (xi - m[j]) / h;
        }
        double acc = 0.0;
        for (std::size_t corner = 0; corner < (std::size_t{1} << dim()); ++corner) {
            double weight = 1.0;
            std::size_t flat = 0;
            for (std::size_t i = 0; i < dim(); ++i) {
                const bool up = (corner >> i) & 1u;
                weight *= up ? w[i] : 1.0 - w[i];
                flat += (base[i] + (up ? 1 : 0)) * stride(i);
            }
            if (weight != 0.0) {
                acc += weight * u[flat];
            }
        }
        return acc;
    }
};

namespace detail {

struct Stencil {
    std::size_t n = 0;
    std::vector<std::size_t> size;
    std::vector<std::size_t> stride;
    std::vector<double> h;
};

inline Stencil make_stencil(const GridSolution& g)
{
    Stencil s;
    s.n = g.dim();
    for (std::size_t i = 0; i < s.n; ++i) {
        s.size.push_back(g.mesh[i].size());
        s.stride.push_back(g.stride(i));
        s.h.push_back(g.mesh[i][1] - g.mesh[i][0]);
    }
    return s;
}

/// Generator terms at one node: b . Du + G(D^2 u) with the monotone stencils
/// (or plain centred differences when `plain_centred`, for residuals).
struct NodeOperator {
    const Stencil& st;
    const std::vector<Matrix>& qs;
    const Vector& a_diag;
    const std::vector<double>& transport_limit; // per axis: centre when |b_i| h_i <= limit
    bool plain_centred = false;

    double operator()(const std::vector<double>& u, std::size_t flat, const std::vector<std::size_t>& idx,
                      const Vector& x) const
    {
        const std::size_t n = st.n;
        double d[3][3] = {};
        double dplus[3][3] = {};
        double dminus[3][3] = {};
        bool interior[3] = {};
        for (std::size_t i = 0; i < n; ++i) {
            interior[i] = idx[i] > 0 && idx[i] + 1 < st.size[i];
        }
        const double c = u[flat];
        for (std::size_t i = 0; i < n; ++i) {
            if (!interior[i]) {
                continue;
            }
            const std::size_t si = st.stride[i];
            d[i][i] = (u[flat + si] - 2.0 * c + u[flat - si]) / (st.h[i] * st.h[i]);
            for (std::size_t j = i + 1; j < n; ++j) {
                if (!interior[j]) {
                    continue;
                }
                const std::size_t sj = st.stride[j];
                const double hij = st.h[i] * st.h[j];
                const double pi = u[flat + si], mi = u[flat - si], pj = u[flat + sj], mj = u[flat - sj];
                const double pp = u[flat + si + sj], mm = u[flat - si - sj];
                const double pm = u[flat + si - sj], mp = u[flat - si + sj];
                if (plain_centred) {
                    dplus[i][j] = dminus[i][j] = (pp - pm - mp + mm) / (4.0 * hij);
                } else {
                    dplus[i][j] = (pp - pi - pj + 2.0 * c - mi - mj + mm) / (2.0 * hij);
                    dminus[i][j] = -(pm - pi - mj + 2.0 * c - mi - pj + mp) / (2.0 * hij);
                }
            }
        }
        double g = -std::numeric_limits<double>::infinity();
        for (const auto& q : qs) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                acc += 0.5 * q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) * d[i][i];
                for (std::size_t j = i + 1; j < n; ++j) {
                    const double qij = q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
                    acc += qij * (qij >= 0.0 ? dplus[i][j] : dminus[i][j]);
                }
            }
            g = std::max(g, acc);
        }
        double transport = 0.0;
        if (a_diag.size() > 0) {
            for (std::size_t i = 0; i < n; ++i) {
                const double b = a_diag(static_cast<Eigen::Index>(i)) * x(static_cast<Eigen::Index>(i));
                if (b == 0.0) {
                    continue;
                }
                const std::size_t si = st.stride[i];
                const bool has_up = idx[i] + 1 < st.size[i];
                const bool has_down = idx[i] > 0;
                if (has_up && has_down && (plain_centred || std::abs(b) * st.h[i] <= transport_limit[i])) {
                    transport += b * (u[flat + si] - u[flat - si]) / (2.0 * st.h[i]);
                } else if (b > 0.0 && has_up) {
                    transport += b * (u[flat + si] - c) / st.h[i];
                } else if (b < 0.0 && has_down) {
                    transport += b * (c - u[flat - si]) / st.h[i];
                }
            }
        }
        return transport + g;
    }
};

inline std::vector<Matrix> extreme_matrices(const CovarianceSet& sigma)
{
    std::vector<Matrix> out;
    for (const auto& q : sigma.extremes()) {
        out.push_back(q.matrix());
    }
    return out;
}

/// min over extremes and axes-wise of q_ii - sum_{j != i} |q_ij| h_i / h_j.
inline std::vector<double> diffusion_margin(const std::vector<Matrix>& qs, const std::vector<double>& h)
{
    const std::size_t n = h.size();
    std::vector<double> out(n, std::numeric_limits<double>::infinity());
    for (const auto& q : qs) {
        for (std::size_t i = 0; i < n; ++i) {
            double m = q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i));
            for (std::size_t j = 0; j < n; ++j) {
                if (j != i) {
                    m -= std::abs(q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) * h[i] / h[j];
                }
            }
            out[i] = std::min(out[i], m);
        }
    }
    return out;
}

inline GridSolution solve_explicit(const PdeProblem& problem, const MeshSpec& mesh)
{
    problem.validate();
    const std::size_t n = problem.dim();
    if (mesh.nodes.size() != n) {
        throw dimension_error("MeshSpec: need a node count per axis");
    }
    GridSolution sol;
    for (std::size_t i = 0; i < n; ++i) {
        if (mesh.nodes[i] < 3) {
            throw std::invalid_argument("MeshSpec: need at least 3 nodes per axis");
        }
        const double lo = problem.lo(static_cast<Eigen::Index>(i));
        const double hi = problem.hi(static_cast<Eigen::Index>(i));
        std::vector<double> m(mesh.nodes[i]);
        for (std::size_t k = 0; k < m.size(); ++k) {
            m[k] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(m.size() - 1);
        }
        m.back() = hi;
        sol.mesh.push_back(std::move(m));
    }
    const Stencil st = make_stencil(sol);
    const auto qs = extreme_matrices(problem.sigma);
    const double h_min = *std::min_element(st.h.begin(), st.h.end());
    const double lambda = problem.sigma.max_spectral_radius();
    double adv = 0.0;
    if (problem.has_drift()) {
        for (std::size_t i = 0; i < n; ++i) {
            const auto ii = static_cast<Eigen::Index>(i);
            const double bmax = std::abs(problem.a_diag(ii)) * std::max(std::abs(problem.lo(ii)), std::abs(problem.hi(ii)));
            adv += bmax / st.h[i];
        }
    }
    const double rate = 2.0 * static_cast<double>(n) * lambda / (h_min * h_min) + adv;
    const double dt_max = rate > 0.0 ? 1.0 / rate : problem.T;
    double dt = mesh.dt;
    if (dt > 0.0) {
        if (dt > dt_max) {
            throw cfl_error("solve: dt = " + std::to_string(dt) + " exceeds the stable step " + std::to_string(dt_max),
                            dt_max);
        }
    } else {
        dt = 0.9 * dt_max;
    }
    sol.steps = static_cast<std::size_t>(std::ceil(problem.T / dt - 1e-12));
    sol.steps = std::max<std::size_t>(sol.steps, 1);
    sol.dt = problem.T / static_cast<double>(sol.steps);
    sol.cfl_ratio = sol.dt / dt_max;

    const auto margin = diffusion_margin(qs, st.h);
    std::vector<double> limit(n);
    for (std::size_t i = 0; i < n; ++i) {
        limit[i] = std::max(0.0, margin[i]);
        if (margin[i] < -1e-14) {
            sol.monotone = false;
        }
    }
    const Vector a = problem.has_drift() ? problem.a_diag : Vector();
    const NodeOperator op{st, qs, a, limit, false};

    const std::size_t total = sol.size();
    std::vector<double> u(total), next(total);
    std::vector<Vector> nodes(total);
    for (std::size_t f = 0; f < total; ++f) {
        nodes[f] = sol.node(f);
        u[f] = problem.terminal(nodes[f]);
    }
    std::vector<std::vector<std::size_t>> idx(total);
    for (std::size_t f = 0; f < total; ++f) {
        idx[f] = sol.multi_index(f);
    }

    // slices are collected backward in time and reversed at the end
    std::vector<double> times{problem.T};
    std::vector<std::vector<double>> saved{u};
    const std::size_t chunk = 4096;
    const std::size_t chunks = (total + chunk - 1) / chunk;
    for (std::size_t s = 1; s <= sol.steps; ++s) {
        parallel_for(chunks, [&](std::size_t c) {
            const std::size_t last = std::min(total, (c + 1) * chunk);
            for (std::size_t f = c * chunk; f < last; ++f) {
                next[f] = u[f] + sol.dt * op(u, f, idx[f], nodes[f]);
            }
        });
        std::swap(u, next);
        const double t = problem.T - sol.dt * static_cast<double>(s);
        const bool keep = s == sol.steps || s + 1 == sol.steps || (mesh.save_every && s % mesh.save_every == 0);
        if (keep) {
            times.push_back(s == sol.steps ? 0.0 : t);
            saved.push_back(u);
        }
    }
    std::reverse(times.begin(), times.end());
    std::reverse(saved.begin(), saved.end());
    sol.times = std::move(times);
    sol.slices = std::move(saved);
    return sol;
}

} // namespace detail

/// (P0): u_t + G(D^2 u) = 0.
inline GridSolution solve_gheat(const PdeProblem& problem, const MeshSpec& mesh)
{
    if (problem.has_drift()) {
        throw std::invalid_argument("solve_gheat: generator must be zero");
    }
    return detail::solve_explicit(problem, mesh);
}

/// (P) with diagonal A <= 0.
inline GridSolution solve_gpde(const PdeProblem& problem, const MeshSpec& mesh)
{
    if (problem.a_diag.size() > 0 && problem.a_diag.maxCoeff() > 0.0) {
        throw std::domain_error("solve_gpde: generator must have nonpositive spectrum");
    }
    return detail::solve_explicit(problem, mesh);
}

/// Diagonal of a diagonal generator, or throws.
inline Vector diagonal_generator(const SymOperator& a)
{
    if (!a.is_diagonal()) {
        throw std::invalid_argument("generator must be diagonal");
    }
    return a.matrix().diagonal();
}

/// max |u_t + <Ax, Du> + G(D^2 u)| over interior nodes away from kinks, using
/// the t = 0 and t = dt slices: u_t by their difference, spatial terms by
/// centred differences of their average.  A node is a kink when some |second
/// difference| exceeds 10x the median over interior nodes; it and its
/// neighbours are skipped.
inline double residual_check(const GridSolution& sol, const PdeProblem& problem)
{
    const std::size_t n = sol.dim();
    for (std::size_t i = 0; i < n; ++i) {
        if (sol.mesh[i].size() < 3) {
            throw std::invalid_argument("residual_check: need >= 3 nodes per axis");
        }
    }
    const std::size_t k1 = sol.slice_index(sol.dt);
    const auto& u0 = sol.slices.at(0);
    const auto& u1 = sol.slices.at(k1);
    std::vector<double> avg(u0.size());
    for (std::size_t f = 0; f < avg.size(); ++f) {
        avg[f] = 0.5 * (u0[f] + u1[f]);
    }
    const auto st = detail::make_stencil(sol);
    const auto qs = detail::extreme_matrices(problem.sigma);
    const std::vector<double> limit(n, 0.0);
    const Vector a = problem.has_drift() ? problem.a_diag : Vector();
    const detail::NodeOperator op{st, qs, a, limit, true};

    const std::size_t total = sol.size();
    std::vector<char> interior(total, 0);
    std::vector<double> curvature(total, 0.0);
    std::vector<double> sample;
    for (std::size_t f = 0; f < total; ++f) {
        const auto idx = sol.multi_index(f);
        bool in = true;
        for (std::size_t i = 0; i < n; ++i) {
            in = in && idx[i] > 0 && idx[i] + 1 < st.size[i];
        }
        if (!in) {
            continue;
        }
        interior[f] = 1;
        double c = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t s = st.stride[i];
            c = std::max(c, std::abs(avg[f + s] - 2.0 * avg[f] + avg[f - s]) / (st.h[i] * st.h[i]));
        }
        curvature[f] = c;
        sample.push_back(c);
    }
    if (sample.empty()) {
        return 0.0;
    }
    std::nth_element(sample.begin(), sample.begin() + static_cast<std::ptrdiff_t>(sample.size() / 2), sample.end());
    const double threshold = std::max(10.0 * sample[sample.size() / 2], 1e-6);
    std::vector<char> skip(total, 0);
    for (std::size_t f = 0; f < total; ++f) {
        if (interior[f] && curvature[f] > threshold) {
            skip[f] = 1;
            for (std::size_t i = 0; i < n; ++i) {
                skip[f + st.stride[i]] = 1;
                skip[f - st.stride[i]] = 1;
            }
        }
    }
    double worst = 0.0;
    for (std::size_t f = 0; f < total; ++f) {
        if (!interior[f] || skip[f]) {
            continue;
        }
        const double ut = (u1[f] - u0[f]) / sol.dt;
        worst = std::max(worst, std::abs(ut + op(avg, f, sol.multi_index(f), sol.node(f))));
    }
    return worst;
}

/// Paths of X_tau^{t0,x0}: X_{k+1} = e^{dt A}(X_k + dB_k) on a uniform grid of
/// [t0, T]; equivalently e^{(tau - t0)A} x0 plus convolution_path of B.
inline PathBundle ou_mild_path(const SymOperator& a, const CovarianceSet& sigma, const ControlPolicy& policy,
                               const HVector& x0, double t0, double T, std::size_t steps, std::size_t n_paths,
                               std::uint64_t seed)
{
    detail::require_dims(a.dim(), sigma.dim(), "ou_mild_path");
    detail::require_dims(x0.dim(), sigma.dim(), "ou_mild_path");
    if (!(T > t0)) {
        throw std::domain_error("ou_mild_path: need T > t0");
    }
    const auto b = simulate_gbm(sigma, policy, n_paths, steps, T - t0, seed);
    const auto conv = convolution_path(a, b, 1);
    std::vector<double> times(conv.times().size());
    for (std::size_t k = 0; k < times.size(); ++k) {
        times[k] = t0 + conv.times()[k];
    }
    times.back() = T;
    PathBundle out(std::move(times), n_paths, sigma.dim(), seed, policy.label(), sigma.label());
    const double dt = (T - t0) / static_cast<double>(steps);
    const Matrix flow = mat_exp(a, dt).matrix();
    std::vector<Vector> det(steps + 1);
    det[0] = x0.coords();
    for (std::size_t k = 0; k < steps; ++k) {
        det[k + 1] = flow * det[k];
    }
    for (std::size_t p = 0; p < n_paths; ++p) {
        for (std::size_t k = 0; k <= steps; ++k) {
            out.state(p, k) = det[k] + conv.state(p, k);
            if (k > 0) {
                out.increment(p, k - 1) = b.increment(p, k - 1);
            }
        }
    }
    return out;
}

/// Continue paths from their states at grid index `from` to the end, driven
/// by the stored increments: X_{k+1} = e^{dt A}(X_k + dB_k).
inline PathBundle ou_restart(const SymOperator& a, const PathBundle& paths, std::size_t from)
{
    if (from >= paths.times().size()) {
        throw std::out_of_range("ou_restart: index past the grid");
    }
    std::vector<double> times(paths.times().begin() + static_cast<std::ptrdiff_t>(from), paths.times().end());
    const std::size_t steps = times.size() - 1;
    PathBundle out(std::move(times), paths.n_paths(), paths.dim(), paths.seed(), paths.policy_label(),
                   paths.sigma_label());
    const double dt = paths.times()[1] - paths.times()[0];
    const Matrix flow = mat_exp(a, dt).matrix();
    for (std::size_t p = 0; p < paths.n_paths(); ++p) {
        Vector x = paths.state(p, from);
        out.state(p, 0) = x;
        for (std::size_t k = 0; k < steps; ++k) {
            out.increment(p, k) = paths.increment(p, from + k);
            const Vector moved = x + out.increment(p, k);
            x.noalias() = flow * moved;
            out.state(p, k + 1) = x;
        }
    }
    return out;
}

struct McControl {
    std::size_t steps = 50;
    std::size_t n_paths = 10000;
    std::uint64_t seed = 0;
    PolicyFamily family;
};

/// sup over the family of E[f(X_T^{t0,x0})] by common random numbers.
inline UpperEstimate mc_value(const PdeProblem& problem, const HVector& x0, double t0, const McControl& control)
{
    problem.validate();
    if (!(problem.T > t0)) {
        throw std::domain_error("mc_value: need T > t0");
    }
    SimulationSpec spec(problem.T - t0, control.steps, control.n_paths, control.seed, t0);
    if (problem.has_drift()) {
        spec.step_flow = mat_exp(SymOperator::diagonal(problem.a_diag), spec.dt()).matrix();
    }
    return estimate_upper_expectation(problem.sigma, problem.terminal, x0, spec, control.family);
}

/// One CSV per slice: columns x0..x{n-1},u.
inline void write_slice_csv(std::ostream& os, const GridSolution& sol, std::size_t k)
{
    const auto& u = sol.slices.at(k);
    for (std::size_t i = 0; i < sol.dim(); ++i) {
        os << 'x' << i << ',';
    }
    os << "u\n";
    os.precision(17);
    for (std::size_t f = 0; f < u.size(); ++f) {
        const Vector x = sol.node(f);
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            os << x(i) << ',';
        }
        os << u[f] << '\n';
    }
}

} // namespace gexpect
