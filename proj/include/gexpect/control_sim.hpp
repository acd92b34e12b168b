#pragma once

// G-Brownian motion as a controlled Gaussian process.  Under a policy theta
// with values in the factor set {gamma : gamma gamma^T an extreme of Sigma},
// each increment over [t_k, t_k+1] is gamma_{theta_k} Z_k sqrt(dt).  The
// upper expectation is the sup over an enumerated policy family, estimated
// with common random numbers: path i sees the same Z draws under every policy.

#include "gexpect/covariance_set.hpp"
#include "gexpect/estimate.hpp"
#include "gexpect/g_normal.hpp"
#include "gexpect/parallel.hpp"
#include "gexpect/random.hpp"

#include "json.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

namespace gexpect {

/// Square-root factors of the extremes of Sigma (gamma_i = Q_i^{1/2}).
class FactorSet {
public:
    explicit FactorSet(const CovarianceSet& sigma) : label_(sigma.label())
    {
        for (const auto& q : sigma.extremes()) {
            gammas_.push_back(psd_sqrt(q).matrix());
        }
    }

    std::size_t size() const { return gammas_.size(); }
    std::size_t dim() const { return static_cast<std::size_t>(gammas_.front().rows()); }
    const Matrix& gamma(std::size_t i) const { return gammas_.at(i); }
    const std::vector<Matrix>& gammas() const { return gammas_; }
    const std::string& label() const { return label_; }

private:
    std::vector<Matrix> gammas_;
    std::string label_;
};

/// Adapted selection of a factor index.  A feedback rule sees only the step
/// index, the current time and the current state; the simulator calls it
/// before drawing the step's increment.  Rules may be called concurrently
/// from several workers and must be reentrant.
class ControlPolicy {
public:
    enum class Kind { constant, time_table, feedback };
    using FeedbackRule = std::function<std::size_t(std::size_t step, double t, const Vector& state)>;

    static ControlPolicy constant(std::size_t index)
    {
        return ControlPolicy(Kind::constant, index, {}, {}, "constant(" + std::to_string(index) + ")");
    }

    /// table[k] is used on step k; the last entry extends to later steps.
    static ControlPolicy time_table(std::vector<std::size_t> table, std::string label = {})
    {
        if (table.empty()) {
            throw std::invalid_argument("ControlPolicy::time_table: empty table");
        }
        if (label.empty()) {
            label = "table";
        }
        return ControlPolicy(Kind::time_table, 0, std::move(table), {}, std::move(label));
    }

    static ControlPolicy feedback(FeedbackRule rule, std::string label = "feedback")
    {
        return ControlPolicy(Kind::feedback, 0, {}, std::move(rule), std::move(label));
    }

    std::size_t select(std::size_t step, double t, const Vector& state) const
    {
        switch (kind_) {
        case Kind::constant:
            return index_;
        case Kind::time_table:
            return table_[std::min(step, table_.size() - 1)];
        case Kind::feedback:
            return rule_(step, t, state);
        }
        return index_;
    }

    Kind kind() const { return kind_; }
    const std::string& label() const { return label_; }

private:
    ControlPolicy(Kind kind, std::size_t index, std::vector<std::size_t> table, FeedbackRule rule, std::string label)
        : kind_(kind), index_(index), table_(std::move(table)), rule_(std::move(rule)), label_(std::move(label))
    {
    }

    Kind kind_;
    std::size_t index_;
    std::vector<std::size_t> table_;
    FeedbackRule rule_;
    std::string label_;
};

/// Scalar statistic of (t, state) whose sign drives a bang-bang policy.
using StateStatistic = std::function<double(double t, const Vector& state)>;

/// Enumerated subset of the adapted controls: every constant policy, every
/// bang-bang feedback pair (i if statistic >= 0 else j), every single-switch
/// time table (i before step s, j from step s on, s a multiple of
/// switch_stride), plus caller-supplied extras.
struct PolicyFamily {
    bool constants = true;
    StateStatistic bang_bang;
    std::size_t switch_stride = 0;
    std::vector<ControlPolicy> extra;

    std::vector<ControlPolicy> enumerate(std::size_t n_factors, std::size_t steps) const
    {
        std::vector<ControlPolicy> out;
        if (constants) {
            for (std::size_t i = 0; i < n_factors; ++i) {
                out.push_back(ControlPolicy::constant(i));
            }
        }
        if (bang_bang) {
            for (std::size_t i = 0; i < n_factors; ++i) {
                for (std::size_t j = 0; j < n_factors; ++j) {
                    if (i == j) {
                        continue;
                    }
                    auto stat = bang_bang;
                    out.push_back(ControlPolicy::feedback(
                        [stat, i, j](std::size_t, double t, const Vector& x) { return stat(t, x) >= 0.0 ? i : j; },
                        "bang_bang(" + std::to_string(i) + "," + std::to_string(j) + ")"));
                }
            }
        }
        if (switch_stride > 0) {
            for (std::size_t s = switch_stride; s < steps; s += switch_stride) {
                for (std::size_t i = 0; i < n_factors; ++i) {
                    for (std::size_t j = 0; j < n_factors; ++j) {
                        if (i == j) {
                            continue;
                        }
                        std::vector<std::size_t> table(steps, j);
                        std::fill(table.begin(), table.begin() + static_cast<std::ptrdiff_t>(s), i);
                        out.push_back(ControlPolicy::time_table(
                            std::move(table),
                            "switch(" + std::to_string(i) + "->" + std::to_string(j) + "@" + std::to_string(s) + ")"));
                    }
                }
            }
        }
        out.insert(out.end(), extra.begin(), extra.end());
        if (out.empty()) {
            throw std::invalid_argument("PolicyFamily: enumerates no policies");
        }
        return out;
    }
};

/// Uniform time grid and sampling parameters.  With a non-empty step_flow E
/// the state follows X_{k+1} = E (X_k + dB_k) instead of X_k + dB_k (the
/// left-point mild scheme for dX = AX dt + dB with E = e^{A dt}).
struct SimulationSpec {
    SimulationSpec() = default;
    SimulationSpec(double T_, std::size_t steps_, std::size_t n_paths_, std::uint64_t seed_, double t0_ = 0.0,
                   Matrix step_flow_ = {})
        : T(T_), steps(steps_), n_paths(n_paths_), seed(seed_), t0(t0_), step_flow(std::move(step_flow_))
    {
    }

    double T = 1.0;
    std::size_t steps = 1;
    std::size_t n_paths = 1;
    std::uint64_t seed = 0;
    double t0 = 0.0;
    Matrix step_flow;

    double dt() const { return T / static_cast<double>(steps); }
    double time(std::size_t k) const { return t0 + dt() * static_cast<double>(k); }

    void validate() const
    {
        if (!(T > 0.0)) {
            throw std::domain_error("simulation: T must be > 0");
        }
        if (steps < 1 || n_paths < 1) {
            throw std::invalid_argument("simulation: steps and n_paths must be >= 1");
        }
    }
};

/// Simulated paths: n_paths x (steps + 1) states and n_paths x steps increments.
class PathBundle {
public:
    PathBundle(std::vector<double> times, std::size_t n_paths, std::size_t dim, std::uint64_t seed,
               std::string policy_label, std::string sigma_label)
        : times_(std::move(times)), n_paths_(n_paths), dim_(dim), seed_(seed), policy_label_(std::move(policy_label)),
          sigma_label_(std::move(sigma_label)), states_(n_paths * times_.size() * dim, 0.0),
          increments_(n_paths * (times_.size() - 1) * dim, 0.0)
    {
        for (std::size_t k = 1; k < times_.size(); ++k) {
            if (!(times_[k] > times_[k - 1])) {
                throw std::invalid_argument("PathBundle: times must be strictly increasing");
            }
        }
    }

    const std::vector<double>& times() const { return times_; }
    std::size_t steps() const { return times_.size() - 1; }
    std::size_t n_paths() const { return n_paths_; }
    std::size_t dim() const { return dim_; }
    std::uint64_t seed() const { return seed_; }
    const std::string& policy_label() const { return policy_label_; }
    const std::string& sigma_label() const { return sigma_label_; }

    Eigen::Map<Vector> state(std::size_t p, std::size_t k) { return {states_.data() + offset(p, k), ssize()}; }
    Eigen::Map<const Vector> state(std::size_t p, std::size_t k) const
    {
        return {states_.data() + offset(p, k), ssize()};
    }
    Eigen::Map<Vector> increment(std::size_t p, std::size_t k)
    {
        return {increments_.data() + (p * steps() + k) * dim_, ssize()};
    }
    Eigen::Map<const Vector> increment(std::size_t p, std::size_t k) const
    {
        return {increments_.data() + (p * steps() + k) * dim_, ssize()};
    }

    /// dim x n_paths matrix of states at grid index k.
    Matrix states_at(std::size_t k) const
    {
        Matrix out(ssize(), static_cast<Eigen::Index>(n_paths_));
        for (std::size_t p = 0; p < n_paths_; ++p) {
            out.col(static_cast<Eigen::Index>(p)) = state(p, k);
        }
        return out;
    }

    /// Grid index of time t (within 1e-9 relative), or throws.
    std::size_t index_of(double t) const
    {
        const double tol = 1e-9 * std::max(1.0, std::abs(times_.back()));
        for (std::size_t k = 0; k < times_.size(); ++k) {
            if (std::abs(times_[k] - t) <= tol) {
                return k;
            }
        }
        throw std::invalid_argument("PathBundle: time " + std::to_string(t) + " is not on the path grid");
    }

private:
    std::size_t offset(std::size_t p, std::size_t k) const { return (p * times_.size() + k) * dim_; }
    Eigen::Index ssize() const { return static_cast<Eigen::Index>(dim_); }

    std::vector<double> times_;
    std::size_t n_paths_;
    std::size_t dim_;
    std::uint64_t seed_;
    std::string policy_label_;
    std::string sigma_label_;
    std::vector<double> states_;
    std::vector<double> increments_;
};

namespace detail {

inline std::size_t checked_index(std::size_t i, std::size_t n)
{
    if (i >= n) {
        throw std::out_of_range("control policy selected factor " + std::to_string(i) + " of " + std::to_string(n));
    }
    return i;
}

inline std::vector<double> uniform_times(const SimulationSpec& spec)
{
    std::vector<double> times(spec.steps + 1);
    for (std::size_t k = 0; k <= spec.steps; ++k) {
        times[k] = spec.time(k);
    }
    times.back() = spec.t0 + spec.T;
    return times;
}

/// Drives every policy along the same noise.  visit(block, policy, path,
/// terminal_state) is called from the worker that owns the block.
template <class Visit>
void for_each_terminal(const FactorSet& factors, const std::vector<ControlPolicy>& policies, const Vector& x0,
                       const SimulationSpec& spec, Visit&& visit)
{
    spec.validate();
    detail::require_dims(factors.dim(), static_cast<std::size_t>(x0.size()), "simulation start state");
    const bool has_flow = spec.step_flow.size() > 0;
    const double sqrt_dt = std::sqrt(spec.dt());
    const auto dim = static_cast<Eigen::Index>(factors.dim());
    const std::size_t blocks = block_count(spec.n_paths);

    parallel_for(blocks, [&](std::size_t b) {
        NormalStream normal(sub_seed(spec.seed, b));
        const std::size_t first = b * kSampleBlock;
        const std::size_t last = std::min(spec.n_paths, first + kSampleBlock);
        Matrix states(dim, static_cast<Eigen::Index>(policies.size()));
        Vector z(dim);
        Vector x(dim);
        for (std::size_t p = first; p < last; ++p) {
            states.colwise() = x0;
            for (std::size_t k = 0; k < spec.steps; ++k) {
                normal.fill(z);
                const double t = spec.time(k);
                for (std::size_t j = 0; j < policies.size(); ++j) {
                    const auto col = static_cast<Eigen::Index>(j);
                    x = states.col(col);
                    const std::size_t idx = checked_index(policies[j].select(k, t, x), factors.size());
                    x.noalias() += sqrt_dt * (factors.gamma(idx) * z);
                    if (has_flow) {
                        states.col(col).noalias() = spec.step_flow * x;
                    } else {
                        states.col(col) = x;
                    }
                }
            }
            for (std::size_t j = 0; j < policies.size(); ++j) {
                visit(b, j, p, Vector(states.col(static_cast<Eigen::Index>(j))));
            }
        }
    });
}

} // namespace detail

/// Full path simulation of B (B_0 = 0) under one policy.
inline PathBundle simulate_gbm(const CovarianceSet& sigma, const ControlPolicy& policy, std::size_t n_paths,
                               std::size_t steps, double T, std::uint64_t seed)
{
    SimulationSpec spec{T, steps, n_paths, seed};
    spec.validate();
    const FactorSet factors(sigma);
    PathBundle out(detail::uniform_times(spec), n_paths, sigma.dim(), seed, policy.label(), sigma.label());
    const double sqrt_dt = std::sqrt(spec.dt());
    const auto dim = static_cast<Eigen::Index>(sigma.dim());

    parallel_for(block_count(n_paths), [&](std::size_t b) {
        NormalStream normal(sub_seed(seed, b));
        Vector z(dim);
        const std::size_t last = std::min(n_paths, (b + 1) * kSampleBlock);
        for (std::size_t p = b * kSampleBlock; p < last; ++p) {
            for (std::size_t k = 0; k < steps; ++k) {
                normal.fill(z);
                const Vector x = out.state(p, k);
                const std::size_t idx = detail::checked_index(policy.select(k, out.times()[k], x), factors.size());
                out.increment(p, k).noalias() = sqrt_dt * (factors.gamma(idx) * z);
                out.state(p, k + 1) = x + out.increment(p, k);
            }
        }
    });
    return out;
}

/// Terminal states, one dim x n_paths matrix per policy, common noise.
inline std::vector<Matrix> simulate_terminal(const CovarianceSet& sigma, const std::vector<ControlPolicy>& policies,
                                             const Vector& x0, const SimulationSpec& spec)
{
    const FactorSet factors(sigma);
    std::vector<Matrix> out(policies.size(), Matrix(static_cast<Eigen::Index>(sigma.dim()),
                                                    static_cast<Eigen::Index>(spec.n_paths)));
    detail::for_each_terminal(factors, policies, x0, spec, [&](std::size_t, std::size_t j, std::size_t p, const Vector& x) {
        out[j].col(static_cast<Eigen::Index>(p)) = x;
    });
    return out;
}

struct UpperEstimate {
    double value = 0.0;
    double std_error = 0.0;
    std::size_t argmax = 0;
    std::vector<ControlPolicy> policies;
    std::vector<McEstimate> per_policy;

    const ControlPolicy& best_policy() const { return policies.at(argmax); }
};

/// sup over the family of the common-random-number estimate of E_P[f(X_T)].
template <class F>
UpperEstimate estimate_upper_expectation(const CovarianceSet& sigma, F&& f, const HVector& x0,
                                         const SimulationSpec& spec, const PolicyFamily& family)
{
    UpperEstimate out;
    out.policies = family.enumerate(sigma.size(), spec.steps);
    const std::size_t n_pol = out.policies.size();
    const FactorSet factors(sigma);
    std::vector<std::vector<MomentAccumulator>> partial(block_count(spec.n_paths), std::vector<MomentAccumulator>(n_pol));
    detail::for_each_terminal(factors, out.policies, x0.coords(), spec,
                              [&](std::size_t b, std::size_t j, std::size_t, const Vector& x) {
                                  partial[b][j].add(static_cast<double>(f(x)));
                              });
    std::vector<MomentAccumulator> total(n_pol);
    for (const auto& block : partial) {
        for (std::size_t j = 0; j < n_pol; ++j) {
            total[j].merge(block[j]);
        }
    }
    for (std::size_t j = 0; j < n_pol; ++j) {
        out.per_policy.push_back({total[j].mean(), total[j].std_error(), total[j].n, j});
        if (j == 0 || total[j].mean() > out.value) {
            out.value = total[j].mean();
            out.argmax = j;
        }
    }
    out.std_error = out.per_policy[out.argmax].std_error;
    return out;
}

/// Exact-in-the-limit dynamic programming for the 1-d G-heat equation
/// u_t + 1/2 (a+ sigma_up^2 - a- sigma_down^2) = 0 with a = u_xx, u(T) = f, on
/// a trinomial lattice.  Node spacing dx = sqrt(3 sigma_up^2 dt); each step
/// takes the larger of the two three-point expectations with variance
/// sigma^2 dt (weights p, 1 - 2p, p with p = sigma^2 dt / (2 dx^2)).
template <class F>
double lattice_1d(const VolatilityBand& band, F&& f, double x0, double T, std::size_t steps)
{
    if (steps < 1) {
        throw std::invalid_argument("lattice_1d: steps must be >= 1");
    }
    if (!(band.sigma_down_sq >= 0.0) || !(band.sigma_up_sq >= band.sigma_down_sq)) {
        throw std::domain_error("lattice_1d: need sigma_up^2 >= sigma_down^2 >= 0");
    }
    if (!(T >= 0.0)) {
        throw std::domain_error("lattice_1d: T must be >= 0");
    }
    if (band.sigma_up_sq == 0.0 || T == 0.0) {
        return static_cast<double>(f(x0));
    }
    const double dt = T / static_cast<double>(steps);
    const double dx = std::sqrt(3.0 * band.sigma_up_sq * dt);
    const double p_up = band.sigma_up_sq * dt / (2.0 * dx * dx);
    const double p_down = band.sigma_down_sq * dt / (2.0 * dx * dx);

    const auto n = static_cast<std::ptrdiff_t>(steps);
    std::vector<double> v(static_cast<std::size_t>(2 * n + 1));
    for (std::ptrdiff_t j = -n; j <= n; ++j) {
        v[static_cast<std::size_t>(j + n)] = static_cast<double>(f(x0 + static_cast<double>(j) * dx));
    }
    std::vector<double> next(v.size());
    for (std::ptrdiff_t level = n - 1; level >= 0; --level) {
        for (std::ptrdiff_t j = -level; j <= level; ++j) {
            const auto c = static_cast<std::size_t>(j + n);
            const double second = v[c + 1] - 2.0 * v[c] + v[c - 1];
            // 3-point expectation = v + p * second; take the better variance
            next[c] = v[c] + std::max(p_up * second, p_down * second);
        }
        std::swap(v, next);
    }
    return v[static_cast<std::size_t>(n)];
}

/// Horizon, start, family and sampling for one factor of a nested evaluation.
struct NestedSpec {
    HVector x0;
    SimulationSpec sim;
    PolicyFamily family;
};

/// E[f2(X, Y)] evaluated as E[ E[f2(x, Y)]_{x = X} ]: Y is independent from
/// X, not the other way round.  The inner value is the sup over the inner
/// family at every outer sample; the outer value the sup over the outer family.
template <class F2>
McEstimate nested_expectation(const CovarianceSet& sigma, F2&& f2, const NestedSpec& inner, const NestedSpec& outer)
{
    const auto inner_pol = inner.family.enumerate(sigma.size(), inner.sim.steps);
    const auto outer_pol = outer.family.enumerate(sigma.size(), outer.sim.steps);
    const auto ys = simulate_terminal(sigma, inner_pol, inner.x0.coords(), inner.sim);
    const auto xs = simulate_terminal(sigma, outer_pol, outer.x0.coords(), outer.sim);

    std::vector<std::vector<Vector>> y_cols(ys.size());
    for (std::size_t i = 0; i < ys.size(); ++i) {
        for (Eigen::Index j = 0; j < ys[i].cols(); ++j) {
            y_cols[i].emplace_back(ys[i].col(j));
        }
    }

    auto inner_value = [&](const Vector& x) {
        double best = -std::numeric_limits<double>::infinity();
        for (const auto& y : y_cols) {
            MomentAccumulator acc;
            for (const auto& yj : y) {
                acc.add(static_cast<double>(f2(x, yj)));
            }
            best = std::max(best, acc.mean());
        }
        return best;
    };

    McEstimate out;
    out.n_samples = outer.sim.n_paths;
    for (std::size_t j = 0; j < xs.size(); ++j) {
        std::vector<double> phi(static_cast<std::size_t>(xs[j].cols()));
        parallel_for(phi.size(), [&](std::size_t i) { phi[i] = inner_value(Vector(xs[j].col(static_cast<Eigen::Index>(i)))); });
        MomentAccumulator acc;
        for (double v : phi) {
            acc.add(v);
        }
        if (j == 0 || acc.mean() > out.value) {
            out.value = acc.mean();
            out.std_error = acc.std_error();
            out.argmax = j;
        }
    }
    return out;
}

/// CSV: header "path,coord,<t_0>,...,<t_K>", one row per path per coordinate.
inline void write_paths_csv(std::ostream& os, const PathBundle& bundle)
{
    os.precision(17);
    os << "path,coord";
    for (double t : bundle.times()) {
        os << ',' << t;
    }
    os << '\n';
    for (std::size_t p = 0; p < bundle.n_paths(); ++p) {
        for (std::size_t c = 0; c < bundle.dim(); ++c) {
            os << p << ',' << c;
            for (std::size_t k = 0; k <= bundle.steps(); ++k) {
                os << ',' << bundle.state(p, k)(static_cast<Eigen::Index>(c));
            }
            os << '\n';
        }
    }
}

/// Metadata sidecar for write_paths_csv.
inline nlohmann::json paths_sidecar(const PathBundle& bundle)
{
    return {{"seed", bundle.seed()},
            {"policy", bundle.policy_label()},
            {"sigma_label", bundle.sigma_label()},
            {"n_paths", bundle.n_paths()},
            {"steps", bundle.steps()},
            {"dim", bundle.dim()},
            {"t_start", bundle.times().front()},
            {"t_end", bundle.times().back()}};
}

} // namespace gexpect
