#pragma once

// Stochastic integrals of elementary integrands against simulated G-Brownian
// paths, the isometry / BDG / Fubini checks, the covariance set of integrals
// with nonrandom integrands, and the OU stochastic convolution.

#include "gexpect/control_sim.hpp"
#include "gexpect/covariance_set.hpp"
#include "gexpect/estimate.hpp"
#include "gexpect/operator_core.hpp"
#include "gexpect/parallel.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace gexpect {

/// Phi(t) = sum_k Phi_k 1_{[t_k, t_{k+1})}(t).  Blocks are either fixed
/// matrices or an adapted rule called with (k, t_k, B_{t_k}) of one path;
/// the rule never sees a later state.
class ElementaryProcess {
public:
    using AdaptedRule = std::function<Matrix(std::size_t k, double t, const Vector& state)>;

    static ElementaryProcess deterministic(std::vector<double> partition, std::vector<Matrix> blocks)
    {
        if (blocks.size() + 1 != partition.size()) {
            throw std::invalid_argument("ElementaryProcess: need one block per partition interval");
        }
        for (const auto& b : blocks) {
            if (b.rows() != blocks.front().rows() || b.cols() != blocks.front().cols()) {
                throw dimension_error("ElementaryProcess: blocks differ in shape");
            }
        }
        const auto rows = static_cast<std::size_t>(blocks.front().rows());
        const auto cols = static_cast<std::size_t>(blocks.front().cols());
        return ElementaryProcess(std::move(partition), std::move(blocks), {}, rows, cols);
    }

    /// The same block on every interval of the partition.
    static ElementaryProcess constant(std::vector<double> partition, const Matrix& block)
    {
        std::vector<Matrix> blocks(partition.size() - 1, block);
        return deterministic(std::move(partition), std::move(blocks));
    }

    static ElementaryProcess adapted(std::vector<double> partition, AdaptedRule rule, std::size_t rows,
                                     std::size_t cols)
    {
        return ElementaryProcess(std::move(partition), {}, std::move(rule), rows, cols);
    }

    const std::vector<double>& partition() const { return partition_; }
    std::size_t intervals() const { return partition_.size() - 1; }
    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool is_deterministic() const { return !rule_; }
    const std::vector<Matrix>& blocks() const { return blocks_; }

    Matrix block(std::size_t k, const Vector& state) const
    {
        if (!rule_) {
            return blocks_.at(k);
        }
        Matrix m = rule_(k, partition_[k], state);
        if (static_cast<std::size_t>(m.rows()) != rows_ || static_cast<std::size_t>(m.cols()) != cols_) {
            throw dimension_error("ElementaryProcess: adapted block has the wrong shape");
        }
        return m;
    }

    ElementaryProcess scaled(double alpha) const
    {
        if (is_deterministic()) {
            std::vector<Matrix> out(blocks_.size());
            for (std::size_t k = 0; k < out.size(); ++k) {
                out[k] = alpha * blocks_[k];
            }
            return deterministic(partition_, std::move(out));
        }
        auto self = *this;
        return adapted(
            partition_, [self, alpha](std::size_t k, double, const Vector& x) { return Matrix(alpha * self.block(k, x)); },
            rows_, cols_);
    }

    /// alpha * this + other on a common partition.
    ElementaryProcess combine(double alpha, const ElementaryProcess& other) const
    {
        if (partition_ != other.partition_) {
            throw std::invalid_argument("ElementaryProcess: partitions differ");
        }
        if (rows_ != other.rows_ || cols_ != other.cols_) {
            throw dimension_error("ElementaryProcess: shapes differ");
        }
        if (is_deterministic() && other.is_deterministic()) {
            std::vector<Matrix> out(blocks_.size());
            for (std::size_t k = 0; k < out.size(); ++k) {
                out[k] = alpha * blocks_[k] + other.blocks_[k];
            }
            return deterministic(partition_, std::move(out));
        }
        auto self = *this;
        return adapted(
            partition_,
            [self, other, alpha](std::size_t k, double, const Vector& x) {
                return Matrix(alpha * self.block(k, x) + other.block(k, x));
            },
            rows_, cols_);
    }

private:
    ElementaryProcess(std::vector<double> partition, std::vector<Matrix> blocks, AdaptedRule rule, std::size_t rows,
                      std::size_t cols)
        : partition_(std::move(partition)), blocks_(std::move(blocks)), rule_(std::move(rule)), rows_(rows), cols_(cols)
    {
        if (partition_.size() < 2) {
            throw std::invalid_argument("ElementaryProcess: partition needs at least two points");
        }
        for (std::size_t k = 1; k < partition_.size(); ++k) {
            if (!(partition_[k] > partition_[k - 1])) {
                throw std::invalid_argument("ElementaryProcess: partition must be strictly increasing");
            }
        }
    }

    std::vector<double> partition_;
    std::vector<Matrix> blocks_;
    AdaptedRule rule_;
    std::size_t rows_;
    std::size_t cols_;
};

/// Uniform partition of [0, T] into n intervals.
inline std::vector<double> uniform_partition(double T, std::size_t n)
{
    std::vector<double> out(n + 1);
    for (std::size_t k = 0; k <= n; ++k) {
        out[k] = T * static_cast<double>(k) / static_cast<double>(n);
    }
    out.back() = T;
    return out;
}

struct IntegralResult {
    Matrix values;                    // rows = output dim, one column per path
    std::vector<double> integrand_sq; // per path sum_k dt_k ||Phi_k||^2_{L2^Sigma}
    double norm_p_estimate = 0.0;     // mean ||I_T||^2
    double integrand_norm = 0.0;      // mean of integrand_sq

    HVector value(std::size_t p) const { return HVector(values.col(static_cast<Eigen::Index>(p))); }
    std::size_t n_paths() const { return static_cast<std::size_t>(values.cols()); }
};

/// I_T(Phi) = sum_k Phi_k (B_{t_{k+1}} - B_{t_k}) per path.  With sigma, also
/// the per-path integrand norms on the right of the isometry.
inline IntegralResult integrate_elementary(const ElementaryProcess& phi, const PathBundle& paths,
                                           const CovarianceSet* sigma = nullptr)
{
    detail::require_dims(phi.cols(), paths.dim(), "integrate_elementary");
    if (sigma) {
        detail::require_dims(phi.cols(), sigma->dim(), "integrate_elementary");
    }
    const auto& part = phi.partition();
    std::vector<std::size_t> idx(part.size());
    for (std::size_t k = 0; k < part.size(); ++k) {
        idx[k] = paths.index_of(part[k]);
    }
    IntegralResult out;
    out.values = Matrix::Zero(static_cast<Eigen::Index>(phi.rows()), static_cast<Eigen::Index>(paths.n_paths()));
    out.integrand_sq.assign(paths.n_paths(), 0.0);

    std::vector<double> det_norms;
    if (sigma && phi.is_deterministic()) {
        for (const auto& b : phi.blocks()) {
            const double n = l2sigma_norm(b, *sigma);
            det_norms.push_back(n * n);
        }
    }
    parallel_for(block_count(paths.n_paths()), [&](std::size_t b) {
        const std::size_t last = std::min(paths.n_paths(), (b + 1) * kSampleBlock);
        for (std::size_t p = b * kSampleBlock; p < last; ++p) {
            auto col = out.values.col(static_cast<Eigen::Index>(p));
            double sq = 0.0;
            for (std::size_t k = 0; k + 1 < part.size(); ++k) {
                const Vector left = paths.state(p, idx[k]);
                const Matrix m = phi.block(k, left);
                col.noalias() += m * (paths.state(p, idx[k + 1]) - left);
                if (sigma) {
                    double n2 = 0.0;
                    if (!det_norms.empty()) {
                        n2 = det_norms[k];
                    } else {
                        const double n = l2sigma_norm(m, *sigma);
                        n2 = n * n;
                    }
                    sq += (part[k + 1] - part[k]) * n2;
                }
            }
            out.integrand_sq[p] = sq;
        }
    });

    MomentAccumulator lhs, rhs;
    for (std::size_t p = 0; p < paths.n_paths(); ++p) {
        lhs.add(out.values.col(static_cast<Eigen::Index>(p)).squaredNorm());
        rhs.add(out.integrand_sq[p]);
    }
    out.norm_p_estimate = lhs.mean();
    out.integrand_norm = rhs.mean();
    return out;
}

/// Path grid and sample size for the integral checks.  Paths start at 0 on
/// a uniform grid of `steps` intervals over [0, T]; the integrand partition
/// must lie on that grid.
struct IntegralSampling {
    double T = 1.0;
    std::size_t steps = 1;
    std::size_t n_paths = 1;
    std::uint64_t seed = 0;
};

/// Result of an inequality lhs <= C * rhs checked over a policy family.
struct InequalityCheck {
    double lhs = 0.0;
    double rhs = 0.0;
    double lhs_se = 0.0;
    double constant = 1.0;
    double cp_estimate = 0.0; // lhs / rhs, 0 when rhs = 0
    bool ok = false;
    std::size_t argmax = 0;
    std::size_t n_paths = 0;
    std::uint64_t seed = 0;

    CheckRecord record(std::string name) const
    {
        CheckRecord r = CheckRecord::at_most(std::move(name), lhs, constant * rhs, 3.0 * lhs_se);
        r.ok = ok;
        return r.with_sampling(n_paths, seed);
    }
};

/// Classical scalar constants for E|M_T|^p <= C_p E<M>_T^{p/2}: C_2 = 1,
/// C_4 = z^4 with z the largest zero of He_4 (Davis), C_1 = 3 (Lenglart).
inline double bdg_constant(double p)
{
    if (p == 2.0) {
        return 1.0;
    }
    if (p == 4.0) {
        const double z2 = 3.0 + std::sqrt(6.0);
        return z2 * z2;
    }
    if (p == 1.0) {
        return 3.0;
    }
    throw std::invalid_argument("bdg_constant: p must be 1, 2 or 4");
}

/// lhs = sup_theta E_theta ||I_T||^p, rhs = sup_theta E_theta (int ||Phi||^2_{L2^Sigma})^{p/2},
/// all policies driven by the same noise.  ok = lhs <= C_p rhs + 3 SE(lhs).
inline InequalityCheck bdg_check(const ElementaryProcess& phi, const CovarianceSet& sigma, double p,
                                 const std::vector<ControlPolicy>& policies, const IntegralSampling& sampling)
{
    const double cp = bdg_constant(p);
    if (policies.empty()) {
        throw std::invalid_argument("bdg_check: empty policy family");
    }
    InequalityCheck out;
    out.constant = cp;
    out.n_paths = sampling.n_paths;
    out.seed = sampling.seed;
    for (std::size_t j = 0; j < policies.size(); ++j) {
        const auto paths = simulate_gbm(sigma, policies[j], sampling.n_paths, sampling.steps, sampling.T, sampling.seed);
        const auto r = integrate_elementary(phi, paths, &sigma);
        MomentAccumulator lhs, rhs;
        for (std::size_t i = 0; i < r.n_paths(); ++i) {
            const double n2 = r.values.col(static_cast<Eigen::Index>(i)).squaredNorm();
            lhs.add(p == 2.0 ? n2 : std::pow(n2, 0.5 * p));
            rhs.add(p == 2.0 ? r.integrand_sq[i] : std::pow(r.integrand_sq[i], 0.5 * p));
        }
        if (j == 0 || lhs.mean() > out.lhs) {
            out.lhs = lhs.mean();
            out.lhs_se = lhs.std_error();
            out.argmax = j;
        }
        out.rhs = j == 0 ? rhs.mean() : std::max(out.rhs, rhs.mean());
    }
    out.cp_estimate = out.rhs > 0.0 ? out.lhs / out.rhs : 0.0;
    out.ok = out.lhs <= cp * out.rhs + 3.0 * out.lhs_se;
    return out;
}

/// E||int Phi dB||^2 <= E int ||Phi||^2_{L2^Sigma} dt, i.e. bdg_check at p = 2.
inline InequalityCheck ito_isometry_check(const ElementaryProcess& phi, const CovarianceSet& sigma,
                                          const std::vector<ControlPolicy>& policies,
                                          const IntegralSampling& sampling)
{
    return bdg_check(phi, sigma, 2.0, policies, sampling);
}

/// Sigma_I = { int_0^T Phi(t) Q Phi(t)^T dt : Q extreme }, composite midpoint
/// rule, extremes kept in the order of sigma.
inline CovarianceSet sigma_of_integral(const std::function<Matrix(double)>& phi, const CovarianceSet& sigma, double T,
                                       std::size_t quad_steps)
{
    if (quad_steps < 1) {
        throw std::invalid_argument("sigma_of_integral: quad_steps must be >= 1");
    }
    if (!(T > 0.0)) {
        throw std::domain_error("sigma_of_integral: T must be > 0");
    }
    const double h = T / static_cast<double>(quad_steps);
    std::vector<Matrix> nodes;
    nodes.reserve(quad_steps);
    for (std::size_t j = 0; j < quad_steps; ++j) {
        nodes.push_back(phi((static_cast<double>(j) + 0.5) * h));
        detail::require_dims(static_cast<std::size_t>(nodes.back().cols()), sigma.dim(), "sigma_of_integral");
    }
    std::vector<Matrix> out(sigma.size());
    parallel_for(sigma.size(), [&](std::size_t e) {
        const Matrix& q = sigma.extreme(e).matrix();
        Matrix acc = Matrix::Zero(nodes.front().rows(), nodes.front().rows());
        for (const auto& m : nodes) {
            acc.noalias() += m * q * m.transpose();
        }
        out[e] = h * acc;
    });
    std::vector<PsdOperator> qs;
    for (const auto& m : out) {
        qs.emplace_back(SymOperator::symmetrized(m));
    }
    return CovarianceSet(std::move(qs), "integral(" + sigma.label() + ")");
}

struct FubiniResult {
    double diff_norm = 0.0;
    bool ok = false;
    Matrix lhs; // sum_j mu_j I(Phi_j)
    Matrix rhs; // I(sum_j mu_j Phi_j)
};

/// Both sides of the finite-measure interchange per path.
inline FubiniResult fubini_check(const std::vector<ElementaryProcess>& family, const std::vector<double>& weights,
                                 const PathBundle& paths)
{
    if (family.empty() || family.size() != weights.size()) {
        throw std::invalid_argument("fubini_check: need one weight per index point");
    }
    FubiniResult out;
    ElementaryProcess mixed = family.front().scaled(weights.front());
    for (std::size_t j = 0; j < family.size(); ++j) {
        const auto r = integrate_elementary(family[j], paths);
        if (j == 0) {
            out.lhs = weights[j] * r.values;
        } else {
            out.lhs += weights[j] * r.values;
            mixed = family[j].combine(weights[j], mixed);
        }
    }
    out.rhs = integrate_elementary(mixed, paths).values;
    out.diff_norm = out.lhs.cols() ? (out.lhs - out.rhs).colwise().norm().maxCoeff() : 0.0;
    out.ok = out.diff_norm <= 1e-10;
    return out;
}

/// I_t = int_0^t e^{(t-s)A} dB_s with the integrand frozen at the left end of
/// every path step: I_{k+1} = e^{dt A} (I_k + dB_k).  The result keeps every
/// `substeps`-th grid point of `paths`.
inline PathBundle convolution_path(const SymOperator& a, const PathBundle& paths, std::size_t substeps)
{
    detail::require_dims(a.dim(), paths.dim(), "convolution_path");
    if (substeps < 1 || paths.steps() % substeps != 0) {
        throw std::invalid_argument("convolution_path: substeps must divide the path step count");
    }
    const auto& t = paths.times();
    const double dt = t[1] - t[0];
    for (std::size_t k = 1; k < paths.steps(); ++k) {
        if (std::abs((t[k + 1] - t[k]) - dt) > 1e-9 * std::max(1.0, std::abs(t.back()))) {
            throw std::invalid_argument("convolution_path: path grid must be uniform");
        }
    }
    const Matrix flow = mat_exp(a, dt).matrix();
    const std::size_t out_steps = paths.steps() / substeps;
    std::vector<double> times(out_steps + 1);
    for (std::size_t j = 0; j <= out_steps; ++j) {
        times[j] = t[j * substeps];
    }
    PathBundle out(std::move(times), paths.n_paths(), paths.dim(), paths.seed(), paths.policy_label(),
                   paths.sigma_label());
    parallel_for(block_count(paths.n_paths()), [&](std::size_t b) {
        const std::size_t last = std::min(paths.n_paths(), (b + 1) * kSampleBlock);
        Vector x(static_cast<Eigen::Index>(paths.dim()));
        for (std::size_t p = b * kSampleBlock; p < last; ++p) {
            x.setZero();
            out.state(p, 0) = x;
            for (std::size_t k = 0; k < paths.steps(); ++k) {
                const Vector moved = x + (paths.state(p, k + 1) - paths.state(p, k));
                x.noalias() = flow * moved;
                if ((k + 1) % substeps == 0) {
                    const std::size_t j = (k + 1) / substeps;
                    out.state(p, j) = x;
                    out.increment(p, j - 1) = out.state(p, j) - out.state(p, j - 1);
                }
            }
        }
    });
    return out;
}

struct ConvolutionCondition {
    double value = 0.0;
    bool finite = false;
    std::size_t nodes = 0;
};

/// int_0^T ||e^{tA}||^2_{L2^Sigma} t^{-beta} dt.  With t = T u^{1/(1-beta)}
/// the integrand becomes T^{1-beta}/(1-beta) ||e^{tA}||^2_{L2^Sigma} du, which
/// the midpoint rule in u handles; M doubles from quad_steps until the
/// relative change drops below 1e-4.
inline ConvolutionCondition convolution_condition(const SymOperator& a, const CovarianceSet& sigma, double beta,
                                                  double T, std::size_t quad_steps = 64)
{
    if (!(beta > 0.0 && beta < 1.0)) {
        throw std::domain_error("convolution_condition: beta must lie in (0, 1)");
    }
    if (!(T > 0.0)) {
        throw std::domain_error("convolution_condition: T must be > 0");
    }
    detail::require_dims(a.dim(), sigma.dim(), "convolution_condition");
    // ||e^{tA}||^2_{L2^Sigma} = max_Q sum_i e^{2 t lambda_i} (V^T Q V)_ii
    Eigen::SelfAdjointEigenSolver<Matrix> es(a.matrix());
    const Vector lambda = es.eigenvalues();
    std::vector<Vector> diag;
    for (const auto& q : sigma.extremes()) {
        diag.push_back((es.eigenvectors().transpose() * q.matrix() * es.eigenvectors()).diagonal());
    }
    auto norm_sq = [&](double t) {
        const Vector e = (2.0 * t * lambda).array().exp().matrix();
        double best = 0.0;
        for (const auto& d : diag) {
            best = std::max(best, e.dot(d));
        }
        return best;
    };
    const double power = 1.0 / (1.0 - beta);
    const double scale = std::pow(T, 1.0 - beta) / (1.0 - beta);
    auto midpoint = [&](std::size_t m) {
        double acc = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            const double u = (static_cast<double>(j) + 0.5) / static_cast<double>(m);
            acc += norm_sq(T * std::pow(u, power));
        }
        return scale * acc / static_cast<double>(m);
    };

    ConvolutionCondition out;
    std::size_t m = std::max<std::size_t>(quad_steps, 1);
    double prev = midpoint(m);
    constexpr std::size_t max_nodes = std::size_t{1} << 24;
    while (m < max_nodes) {
        m *= 2;
        const double cur = midpoint(m);
        out.value = cur;
        out.nodes = m;
        if (std::abs(cur - prev) <= 1e-4 * std::abs(cur)) {
            out.finite = std::isfinite(cur);
            return out;
        }
        prev = cur;
    }
    return out;
}

} // namespace gexpect
