#pragma once

// Covariance sets Sigma stored by extreme points, and the sublinear
// functional G(A) = 1/2 sup_{Q in Sigma} Tr[A Q] they induce.  Any linear
// functional attains its sup over conv(extremes) at an extreme, so G, the
// L2-Sigma norm and the covariance algebra are exact on this representation.

#include "gexpect/detail/simplex.hpp"
#include "gexpect/operator_core.hpp"
#include "gexpect/random.hpp"

#include "json.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace gexpect {

class CovarianceSet {
public:
    static constexpr double dedup_tolerance = 1e-12;

    CovarianceSet(std::vector<PsdOperator> extremes, std::string label = {}) : label_(std::move(label))
    {
        if (extremes.empty()) {
            throw std::invalid_argument("CovarianceSet: needs at least one extreme point");
        }
        dim_ = extremes.front().dim();
        for (auto& q : extremes) {
            detail::require_dims(dim_, q.dim(), "CovarianceSet");
            const bool duplicate = std::any_of(extremes_.begin(), extremes_.end(), [&](const PsdOperator& kept) {
                return (kept.matrix() - q.matrix()).norm() <= dedup_tolerance;
            });
            if (!duplicate) {
                extremes_.push_back(std::move(q));
            }
        }
    }

    static CovarianceSet from_matrices(const std::vector<Matrix>& ms, std::string label = {})
    {
        std::vector<PsdOperator> qs;
        qs.reserve(ms.size());
        for (const auto& m : ms) {
            qs.emplace_back(m);
        }
        return CovarianceSet(std::move(qs), std::move(label));
    }

    static CovarianceSet singleton(const Matrix& q, std::string label = {})
    {
        return from_matrices({q}, std::move(label));
    }

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return extremes_.size(); }
    const std::vector<PsdOperator>& extremes() const { return extremes_; }
    const PsdOperator& extreme(std::size_t i) const { return extremes_.at(i); }
    const std::string& label() const { return label_; }

    /// sup_{Q in Sigma} Tr[Q]
    double max_trace() const
    {
        double best = extremes_.front().trace();
        for (const auto& q : extremes_) {
            best = std::max(best, q.trace());
        }
        return best;
    }

    /// Largest eigenvalue over all extremes.
    double max_spectral_radius() const
    {
        double best = 0.0;
        for (const auto& q : extremes_) {
            best = std::max(best, q.eigenvalues().maxCoeff());
        }
        return best;
    }

private:
    std::size_t dim_ = 0;
    std::vector<PsdOperator> extremes_;
    std::string label_;
};

/// G(A) = 1/2 max_{Q extreme} Tr[A Q].
inline double g_eval(const CovarianceSet& sigma, const Matrix& a)
{
    if (static_cast<std::size_t>(a.rows()) != sigma.dim() || a.rows() != a.cols()) {
        throw dimension_error("g_eval: dimension mismatch");
    }
    double best = trace_product(a, sigma.extremes().front().matrix());
    for (std::size_t i = 1; i < sigma.size(); ++i) {
        best = std::max(best, trace_product(a, sigma.extremes()[i].matrix()));
    }
    return 0.5 * best;
}

inline double g_eval(const CovarianceSet& sigma, const SymOperator& a) { return g_eval(sigma, a.matrix()); }

/// The G-functional of a covariance set, usable as a callable.
class GFunctional {
public:
    explicit GFunctional(CovarianceSet sigma) : sigma_(std::move(sigma)) {}

    double operator()(const SymOperator& a) const { return g_eval(sigma_, a); }
    double operator()(const Matrix& a) const { return g_eval(sigma_, a); }

    const CovarianceSet& sigma() const { return sigma_; }

private:
    CovarianceSet sigma_;
};

/// ||phi||_{L2^Sigma} = sqrt(max_Q Tr[phi Q phi^T]) for a (possibly
/// rectangular) operator phi: H -> K.
inline double l2sigma_norm(const Matrix& phi, const CovarianceSet& sigma)
{
    detail::require_dims(static_cast<std::size_t>(phi.cols()), sigma.dim(), "l2sigma_norm");
    double best = 0.0;
    for (const auto& q : sigma.extremes()) {
        best = std::max(best, trace_product(Matrix(phi * q.matrix()), Matrix(phi.transpose())));
    }
    return std::sqrt(best);
}

inline CovarianceSet covset_scale(const CovarianceSet& sigma, double a)
{
    std::vector<PsdOperator> out;
    out.reserve(sigma.size());
    for (const auto& q : sigma.extremes()) {
        out.emplace_back(SymOperator(Matrix((a * a) * q.matrix())));
    }
    return CovarianceSet(std::move(out), sigma.label() + "*" + std::to_string(a) + "^2");
}

/// {Q1 + Q2 : Q_i in Sigma_i}
inline CovarianceSet covset_sum(const CovarianceSet& s1, const CovarianceSet& s2)
{
    detail::require_dims(s1.dim(), s2.dim(), "covset_sum");
    std::vector<PsdOperator> out;
    out.reserve(s1.size() * s2.size());
    for (const auto& q1 : s1.extremes()) {
        for (const auto& q2 : s2.extremes()) {
            out.emplace_back(SymOperator(Matrix(q1.matrix() + q2.matrix())));
        }
    }
    return CovarianceSet(std::move(out), s1.label() + "+" + s2.label());
}

/// {S Q S^T : Q in Sigma}; S may map H into a space of another dimension.
inline CovarianceSet covset_conjugate(const CovarianceSet& sigma, const Matrix& s)
{
    detail::require_dims(static_cast<std::size_t>(s.cols()), sigma.dim(), "covset_conjugate");
    std::vector<PsdOperator> out;
    out.reserve(sigma.size());
    for (const auto& q : sigma.extremes()) {
        out.emplace_back(SymOperator::symmetrized(s * q.matrix() * s.transpose()));
    }
    return CovarianceSet(std::move(out), "S(" + sigma.label() + ")S*");
}

struct MembershipResult {
    bool member = false;             // exact LP verdict
    double lp_infeasibility = 0.0;   // phase-one optimum
    Vector weights;                  // convex weights over the extremes when member
    bool certificate_consistent = true; // support-function checks agree with the LP verdict
    double max_support_gap = 0.0;    // max_m 1/2 Tr[A_m B] - G(A_m)
};

namespace detail {

inline Matrix random_symmetric(std::size_t n, std::mt19937_64& rng)
{
    std::normal_distribution<double> z(0.0, 1.0);
    Matrix a(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = i; j < a.cols(); ++j) {
            a(i, j) = z(rng);
            a(j, i) = a(i, j);
        }
    }
    return a;
}

} // namespace detail

/// B in conv(extremes)?  Exact path: LP over simplex weights.  Certificate
/// path: B in Sigma implies 1/2 Tr[A B] <= G(A) for every symmetric A, which
/// is checked on `directions` random A (plus A = +-I); a violated direction
/// proves non-membership.
inline MembershipResult covset_membership(const CovarianceSet& sigma, const PsdOperator& b, std::size_t directions,
                                          std::uint64_t seed = 0x5eed)
{
    detail::require_dims(sigma.dim(), b.dim(), "covset_contains");
    if (directions < 1) {
        throw std::invalid_argument("covset_contains: need at least one test direction");
    }
    const auto n = static_cast<Eigen::Index>(sigma.dim());
    const Eigen::Index rows = n * (n + 1) / 2 + 1;
    const auto k = static_cast<Eigen::Index>(sigma.size());

    Matrix lhs(rows, k);
    Vector rhs(rows);
    Eigen::Index r = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i; j < n; ++j, ++r) {
            for (Eigen::Index e = 0; e < k; ++e) {
                lhs(r, e) = sigma.extremes()[static_cast<std::size_t>(e)].matrix()(i, j);
            }
            rhs(r) = b.matrix()(i, j);
        }
    }
    lhs.row(r).setOnes();
    rhs(r) = 1.0;

    const double tol = 1e-9 * (1.0 + rhs.cwiseAbs().sum());
    const auto lp = detail::simplex_feasibility(lhs, rhs, tol);

    MembershipResult out;
    out.member = lp.feasible;
    out.lp_infeasibility = lp.infeasibility;
    out.weights = lp.x;

    std::mt19937_64 rng(seed);
    out.max_support_gap = -std::numeric_limits<double>::infinity();
    auto probe = [&](const Matrix& a) {
        out.max_support_gap = std::max(out.max_support_gap, 0.5 * trace_product(a, b.matrix()) - g_eval(sigma, a));
    };
    probe(Matrix::Identity(n, n));
    probe(-Matrix::Identity(n, n));
    for (std::size_t m = 0; m < directions; ++m) {
        probe(detail::random_symmetric(sigma.dim(), rng));
    }
    // A member can never violate a support inequality; a non-member may pass
    // all sampled directions, which is not an inconsistency.
    out.certificate_consistent = !(out.member && out.max_support_gap > 1e-9);
    return out;
}

inline bool covset_contains(const CovarianceSet& sigma, const PsdOperator& b, std::size_t directions)
{
    return covset_membership(sigma, b, directions).member;
}

// JSON schema: { "dim": N, "extremes": [[row-major N*N reals], ...], "label": string }

inline nlohmann::json to_json(const CovarianceSet& sigma)
{
    nlohmann::json extremes = nlohmann::json::array();
    for (const auto& q : sigma.extremes()) {
        nlohmann::json flat = nlohmann::json::array();
        for (Eigen::Index i = 0; i < q.matrix().rows(); ++i) {
            for (Eigen::Index j = 0; j < q.matrix().cols(); ++j) {
                flat.push_back(q.matrix()(i, j));
            }
        }
        extremes.push_back(std::move(flat));
    }
    return {{"dim", sigma.dim()}, {"extremes", std::move(extremes)}, {"label", sigma.label()}};
}

inline CovarianceSet covariance_set_from_json(const nlohmann::json& j)
{
    const auto n = j.at("dim").get<std::size_t>();
    if (n < 1) {
        throw dimension_error("covariance set JSON: dim must be >= 1");
    }
    std::vector<Matrix> ms;
    for (const auto& flat : j.at("extremes")) {
        if (flat.size() != n * n) {
            throw dimension_error("covariance set JSON: extreme has " + std::to_string(flat.size()) +
                                  " entries, expected " + std::to_string(n * n));
        }
        Matrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < n; ++c) {
                m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = flat.at(i * n + c).get<double>();
            }
        }
        ms.push_back(std::move(m));
    }
    return CovarianceSet::from_matrices(ms, j.value("label", std::string{}));
}

} // namespace gexpect
