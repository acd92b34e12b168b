#pragma once

// G-normal distribution N_G(0, Sigma): exact Gaussian even moments, the
// moment sandwich, 1-d projection bands, and the static (sup over constant
// covariances) upper-expectation evaluator.
//
// The static evaluator takes sup over the extremes of Sigma only.  It equals
// the G-expectation when a constant covariance is optimal (e.g. f convex or
// concave along a projection) and is a lower bound otherwise; the dynamic
// evaluator in control_sim.hpp covers the general case.

#include "gexpect/covariance_set.hpp"
#include "gexpect/estimate.hpp"
#include "gexpect/parallel.hpp"
#include "gexpect/random.hpp"

#include <cstdint>
#include <ostream>
#include <vector>

namespace gexpect {

/// Law of sqrt(scale) * X with X ~ N_G(0, sigma).
class GNormal {
public:
    explicit GNormal(CovarianceSet sigma, double scale = 1.0) : sigma_(std::move(sigma)), scale_(scale)
    {
        if (!(scale >= 0.0)) {
            throw std::domain_error("GNormal: scale must be >= 0");
        }
    }

    const CovarianceSet& sigma() const { return sigma_; }
    double scale() const { return scale_; }
    std::size_t dim() const { return sigma_.dim(); }

    /// scale * Sigma
    CovarianceSet scaled_sigma() const { return covset_scale(sigma_, std::sqrt(scale_)); }

private:
    CovarianceSet sigma_;
    double scale_;
};

struct VolatilityBand {
    double sigma_up_sq = 0.0;
    double sigma_down_sq = 0.0;

    VolatilityBand() = default;
    VolatilityBand(double up, double down) : sigma_up_sq(up), sigma_down_sq(down)
    {
        if (!(down >= 0.0) || !(up >= down)) {
            throw std::domain_error("VolatilityBand: need sigma_up^2 >= sigma_down^2 >= 0");
        }
    }
};

/// E||X||^{2m} for X ~ N(0, Q).  With F(e) = E exp(e|X|^2 / 2):
///   F^(m)(0) = (m-1)!/2 * sum_{j<m} F^(j)(0)/j! * Tr[Q^{m-j}],  F(0) = 1,
/// and the moment is 2^m F^(m)(0).
inline double gaussian_even_moment(const PsdOperator& q, unsigned m)
{
    if (m == 0) {
        throw std::domain_error("gaussian_even_moment: m must be >= 1");
    }
    std::vector<double> trace_pow(m + 1);
    for (unsigned k = 1; k <= m; ++k) {
        trace_pow[k] = q.trace_power(k);
    }
    // scaled[j] = F^(j)(0) / j!
    std::vector<double> scaled(m + 1);
    scaled[0] = 1.0;
    for (unsigned n = 1; n <= m; ++n) {
        double acc = 0.0;
        for (unsigned j = 0; j < n; ++j) {
            acc += scaled[j] * trace_pow[n - j];
        }
        // F^(n)/n! = (n-1)!/(2 n!) acc
        scaled[n] = acc / (2.0 * n);
    }
    double factorial = 1.0;
    for (unsigned k = 2; k <= m; ++k) {
        factorial *= k;
    }
    return std::ldexp(scaled[m] * factorial, static_cast<int>(m));
}

/// sup_{Q in Sigma} E_Q ||sqrt(scale) X||^{2m}.
inline double moment_upper(const GNormal& gn, unsigned m)
{
    if (m == 1) {
        return gn.scale() * gn.sigma().max_trace();
    }
    double best = 0.0;
    for (const auto& q : gn.sigma().extremes()) {
        best = std::max(best, std::pow(gn.scale(), m) * gaussian_even_moment(q, m));
    }
    return best;
}

/// Constant K_m with Tr[Q^m] <= E_Q||X||^{2m} <= K_m (Tr Q)^m.  The recursion
/// on a rank-one unit Q gives K_m = (2m-1)!!, which is attained there; by
/// Minkowski on sum_k lambda_k Z_k^2 it bounds every Q.  Certified and tested
/// for m <= 5, N <= 8.
inline double moment_bound_constant(unsigned m)
{
    return gaussian_even_moment(PsdOperator::identity(1), m);
}

struct MomentBounds {
    double lower = 0.0; // sup_Q Tr[(scale Q)^m]
    double value = 0.0; // moment_upper
    double upper = 0.0; // sup_Q (Tr[scale Q])^m
    bool ok = false;
};

inline MomentBounds moment_bounds_check(const GNormal& gn, unsigned m)
{
    MomentBounds out;
    const double sm = std::pow(gn.scale(), m);
    for (const auto& q : gn.sigma().extremes()) {
        out.lower = std::max(out.lower, sm * q.trace_power(m));
        out.upper = std::max(out.upper, sm * std::pow(q.trace(), m));
    }
    out.value = moment_upper(gn, m);
    const double k = moment_bound_constant(m);
    const double slack = 1e-12 * (1.0 + out.value);
    out.ok = out.lower <= out.value * k + slack && out.value <= k * out.upper + slack;
    return out;
}

/// sigma_up^2(h) = 2 G(h h^T) = max_Q <Qh,h>, sigma_down^2(h) = min_Q <Qh,h>.
inline VolatilityBand project_band(const GNormal& gn, const HVector& h)
{
    detail::require_dims(gn.dim(), h.dim(), "project_band");
    const Matrix hh = outer(h, h);
    const double up = 2.0 * g_eval(gn.sigma(), hh);
    const double down = -2.0 * g_eval(gn.sigma(), Matrix(-hh));
    return {gn.scale() * up, gn.scale() * std::max(0.0, down)};
}

/// E[<X,h><X,k>] = scale * max_Q <Qh,k>.
inline double covariance_form(const GNormal& gn, const HVector& h, const HVector& k)
{
    detail::require_dims(gn.dim(), h.dim(), "covariance_form");
    detail::require_dims(gn.dim(), k.dim(), "covariance_form");
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& q : gn.sigma().extremes()) {
        best = std::max(best, k.coords().dot(q.matrix() * h.coords()));
    }
    return gn.scale() * best;
}

namespace detail {

/// Standard normal draws for samples [begin, end) of block `block`, one
/// column per sample.
inline Matrix normal_block(std::size_t dim, std::size_t count, std::uint64_t seed, std::size_t block)
{
    NormalStream z(sub_seed(seed, block));
    Matrix out(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(count));
    z.fill(out.reshaped());
    return out;
}

} // namespace detail

/// n i.i.d. draws of Q^{1/2} Z; deterministic in (seed, n).
inline std::vector<HVector> sample_gaussian(const PsdOperator& q, std::size_t n, std::uint64_t seed)
{
    if (n < 1) {
        throw std::invalid_argument("sample_gaussian: n must be >= 1");
    }
    const Matrix root = psd_sqrt(q).matrix();
    const std::size_t blocks = block_count(n);
    std::vector<Matrix> parts(blocks);
    parallel_for(blocks, [&](std::size_t b) {
        const std::size_t count = std::min(kSampleBlock, n - b * kSampleBlock);
        parts[b] = root * detail::normal_block(q.dim(), count, seed, b);
    });
    std::vector<HVector> out;
    out.reserve(n);
    for (const auto& part : parts) {
        for (Eigen::Index c = 0; c < part.cols(); ++c) {
            out.emplace_back(part.col(c));
        }
    }
    return out;
}

/// max over extremes Q of the sample mean of f(sqrt(scale) Q^{1/2} Z), with
/// the same Z for every extreme.
template <class F>
McEstimate static_upper_expectation(const GNormal& gn, F&& f, std::size_t n, std::uint64_t seed)
{
    if (n < 1) {
        throw std::invalid_argument("static_upper_expectation: n must be >= 1");
    }
    const std::size_t k = gn.sigma().size();
    std::vector<Matrix> roots;
    for (const auto& q : gn.sigma().extremes()) {
        roots.push_back(std::sqrt(gn.scale()) * psd_sqrt(q).matrix());
    }
    const std::size_t blocks = block_count(n);
    std::vector<std::vector<MomentAccumulator>> partial(blocks, std::vector<MomentAccumulator>(k));
    parallel_for(blocks, [&](std::size_t b) {
        const std::size_t count = std::min(kSampleBlock, n - b * kSampleBlock);
        const Matrix z = detail::normal_block(gn.dim(), count, seed, b);
        for (std::size_t e = 0; e < k; ++e) {
            const Matrix x = roots[e] * z;
            for (Eigen::Index c = 0; c < x.cols(); ++c) {
                partial[b][e].add(static_cast<double>(f(Vector(x.col(c)))));
            }
        }
    });
    std::vector<MomentAccumulator> total(k);
    for (const auto& block : partial) {
        for (std::size_t e = 0; e < k; ++e) {
            total[e].merge(block[e]);
        }
    }
    McEstimate out;
    out.n_samples = n;
    out.value = total[0].mean();
    for (std::size_t e = 1; e < k; ++e) {
        if (total[e].mean() > out.value) {
            out.value = total[e].mean();
            out.argmax = e;
        }
    }
    out.std_error = total[out.argmax].std_error();
    return out;
}

/// One row per draw, columns x0..x{N-1}.
inline void write_samples_csv(std::ostream& os, const std::vector<HVector>& samples)
{
    if (samples.empty()) {
        return;
    }
    const std::size_t n = samples.front().dim();
    for (std::size_t i = 0; i < n; ++i) {
        os << (i ? "," : "") << 'x' << i;
    }
    os << '\n';
    os.precision(17);
    for (const auto& s : samples) {
        for (std::size_t i = 0; i < n; ++i) {
            os << (i ? "," : "") << s[i];
        }
        os << '\n';
    }
}

} // namespace gexpect
