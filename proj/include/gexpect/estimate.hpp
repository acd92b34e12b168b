#pragma once

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>

namespace gexpect {

/// Monte Carlo estimate of a (sup of) expectation(s).
struct McEstimate {
    double value = 0.0;
    double std_error = 0.0; // of the achieving member
    std::size_t n_samples = 0;
    std::size_t argmax = 0; // index of the achieving extreme / policy
};

/// Mean and standard error from sums of deviations about the first value
/// seen (so a constant sample averages back to itself exactly).  Partial
/// accumulators are merged in a fixed order.
struct MomentAccumulator {
    double shift = 0.0;
    double sum = 0.0;    // sum of (x - shift)
    double sum_sq = 0.0; // sum of (x - shift)^2
    std::size_t n = 0;

    void add(double x)
    {
        if (n == 0) {
            shift = x;
        }
        const double d = x - shift;
        sum += d;
        sum_sq += d * d;
        ++n;
    }

    void merge(const MomentAccumulator& other)
    {
        if (other.n == 0) {
            return;
        }
        if (n == 0) {
            *this = other;
            return;
        }
        const double delta = other.shift - shift;
        const double dn = static_cast<double>(other.n);
        sum_sq += other.sum_sq + 2.0 * delta * other.sum + dn * delta * delta;
        sum += other.sum + dn * delta;
        n += other.n;
    }

    double mean() const { return n == 0 ? 0.0 : shift + sum / static_cast<double>(n); }

    double std_error() const
    {
        if (n < 2) {
            return 0.0;
        }
        const double dn = static_cast<double>(n);
        const double var = std::max(0.0, (sum_sq - sum * sum / dn) / (dn - 1.0));
        return std::sqrt(var / dn);
    }
};

/// One verified relation lhs (<= or ~=) rhs, as written into reports.
struct CheckRecord {
    std::string name;
    double lhs = 0.0;
    double rhs = 0.0;
    double tolerance = 0.0;
    bool ok = false;
    std::size_t n_paths = 0;
    std::uint64_t seed = 0;

    /// |lhs - rhs| <= tolerance
    static CheckRecord near(std::string name, double lhs, double rhs, double tolerance)
    {
        return {std::move(name), lhs, rhs, tolerance, std::abs(lhs - rhs) <= tolerance};
    }

    /// lhs <= rhs + tolerance
    static CheckRecord at_most(std::string name, double lhs, double rhs, double tolerance)
    {
        return {std::move(name), lhs, rhs, tolerance, lhs <= rhs + tolerance};
    }

    CheckRecord& with_sampling(std::size_t paths, std::uint64_t s)
    {
        n_paths = paths;
        seed = s;
        return *this;
    }
};

inline nlohmann::json to_json(const CheckRecord& r)
{
    return {{"name", r.name},         {"lhs", r.lhs},   {"rhs", r.rhs}, {"tolerance", r.tolerance},
            {"ok", r.ok},             {"n_paths", r.n_paths}, {"seed", r.seed}};
}

} // namespace gexpect
