#pragma once

// Phase-one simplex for { x >= 0 : A x = b }.  Dense tableau, Bland's rule.
// Problems here are tiny (a few dozen rows and columns).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace gexpect::detail {

struct FeasibilityResult {
    bool feasible = false;
    double infeasibility = 0.0; // optimal sum of artificials
    Eigen::VectorXd x;
};

inline FeasibilityResult simplex_feasibility(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, double tol)
{
    const Eigen::Index m = a.rows();
    const Eigen::Index n = a.cols();
    const Eigen::Index rhs = n + m;
    constexpr double pivot_eps = 1e-12;

    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(m + 1, n + m + 1);
    std::vector<Eigen::Index> basis(static_cast<std::size_t>(m));
    for (Eigen::Index i = 0; i < m; ++i) {
        const double sign = b(i) < 0.0 ? -1.0 : 1.0;
        t.row(i).head(n) = sign * a.row(i);
        t(i, n + i) = 1.0;
        t(i, rhs) = sign * b(i);
        basis[static_cast<std::size_t>(i)] = n + i;
    }
    // reduced costs of min sum(artificials)
    for (Eigen::Index j = 0; j < n; ++j) {
        t(m, j) = -t.col(j).head(m).sum();
    }
    t(m, rhs) = -t.col(rhs).head(m).sum();

    const Eigen::Index max_iter = 50 * (m + n + 1);
    for (Eigen::Index iter = 0; iter < max_iter; ++iter) {
        Eigen::Index enter = -1;
        for (Eigen::Index j = 0; j < n + m; ++j) {
            if (t(m, j) < -pivot_eps) {
                enter = j;
                break;
            }
        }
        if (enter < 0) {
            break;
        }
        Eigen::Index leave = -1;
        double best = 0.0;
        for (Eigen::Index i = 0; i < m; ++i) {
            if (t(i, enter) > pivot_eps) {
                const double ratio = t(i, rhs) / t(i, enter);
                if (leave < 0 || ratio < best - pivot_eps ||
                    (std::abs(ratio - best) <= pivot_eps &&
                     basis[static_cast<std::size_t>(i)] < basis[static_cast<std::size_t>(leave)])) {
                    leave = i;
                    best = ratio;
                }
            }
        }
        if (leave < 0) {
            break; // unbounded direction; cannot happen for a phase-one objective bounded below by 0
        }
        t.row(leave) /= t(leave, enter);
        for (Eigen::Index i = 0; i <= m; ++i) {
            if (i != leave && t(i, enter) != 0.0) {
                t.row(i) -= t(i, enter) * t.row(leave);
            }
        }
        basis[static_cast<std::size_t>(leave)] = enter;
    }

    FeasibilityResult out;
    out.infeasibility = std::max(0.0, -t(m, rhs));
    out.x = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < m; ++i) {
        const Eigen::Index j = basis[static_cast<std::size_t>(i)];
        if (j < n) {
            out.x(j) = t(i, rhs);
        }
    }
    out.feasible = out.infeasibility <= tol;
    return out;
}

} // namespace gexpect::detail
