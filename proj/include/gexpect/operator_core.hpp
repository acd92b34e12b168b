#pragma once

// Finite-dimensional truncation of the bounded symmetric operators on a
// separable Hilbert space H ~ R^N (standard basis).  Everything is dense.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>

namespace gexpect {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class dimension_error : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

namespace detail {

inline void require_dims(std::size_t a, std::size_t b, const char* what)
{
    if (a != b) {
        throw dimension_error(std::string(what) + ": dimension mismatch (" +
                              std::to_string(a) + " vs " + std::to_string(b) + ")");
    }
}

} // namespace detail

/// Element x of H.
class HVector {
public:
    explicit HVector(Vector coords) : coords_(std::move(coords))
    {
        if (coords_.size() < 1) {
            throw dimension_error("HVector: dimension must be >= 1");
        }
    }

    static HVector zero(std::size_t n) { return HVector(Vector::Zero(static_cast<Eigen::Index>(n))); }

    static HVector basis(std::size_t n, std::size_t i)
    {
        Vector v = Vector::Zero(static_cast<Eigen::Index>(n));
        v(static_cast<Eigen::Index>(i)) = 1.0;
        return HVector(std::move(v));
    }

    std::size_t dim() const { return static_cast<std::size_t>(coords_.size()); }
    const Vector& coords() const { return coords_; }
    double operator[](std::size_t i) const { return coords_(static_cast<Eigen::Index>(i)); }

    double dot(const HVector& other) const
    {
        detail::require_dims(dim(), other.dim(), "HVector::dot");
        return coords_.dot(other.coords_);
    }

private:
    Vector coords_;
};

/// Real symmetric N x N matrix.  The upper triangle is authoritative: on
/// construction it is mirrored into the lower one, so symmetry is exact.
class SymOperator {
public:
    static constexpr double symmetry_tolerance = 1e-12;

    explicit SymOperator(const Matrix& m)
    {
        if (m.rows() < 1 || m.rows() != m.cols()) {
            throw dimension_error("SymOperator: matrix must be square with dim >= 1");
        }
        const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
        if ((m - m.transpose()).cwiseAbs().maxCoeff() > symmetry_tolerance * scale) {
            throw std::invalid_argument("SymOperator: matrix is not symmetric");
        }
        m_ = m.triangularView<Eigen::Upper>();
        m_.triangularView<Eigen::StrictlyLower>() = m_.transpose().triangularView<Eigen::StrictlyLower>();
    }

    static SymOperator identity(std::size_t n)
    {
        return SymOperator(Matrix::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)));
    }

    static SymOperator zero(std::size_t n)
    {
        return SymOperator(Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)));
    }

    static SymOperator diagonal(const Vector& d) { return SymOperator(Matrix(d.asDiagonal())); }

    /// Symmetric part (M + M^T)/2 of an arbitrary square matrix.
    static SymOperator symmetrized(const Matrix& m) { return SymOperator(Matrix(0.5 * (m + m.transpose()))); }

    std::size_t dim() const { return static_cast<std::size_t>(m_.rows()); }
    const Matrix& matrix() const { return m_; }
    double operator()(std::size_t i, std::size_t j) const
    {
        return m_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }

    bool is_diagonal() const { return (m_ - Matrix(m_.diagonal().asDiagonal())).isZero(0.0); }

    /// Ascending eigenvalues.
    Vector eigenvalues() const
    {
        Eigen::SelfAdjointEigenSolver<Matrix> es(m_, Eigen::EigenvaluesOnly);
        return es.eigenvalues();
    }

    friend SymOperator operator+(const SymOperator& a, const SymOperator& b)
    {
        detail::require_dims(a.dim(), b.dim(), "SymOperator::operator+");
        return SymOperator(Matrix(a.m_ + b.m_));
    }
    friend SymOperator operator-(const SymOperator& a, const SymOperator& b)
    {
        detail::require_dims(a.dim(), b.dim(), "SymOperator::operator-");
        return SymOperator(Matrix(a.m_ - b.m_));
    }
    friend SymOperator operator*(double s, const SymOperator& a) { return SymOperator(Matrix(s * a.m_)); }
    SymOperator operator-() const { return SymOperator(Matrix(-m_)); }

private:
    Matrix m_;
};

/// Symmetric positive semidefinite operator.  Eigenvalues in [-1e-10, 0)
/// are clamped to zero; anything below is rejected.
class PsdOperator {
public:
    static constexpr double eigen_tolerance = 1e-10;

    explicit PsdOperator(const SymOperator& base) : base_(base)
    {
        Eigen::SelfAdjointEigenSolver<Matrix> es(base.matrix());
        eigenvalues_ = es.eigenvalues();
        eigenvectors_ = es.eigenvectors();
        eigen_floor_ = eigenvalues_.minCoeff();
        if (eigen_floor_ < -eigen_tolerance) {
            throw std::domain_error("PsdOperator: eigenvalue " + std::to_string(eigen_floor_) +
                                    " below -1e-10, operator is not PSD");
        }
        if (eigen_floor_ < 0.0) {
            eigenvalues_ = eigenvalues_.cwiseMax(0.0);
            base_ = SymOperator(Matrix(eigenvectors_ * eigenvalues_.asDiagonal() * eigenvectors_.transpose()));
        }
    }

    explicit PsdOperator(const Matrix& m) : PsdOperator(SymOperator(m)) {}

    static PsdOperator identity(std::size_t n) { return PsdOperator(SymOperator::identity(n)); }
    static PsdOperator zero(std::size_t n) { return PsdOperator(SymOperator::zero(n)); }
    static PsdOperator diagonal(const Vector& d) { return PsdOperator(SymOperator::diagonal(d)); }

    const SymOperator& base() const { return base_; }
    const Matrix& matrix() const { return base_.matrix(); }
    std::size_t dim() const { return base_.dim(); }
    double eigen_floor() const { return eigen_floor_; }

    /// Ascending, clamped to be nonnegative.
    const Vector& eigenvalues() const { return eigenvalues_; }
    const Matrix& eigenvectors() const { return eigenvectors_; }

    double trace() const { return base_.matrix().trace(); }

    /// Tr[Q^k] from the spectrum.
    double trace_power(unsigned k) const { return eigenvalues_.array().pow(static_cast<double>(k)).sum(); }

private:
    SymOperator base_;
    Vector eigenvalues_;
    Matrix eigenvectors_;
    double eigen_floor_ = 0.0;
};

inline constexpr double schatten_infinity = std::numeric_limits<double>::infinity();

/// Schatten p-norm (sum |lambda_i|^p)^(1/p); p = schatten_infinity gives the
/// spectral norm.
inline double schatten_norm(const SymOperator& a, double p)
{
    if (!(p >= 1.0)) {
        throw std::domain_error("schatten_norm: p must be >= 1");
    }
    const Vector abs_eig = a.eigenvalues().cwiseAbs();
    const double top = abs_eig.maxCoeff();
    if (std::isinf(p) || top == 0.0) {
        return top;
    }
    if (p == 1.0) {
        return abs_eig.sum();
    }
    return top * std::pow((abs_eig / top).array().pow(p).sum(), 1.0 / p);
}

inline SymOperator psd_sqrt(const PsdOperator& q)
{
    const Matrix& v = q.eigenvectors();
    return SymOperator(Matrix(v * q.eigenvalues().cwiseSqrt().asDiagonal() * v.transpose()));
}

/// Rank-one operator (x (x) y) z = <z, y> x, i.e. entries x_i y_j.
inline Matrix outer(const HVector& x, const HVector& y)
{
    detail::require_dims(x.dim(), y.dim(), "outer");
    return x.coords() * y.coords().transpose();
}

/// e^{tA} by eigen-decomposition; exactly the identity at t = 0.
inline SymOperator mat_exp(const SymOperator& a, double t)
{
    if (t == 0.0) {
        return SymOperator::identity(a.dim());
    }
    if (a.is_diagonal()) {
        return SymOperator::diagonal((t * a.matrix().diagonal()).array().exp().matrix());
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(a.matrix());
    const Matrix& v = es.eigenvectors();
    const Vector e = (t * es.eigenvalues()).array().exp().matrix();
    return SymOperator(Matrix(v * e.asDiagonal() * v.transpose()));
}

/// Tr[A B] = sum_ij a_ij b_ji.
inline double trace_product(const Matrix& a, const Matrix& b)
{
    if (a.cols() != b.rows() || a.rows() != b.cols()) {
        throw dimension_error("trace_product: dimension mismatch");
    }
    return a.cwiseProduct(b.transpose()).sum();
}

inline double trace_product(const SymOperator& a, const SymOperator& b)
{
    detail::require_dims(a.dim(), b.dim(), "trace_product");
    return trace_product(a.matrix(), b.matrix());
}

} // namespace gexpect
