#include "gexpect/g_normal.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

using namespace gexpect;

namespace {

Matrix diag(std::initializer_list<double> d)
{
    Vector v(static_cast<Eigen::Index>(d.size()));
    Eigen::Index i = 0;
    for (double x : d) {
        v(i++) = x;
    }
    return v.asDiagonal();
}

Matrix random_psd(std::size_t n, std::mt19937_64& rng)
{
    std::normal_distribution<double> z;
    Matrix g(n, n);
    for (auto& x : g.reshaped()) {
        x = z(rng);
    }
    return g * g.transpose() / static_cast<double>(n);
}

// Moments of the Gaussian quadratic form |X|^2 from its cumulants
// kappa_r = 2^{r-1} (r-1)! Tr[Q^r].
double cumulant_moment(const Matrix& q, unsigned m)
{
    const double t1 = q.trace();
    const double t2 = (q * q).trace();
    const double t3 = (q * q * q).trace();
    switch (m) {
    case 1:
        return t1;
    case 2:
        return t1 * t1 + 2.0 * t2;
    case 3:
        return t1 * t1 * t1 + 6.0 * t1 * t2 + 8.0 * t3;
    default:
        throw std::logic_error("cumulant_moment: m <= 3 only");
    }
}

// Independent sampler: plain mt19937 + Cholesky-free root via Eigen's LLT on Q + eps.
double mc_moment(const Matrix& q, unsigned m, std::size_t n, std::uint32_t seed)
{
    Eigen::SelfAdjointEigenSolver<Matrix> es(q);
    const Matrix root = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    std::mt19937 rng(seed);
    std::normal_distribution<double> z;
    Vector zz(q.rows());
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (auto& x : zz) {
            x = z(rng);
        }
        acc += std::pow((root * zz).squaredNorm(), m);
    }
    return acc / static_cast<double>(n);
}

} // namespace

TEST(GaussianEvenMoment, Examples)
{
    const double s2 = 1.7;
    EXPECT_DOUBLE_EQ(gaussian_even_moment(PsdOperator::diagonal(Vector::Constant(1, s2)), 1), s2);
    EXPECT_NEAR(gaussian_even_moment(PsdOperator::diagonal(Vector::Constant(1, s2)), 2), 3.0 * s2 * s2, 1e-12);
    EXPECT_NEAR(gaussian_even_moment(PsdOperator::diagonal(Vector::Constant(1, s2)), 3), 15.0 * s2 * s2 * s2, 1e-11);
    EXPECT_DOUBLE_EQ(gaussian_even_moment(PsdOperator::identity(2), 1), 2.0);
    EXPECT_THROW(gaussian_even_moment(PsdOperator::identity(2), 0), std::domain_error);
}

TEST(GaussianEvenMoment, MatchesCumulantFormula)
{
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 40; ++trial) {
        const Matrix q = random_psd(1 + trial % 6, rng);
        for (unsigned m = 1; m <= 3; ++m) {
            const double want = cumulant_moment(q, m);
            EXPECT_NEAR(gaussian_even_moment(PsdOperator(q), m), want, 1e-10 * want);
        }
    }
}

TEST(GaussianEvenMoment, FourthMomentAgainstMonteCarlo)
{
    const double s2 = 0.8;
    const double mc = mc_moment(Matrix::Constant(1, 1, s2), 2, 1'000'000, 99);
    EXPECT_NEAR(gaussian_even_moment(PsdOperator::diagonal(Vector::Constant(1, s2)), 2), mc, 0.01 * mc);
}

TEST(MomentUpper, Examples)
{
    const auto s = CovarianceSet::from_matrices({diag({1, 2}), diag({2, 0.5})});
    EXPECT_EQ(moment_upper(GNormal(s), 1), 3.0);
    EXPECT_EQ(moment_upper(GNormal(s, 4.0), 1), 4.0 * moment_upper(GNormal(s), 1));
    std::mt19937_64 rng(2);
    const Matrix q = random_psd(3, rng);
    EXPECT_EQ(moment_upper(GNormal(CovarianceSet::singleton(q)), 2), gaussian_even_moment(PsdOperator(q), 2));
}

TEST(MomentBounds, Examples)
{
    const auto m1 = moment_bounds_check(GNormal(CovarianceSet::singleton(diag({0.5, 2.0}))), 1);
    EXPECT_DOUBLE_EQ(m1.lower, 2.5);
    EXPECT_DOUBLE_EQ(m1.value, 2.5);
    EXPECT_DOUBLE_EQ(m1.upper, 2.5);
    EXPECT_TRUE(m1.ok);
    EXPECT_EQ(moment_bound_constant(1), 1.0);

    const double scale = 1.5;
    const auto id = moment_bounds_check(GNormal(CovarianceSet::singleton(diag({1, 1})), scale), 2);
    // J_2 = (Tr Q)^2 + 2 Tr Q^2 = 4 + 4
    EXPECT_NEAR(id.lower, 2.0 * scale * scale, 1e-12);
    EXPECT_NEAR(id.value, 8.0 * scale * scale, 1e-12);
    EXPECT_NEAR(id.upper, 4.0 * scale * scale, 1e-12);
    EXPECT_TRUE(id.ok);

    const auto rank1 = moment_bounds_check(GNormal(CovarianceSet::singleton(diag({1, 0}))), 2);
    EXPECT_NEAR(rank1.lower, 1.0, 1e-12);
    EXPECT_NEAR(rank1.value, 3.0, 1e-12);
    EXPECT_NEAR(rank1.upper, 1.0, 1e-12);
    EXPECT_EQ(moment_bound_constant(2), 3.0);
    EXPECT_TRUE(rank1.ok);
}

TEST(MomentBounds, ConstantTableCertifiedUpToFive)
{
    const double expected[] = {1.0, 3.0, 15.0, 105.0, 945.0};
    for (unsigned m = 1; m <= 5; ++m) {
        EXPECT_NEAR(moment_bound_constant(m), expected[m - 1], 1e-9);
    }
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + trial % 8;
        std::vector<Matrix> ms{random_psd(n, rng), random_psd(n, rng)};
        const GNormal gn(CovarianceSet::from_matrices(ms), 0.5 + trial % 3);
        for (unsigned m = 1; m <= 5; ++m) {
            const auto b = moment_bounds_check(gn, m);
            EXPECT_TRUE(b.ok) << "n=" << n << " m=" << m;
            EXPECT_LE(b.lower, b.value * (1 + 1e-12));
        }
    }
}

TEST(ProjectBand, Examples)
{
    const auto s = CovarianceSet::from_matrices({diag({1, 3}), diag({0.25, 0.1})});
    const auto band = project_band(GNormal(s), HVector::basis(2, 0));
    EXPECT_DOUBLE_EQ(band.sigma_up_sq, 1.0);
    EXPECT_DOUBLE_EQ(band.sigma_down_sq, 0.25);

    Matrix q(2, 2);
    q << 2.0, 0.3, 0.3, 1.0;
    const HVector h(Vector{{0.6, -0.8}});
    const auto lin = project_band(GNormal(CovarianceSet::singleton(q)), h);
    EXPECT_NEAR(lin.sigma_up_sq, h.coords().dot(q * h.coords()), 1e-14);
    EXPECT_NEAR(lin.sigma_down_sq, lin.sigma_up_sq, 1e-14);

    const auto zero = project_band(GNormal(s), HVector::zero(2));
    EXPECT_EQ(zero.sigma_up_sq, 0.0);
    EXPECT_EQ(zero.sigma_down_sq, 0.0);
    EXPECT_THROW(project_band(GNormal(s), HVector::zero(3)), dimension_error);
    EXPECT_THROW(VolatilityBand(0.1, 0.2), std::domain_error);
}

TEST(CovarianceForm, Examples)
{
    std::mt19937_64 rng(6);
    const auto s = CovarianceSet::from_matrices({random_psd(3, rng), random_psd(3, rng)});
    const HVector h(Vector{{0.3, -1.0, 2.0}});
    EXPECT_NEAR(covariance_form(GNormal(s, 2.0), h, h), project_band(GNormal(s, 2.0), h).sigma_up_sq, 1e-12);

    const auto id = CovarianceSet::singleton(Matrix::Identity(2, 2));
    EXPECT_EQ(covariance_form(GNormal(id), HVector(Vector{{1.0, 1.0}}), HVector(Vector{{1.0, -1.0}})), 0.0);

    Matrix c(2, 2);
    c << 1.0, 0.5, 0.5, 1.0;
    const auto two = CovarianceSet::from_matrices({c, Matrix::Identity(2, 2)});
    EXPECT_DOUBLE_EQ(covariance_form(GNormal(two), HVector::basis(2, 0), HVector::basis(2, 1)), std::max(0.5, 0.0));
}

TEST(SampleGaussian, DeterminismAndLaw)
{
    for (const auto& x : sample_gaussian(PsdOperator::zero(3), 50, 1)) {
        EXPECT_TRUE(x.coords().isZero(0.0));
    }
    const auto a = sample_gaussian(PsdOperator::identity(2), 3000, 42);
    const auto b = sample_gaussian(PsdOperator::identity(2), 3000, 42);
    ASSERT_EQ(a.size(), 3000u);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].coords(), b[i].coords());
    }

    const std::size_t n = 100'000;
    const auto draws = sample_gaussian(PsdOperator::identity(2), n, 7);
    Matrix cov = Matrix::Zero(2, 2);
    for (const auto& x : draws) {
        cov += x.coords() * x.coords().transpose();
    }
    cov /= static_cast<double>(n);
    EXPECT_LT((cov - Matrix::Identity(2, 2)).norm(), 0.02);
}

TEST(SampleGaussian, ThreadCountDoesNotChangeDraws)
{
    set_thread_limit(1);
    const auto one = sample_gaussian(PsdOperator::identity(3), 5000, 3);
    set_thread_limit(4);
    const auto four = sample_gaussian(PsdOperator::identity(3), 5000, 3);
    set_thread_limit(0);
    for (std::size_t i = 0; i < one.size(); ++i) {
        EXPECT_EQ(one[i].coords(), four[i].coords());
    }
}

TEST(SampleGaussian, CsvDump)
{
    std::ostringstream os;
    write_samples_csv(os, sample_gaussian(PsdOperator::identity(2), 3, 1));
    const std::string text = os.str();
    EXPECT_EQ(text.substr(0, 6), "x0,x1\n");
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);
}

TEST(StaticUpperExpectation, Examples)
{
    const auto s = CovarianceSet::from_matrices({diag({1.0, 0.2}), diag({0.3, 0.9})});
    const GNormal gn(s, 1.3);
    const HVector h(Vector{{1.0, 0.5}});
    const auto band = project_band(gn, h);

    const auto sq = static_upper_expectation(gn, [&](const Vector& x) { return std::pow(x.dot(h.coords()), 2); }, 100'000, 5);
    EXPECT_NEAR(sq.value, band.sigma_up_sq, 3.0 * sq.std_error);

    const auto c = static_upper_expectation(gn, [](const Vector&) { return 0.1; }, 100'000, 5);
    EXPECT_EQ(c.value, 0.1);

    const auto lin = static_upper_expectation(gn, [&](const Vector& x) { return x.dot(h.coords()); }, 100'000, 5);
    EXPECT_LE(std::abs(lin.value), 3.0 * lin.std_error);
}

TEST(StaticUpperExpectation, SublinearLawsWithSharedSeeds)
{
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t n = 1 + trial % 3;
        const GNormal gn(CovarianceSet::from_matrices({random_psd(n, rng), random_psd(n, rng)}));
        Vector c1(n), c2(n);
        for (std::size_t i = 0; i < n; ++i) {
            c1(i) = u(rng);
            c2(i) = u(rng);
        }
        auto f = [&](const Vector& x) { return std::pow(x.dot(c1), 2) - x.dot(c2); };
        auto g = [&](const Vector& x) { return std::cos(x.dot(c2)) + x.dot(c1); };
        const std::uint64_t seed = 1000 + trial;
        const std::size_t m = 4000;
        const double vf = static_upper_expectation(gn, f, m, seed).value;
        const double vg = static_upper_expectation(gn, g, m, seed).value;
        const double vfg = static_upper_expectation(gn, [&](const Vector& x) { return f(x) + g(x); }, m, seed).value;
        EXPECT_LE(vfg, vf + vg + 1e-10);
        const double vmax = static_upper_expectation(gn, [&](const Vector& x) { return std::max(f(x), g(x)); }, m, seed).value;
        EXPECT_GE(vmax, std::max(vf, vg) - 1e-12);
        const double lambda = 2.5;
        const double vl = static_upper_expectation(gn, [&](const Vector& x) { return lambda * f(x); }, m, seed).value;
        EXPECT_NEAR(vl, lambda * vf, 1e-10 * (1.0 + std::abs(vf)));
    }
}

TEST(StaticUpperExpectation, ConvolutionStabilityOfIndependentCopies)
{
    const auto s = CovarianceSet::from_matrices({diag({1.0, 0.3}), diag({0.4, 1.2})});
    const GNormal gn(s);
    const HVector h(Vector{{0.7, 0.7}});
    const double a = 1.5;
    const double b = 0.8;
    const double norm = std::sqrt(a * a + b * b);
    const std::size_t n = 100'000;

    // independent copies under each constant covariance; sup over extremes
    double best = 0.0;
    double best_se = 0.0;
    for (const auto& q : s.extremes()) {
        const auto x = sample_gaussian(q, n, 11);
        const auto xbar = sample_gaussian(q, n, 12);
        MomentAccumulator acc;
        for (std::size_t i = 0; i < n; ++i) {
            acc.add(std::pow(((a * x[i].coords() + b * xbar[i].coords()) / norm).dot(h.coords()), 2));
        }
        if (acc.mean() > best) {
            best = acc.mean();
            best_se = acc.std_error();
        }
    }
    EXPECT_NEAR(best, project_band(gn, h).sigma_up_sq, 3.0 * best_se);
}
