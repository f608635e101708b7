#include "oodbench/detectors.hpp"
#include "oodbench/kernels.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace oodbench;

namespace {

Matrix random_points(Index n, std::uint64_t seed) {
    Rng rng(seed);
    Matrix m(n, 2);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
}

double dual_objective(const Matrix& k, const Vector& a) { return 0.5 * a.dot(k * a); }

}  // namespace

TEST(OcSvm, TenPointDualMatchesQpOracle) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        for (double nu : {0.2, 0.5, 0.8}) {
            const Matrix x = random_points(10, seed);
            const Matrix k = kernels::rbf(x, x, 1.0, 1.0);
            const OcSvmDual dual = solve_ocsvm_dual(k, nu, 1e-10, 1'000'000);
            ASSERT_TRUE(dual.converged);
            const Vector want = oracle::ocsvm_dual_qp(k, nu);
            EXPECT_LT((dual.alpha - want).cwiseAbs().maxCoeff(), 1e-3) << "seed " << seed << " nu " << nu;
            EXPECT_NEAR(dual.alpha.sum(), 1.0, 1e-12);
            EXPECT_LE(dual_objective(k, dual.alpha), dual_objective(k, want) + 1e-9);
        }
    }
}

TEST(OcSvm, KktConditionsHold) {
    const Matrix x = random_points(60, 7);
    const Matrix k = kernels::rbf(x, x, 0.8, 1.0);
    const double nu = 0.3;
    const OcSvmDual dual = solve_ocsvm_dual(k, nu, 1e-8, 1'000'000);
    const double cap = 1.0 / (nu * 60.0);
    const Vector g = k * dual.alpha;
    for (Index i = 0; i < 60; ++i) {
        const double a = dual.alpha[i];
        ASSERT_GE(a, -1e-15);
        ASSERT_LE(a, cap + 1e-15);
        if (a < 1e-12) EXPECT_GE(g[i], dual.rho - 1e-6);
        if (a > cap - 1e-12) EXPECT_LE(g[i], dual.rho + 1e-6);
        if (a > 1e-12 && a < cap - 1e-12) EXPECT_NEAR(g[i], dual.rho, 1e-6);
    }
}

TEST(OcSvm, NuBoundsTheTrainingOutlierFraction) {
    for (auto kind : {ToyKind::Line, ToyKind::Circle, ToyKind::Haystack}) {
        const auto data = generate_toy(ToySpec::make_default(kind), 3, {600, 10, 10});
        for (double nu : {0.1, 0.5}) {
            OcSvmOptions o;
            o.nu = nu;
            const auto m = fit_ocsvm(data.train.points, o);
            EXPECT_TRUE(m.converged());
            const Vector f = m.decision_function(data.train.points);
            const double outliers = (f.array() < 0.0).cast<double>().mean();
            EXPECT_LE(outliers, nu + 0.05) << to_string(kind) << " nu " << nu;
            // At least a nu share of points are support vectors.
            EXPECT_GE(static_cast<double>(m.support_vectors().rows()) / 600.0, nu - 0.05);
        }
    }
}

TEST(OcSvm, ReflectionSymmetricTrainingGivesSymmetricScores) {
    Matrix half = random_points(40, 9);
    Matrix x(80, 2);
    x.topRows(40) = half;
    x.bottomRows(40) = half;
    x.bottomRows(40).col(0) *= -1.0;
    const auto m = fit_ocsvm(x);
    Matrix q = random_points(30, 10);
    Matrix mirrored = q;
    mirrored.col(0) *= -1.0;
    EXPECT_LT((m.score(q) - m.score(mirrored)).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(OcSvm, LargeProblemsUseOnDemandKernelRows) {
    const auto data = generate_toy(ToySpec::line_default(), 1, {6000, 10, 10});
    OcSvmOptions o;
    o.nu = 0.5;
    const auto m = fit_ocsvm(data.train.points, o);
    EXPECT_TRUE(m.converged());
    const double outliers = (m.decision_function(data.train.points).array() < 0.0).cast<double>().mean();
    EXPECT_LE(outliers, 0.55);
}

TEST(OcSvm, InvalidNuIsRejected) {
    const Matrix x = random_points(10, 1);
    OcSvmOptions o;
    o.nu = 0.0;
    EXPECT_THROW(fit_ocsvm(x, o), InvalidArgument);
    o.nu = 1.5;
    EXPECT_THROW(fit_ocsvm(x, o), InvalidArgument);
}
