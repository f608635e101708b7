#include "oodbench/detectors.hpp"
#include "oodbench/kernels.hpp"
#include "oodbench/metrics.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>

using namespace oodbench;

namespace {

Matrix rows(std::initializer_list<std::initializer_list<double>> r) {
    Matrix m(static_cast<Index>(r.size()), static_cast<Index>(r.begin()->size()));
    Index i = 0;
    for (const auto& row : r) {
        Index j = 0;
        for (double v : row) m(i, j++) = v;
        ++i;
    }
    return m;
}

LabeledSplits toy(ToyKind kind, Index n = 400) {
    return generate_toy(ToySpec::make_default(kind), 17, {n, n, 2 * n});
}

void expect_round_trip(const Detector& det, const Matrix& pts) {
    const auto bytes = serialize(det);
    const auto back = deserialize(bytes);
    ASSERT_TRUE(back);
    EXPECT_EQ(back->kind(), det.kind());
    const Vector a = det.score(pts);
    const Vector b = back->score(pts);
    EXPECT_TRUE(a.isApprox(b, 1e-12)) << det.kind();
}

/// Latent GP variance k** - k'(K + s I)^-1 k computed densely.
Vector dense_gp_variance(const Matrix& inputs, double lengthscale, double sv, double noise, const Matrix& query) {
    const Index n = inputs.rows();
    Matrix kmat(n, n);
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < n; ++j) {
            kmat(i, j) = sv * std::exp(-(inputs.row(i) - inputs.row(j)).squaredNorm() / (2 * lengthscale * lengthscale));
        }
    }
    kmat.diagonal().array() += noise;
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(kmat);
    Vector out(query.rows());
    for (Index q = 0; q < query.rows(); ++q) {
        Eigen::VectorXd k(n);
        for (Index i = 0; i < n; ++i) {
            k[i] = sv * std::exp(-(query.row(q) - inputs.row(i)).squaredNorm() / (2 * lengthscale * lengthscale));
        }
        out[q] = sv - k.dot(ldlt.solve(k));
    }
    return out;
}

}  // namespace

// --- Mahalanobis -----------------------------------------------------------

TEST(Mahalanobis, ZeroAtTheMean) {
    const auto data = toy(ToyKind::Haystack);
    const auto md = fit_mahalanobis(data.train.points);
    EXPECT_NEAR(md.score(md.mean().transpose())[0], 0.0, 1e-12);
}

TEST(Mahalanobis, SquareCornersByHand) {
    const auto md = fit_mahalanobis(rows({{0, 0}, {2, 0}, {0, 2}, {2, 2}}));
    // The stored covariance carries a ridge of 1e-6 times its mean variance.
    EXPECT_NEAR(md.covariance()(0, 0), 4.0 / 3.0, 2e-6);
    EXPECT_NEAR(md.covariance()(0, 1), 0.0, 1e-12);
    EXPECT_NEAR(md.score(rows({{3, 1}}))[0], std::sqrt(3.0), 1e-5);
}

TEST(Mahalanobis, IdentityCovarianceIsEuclidean) {
    const auto md = MahalanobisModel::from_moments(Vector::Zero(4), Matrix::Identity(4, 4));
    EXPECT_NEAR(md.score(rows({{3, 4, 0, 0}}))[0], 5.0, 1e-5);
}

// --- LOF -------------------------------------------------------------------

TEST(Lof, InlierScoreNearOne) {
    Matrix grid(400, 2);
    for (Index i = 0; i < 20; ++i) {
        for (Index j = 0; j < 20; ++j) grid.row(i * 20 + j) << 0.1 * i, 0.1 * j;
    }
    const auto lof = fit_lof(grid, 10);
    const double s = lof.score(grid.row(210))[0];
    EXPECT_GE(s, 0.8);
    EXPECT_LE(s, 1.2);
}

TEST(Lof, CollinearPointsMatchTheDefinition) {
    const Matrix train = rows({{0, 0}, {1, 0}, {2, 0}, {3, 0}, {4, 0}});
    const auto lof = fit_lof(train, 2);
    const std::vector<std::vector<double>> pts{{0, 0}, {1, 0}, {2, 0}, {3, 0}, {4, 0}};
    EXPECT_NEAR(lof.score(rows({{10, 0}}))[0], oracle::lof(pts, {10, 0}, 2), 1e-12);
    EXPECT_NEAR(lof.score(rows({{2.4, 0.3}}))[0], oracle::lof(pts, {2.4, 0.3}, 2), 1e-12);
}

TEST(Lof, RandomQueriesMatchTheDefinition) {
    Rng rng(4);
    Matrix train(40, 3);
    std::vector<std::vector<double>> pts;
    for (Index i = 0; i < 40; ++i) {
        std::vector<double> p;
        for (Index d = 0; d < 3; ++d) {
            train(i, d) = rng.normal();
            p.push_back(train(i, d));
        }
        pts.push_back(p);
    }
    const auto lof = fit_lof(train, 5);
    for (int q = 0; q < 10; ++q) {
        const std::vector<double> query{2 * rng.normal(), 2 * rng.normal(), 2 * rng.normal()};
        EXPECT_NEAR(lof.score(rows({{query[0], query[1], query[2]}}))[0], oracle::lof(pts, query, 5), 1e-10);
    }
}

// --- GP / nc-GP ------------------------------------------------------------

TEST(Gp, InterpolationLimitAtSubsampledInputs) {
    const auto data = toy(ToyKind::Line);
    GpOptions o;
    o.noise_variance = 1e-2;
    const auto gp = fit_gp(data.train, o, 3);
    const Matrix z = gp.regressor().inputs();
    EXPECT_EQ(z.rows(), 40);
    const Vector var = gp.regressor().predict_latent_variance(z);
    EXPECT_LE(var.maxCoeff(), o.noise_variance + 1e-6);
    // Same check through the public scoring path.
    Matrix x = z;
    for (Index i = 0; i < x.rows(); ++i) {
        x.row(i) = (z.row(i).array() * gp.standardizer().scale.transpose().array() +
                    gp.standardizer().mean.transpose().array()).matrix();
    }
    EXPECT_LE(gp.predictive_variance(x).maxCoeff(), o.noise_variance + 1e-6);
}

TEST(Gp, VarianceMatchesDenseSolve) {
    const auto data = toy(ToyKind::Circle);
    GpOptions o;
    o.lengthscale = 0.7;
    const auto gp = fit_gp(data.train, o, 9);
    const Matrix q = data.test.points.topRows(25);
    const auto& kern = gp.regressor().kernel();
    const Vector want = dense_gp_variance(gp.regressor().inputs(), kern.lengthscale, kern.signal_variance,
                                          o.noise_variance, gp.standardizer().apply(q));
    EXPECT_LT((gp.predictive_variance(q) - want).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Gp, MarginalLikelihoodPicksALengthscaleNoWorseThanTheAnchor) {
    Rng rng(2);
    Matrix x(60, 1);
    Matrix y(60, 1);
    for (Index i = 0; i < 60; ++i) {
        x(i, 0) = rng.uniform(-3, 3);
        y(i, 0) = std::sin(2.0 * x(i, 0)) + 0.05 * rng.normal();
    }
    const Vector noise = Vector::Constant(60, 0.01);
    const double anchor = 3.0;
    const double chosen = select_lengthscale(x, y, 1.0, noise, anchor);
    const double at_anchor = GpRegressor::fit(x, y, {anchor, 1.0}, noise).log_marginal_likelihood();
    const double at_chosen = GpRegressor::fit(x, y, {chosen, 1.0}, noise).log_marginal_likelihood();
    EXPECT_GE(at_chosen, at_anchor);
    EXPECT_LT(chosen, anchor);
}

TEST(NcGp, DegenerateAugmentationIsAGpOnDuplicatedData) {
    const auto data = toy(ToyKind::Line);
    NcGpOptions o;
    o.noise_scale = 0.0;
    o.lengthscale = 0.8;
    // Pseudo-point noise is relative to the signal variance; pick it so the
    // absolute value equals the base noise.
    const double sv = fit_ncgp(data.train, o, 5).regressor().kernel().signal_variance;
    o.pseudo_noise_variance = o.noise_variance / sv;
    const auto nc = fit_ncgp(data.train, o, 5);
    const Matrix inputs = nc.regressor().inputs();
    const Index s = inputs.rows() / 2;
    ASSERT_TRUE(inputs.topRows(s) == inputs.bottomRows(s));
    const Matrix q = data.test.points.topRows(30);
    const auto& kern = nc.regressor().kernel();
    const Vector want =
        dense_gp_variance(inputs, kern.lengthscale, kern.signal_variance, o.noise_variance, nc.standardizer().apply(q));
    EXPECT_LT((nc.score(q) - want.cwiseMax(0.0).cwiseSqrt()).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(NcGp, PseudoPointsRaiseVariance) {
    for (auto kind : {ToyKind::Line, ToyKind::Circle, ToyKind::Haystack}) {
        const auto data = toy(kind);
        const auto gp = fit_gp(data.train, {}, 5);
        const auto nc = fit_ncgp(data.train, {}, 5);
        const Matrix z = nc.regressor().inputs();
        const Index s = z.rows() / 2;
        ASSERT_TRUE(z.topRows(s) == gp.regressor().inputs());
        Matrix pseudo = z.bottomRows(s);
        for (Index i = 0; i < pseudo.rows(); ++i) {
            pseudo.row(i) = (pseudo.row(i).array() * nc.standardizer().scale.transpose().array() +
                             nc.standardizer().mean.transpose().array()).matrix();
        }
        const Vector a = nc.predictive_variance(pseudo);
        const Vector b = gp.predictive_variance(pseudo);
        for (Index i = 0; i < s; ++i) EXPECT_GE(a[i], b[i]) << to_string(kind) << " pseudo-point " << i;
    }
}

// --- PCA -------------------------------------------------------------------

TEST(Pca, DiagonalLineByHand) {
    const auto pca = fit_pca_trunc(rows({{-1, -1}, {1, 1}, {-1, -1}, {1, 1}}), 0.95);
    EXPECT_EQ(pca.retained(), 1);
    EXPECT_NEAR(std::abs(pca.components()(0, 0)), 1.0 / std::sqrt(2.0), 1e-12);
    EXPECT_NEAR(pca.score(rows({{0.3, 0.3}}))[0], 0.0, 1e-12);
    EXPECT_NEAR(pca.score(rows({{1, -1}}))[0], 2.0, 1e-12);
}

TEST(Pca, ConstantFeatureIsHandled) {
    const auto data = toy(ToyKind::Haystack);
    const auto pca = fit_pca_trunc(data.train.points, 0.95);
    EXPECT_TRUE(pca.score(data.test.points).allFinite());
}

// --- Auto-associative network ---------------------------------------------

TEST(AutoAssoc, BackpropMatchesFiniteDifferences) {
    Rng rng(12);
    const Index d = 10;
    Mlp net({d, 16, 1, 16, d}, {Activation::Tanh, Activation::Tanh, Activation::Tanh, Activation::Identity}, rng);
    Matrix x(5, d);
    for (Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    const Vector w = Vector::Ones(5);
    Mlp::Gradients grads;
    net.loss_and_gradients(x, x, w, Loss::MeanSquared, 1e-4, grads);
    const Vector analytic = Mlp::flatten(grads);
    Mlp probe = net;
    auto f = [&](const Vector& p) {
        probe.set_parameters(p);
        return probe.loss(x, x, w, Loss::MeanSquared, 1e-4);
    };
    const Vector numeric = oracle::numeric_gradient(f, net.parameters());
    EXPECT_LT(oracle::max_relative_error(analytic, numeric), 1e-4);
}

TEST(AutoAssoc, TrainsToALowLineError) {
    const auto data = toy(ToyKind::Line);
    AutoAssocOptions o;
    o.train.max_epochs = 300;
    const auto aa = fit_autoassoc(data.train.points, o, 1);
    const Vector train_scores = aa.score(data.train.points);
    const Vector ref = reference_ood_score(ToySpec::line_default(), data.train.points);
    std::vector<double> s(train_scores.data(), train_scores.data() + train_scores.size());
    std::vector<double> r(ref.size());
    for (Index i = 0; i < ref.size(); ++i) r[static_cast<std::size_t>(i)] = ref[i] * ref[i];
    std::nth_element(s.begin(), s.begin() + s.size() / 2, s.end());
    std::nth_element(r.begin(), r.begin() + r.size() / 2, r.end());
    EXPECT_LT(s[s.size() / 2], 10.0 * r[r.size() / 2] + 1e-3);
    EXPECT_TRUE(std::isfinite(aa.report().final_loss));
}

TEST(MdAa, ScoreGrowsAlongAFixedErrorDirection) {
    const auto data = toy(ToyKind::Haystack, 200);
    AutoAssocOptions o;
    o.train.max_epochs = 50;
    auto aa = std::make_shared<const AutoAssocModel>(fit_autoassoc(data.train.points, o, 2));
    const auto md = fit_md_aa(data.train.points, aa);
    const Vector e = Vector::LinSpaced(data.train.dims(), 0.1, 1.0);
    double last = -1.0;
    for (double scale : {1.0, 1.5, 2.0, 4.0}) {
        const double s = md.error_model().score((scale * e).transpose())[0];
        EXPECT_GT(s, last);
        last = s;
    }
}

TEST(AaGp, InterpolatesItsSubsample) {
    const auto data = toy(ToyKind::Line, 150);
    GpOptions o;
    o.subsample_fraction = 1.0;
    const auto m = fit_aa_gp(data.train.points, o, 4);
    EXPECT_LE(m.score(data.train.points).maxCoeff(), 2.0 * o.noise_variance * 10.0);
}

// --- Calibration -----------------------------------------------------------

TEST(Calibration, UpperTailFraction) {
    Vector v(4);
    v << 3, 1, 4, 2;
    const Calibrator cal(v);
    EXPECT_DOUBLE_EQ(cal.confidence(2.5), 0.5);
    EXPECT_DOUBLE_EQ(cal.confidence(0.0), 1.0);
    EXPECT_DOUBLE_EQ(cal.confidence(9.0), 0.0);
    EXPECT_DOUBLE_EQ(cal.confidence(2.0), 0.75);
}

TEST(Calibration, ValidationMeanAndMonotonicity) {
    Rng rng(1);
    for (Index n : {1, 2, 7, 100, 1001}) {
        Vector v(n);
        for (Index i = 0; i < n; ++i) v[i] = rng.normal();
        const Calibrator cal(v);
        const Vector c = cal.confidence(v);
        EXPECT_NEAR(c.mean(), (n + 1.0) / (2.0 * n), 1e-9);
        Vector q = Vector::LinSpaced(500, -4, 4);
        const Vector cq = cal.confidence(q);
        for (Index i = 1; i < q.size(); ++i) EXPECT_LE(cq[i], cq[i - 1]);
    }
}

// --- Serialization ---------------------------------------------------------

TEST(Detectors, SerializeRoundTrip) {
    const auto line = toy(ToyKind::Line, 200);
    const Matrix& x = line.train.points;
    const Matrix& q = line.test.points;
    expect_round_trip(ReferenceDetector(ToySpec::line_default()), q);
    expect_round_trip(fit_mahalanobis(x), q);
    expect_round_trip(fit_lof(x, 10), q);
    expect_round_trip(fit_ocsvm(x), q);
    expect_round_trip(fit_gp(line.train, {}, 1), q);
    expect_round_trip(fit_ncgp(line.train, {}, 1), q);
    expect_round_trip(fit_pca_trunc(x), q);
    AutoAssocOptions o;
    o.train.max_epochs = 20;
    auto aa = std::make_shared<const AutoAssocModel>(fit_autoassoc(x, o, 1));
    expect_round_trip(*aa, q);
    expect_round_trip(fit_md_aa(x, aa), q);
    GpOptions g;
    g.subsample_fraction = 0.2;
    expect_round_trip(fit_aa_gp(x, g, 1), q);
    EXPECT_ANY_THROW(deserialize(std::vector<std::uint8_t>{1, 2, 3}));
}

TEST(Detectors, FitsAreDeterministic) {
    const auto data = toy(ToyKind::Circle, 200);
    EXPECT_TRUE(fit_gp(data.train, {}, 8).score(data.test.points) == fit_gp(data.train, {}, 8).score(data.test.points));
    AutoAssocOptions o;
    o.train.max_epochs = 20;
    EXPECT_TRUE(fit_autoassoc(data.train.points, o, 8).score(data.test.points) ==
                fit_autoassoc(data.train.points, o, 8).score(data.test.points));
}
