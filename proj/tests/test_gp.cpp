/*
 * Copyright 2026 The pgpe Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *
 */

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "pgpe/gp.hpp"
#include "pgpe/kernels.hpp"
#include "pgpe/optimize.hpp"

namespace pgpe {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---- kernels ---------------------------------------------------------------

TEST(FeatureGrouping, FromTagsRelabelsInOrderOfAppearance)
{
    const auto g = FeatureGrouping::from_tags({3, 3, 1, 1, 1, 7});
    EXPECT_EQ(g.n_groups(), 3);
    EXPECT_EQ(g.labels(), (std::vector<int>{0, 0, 1, 1, 1, 2}));
}

TEST(FeatureGrouping, RejectsGapsInLabels)
{
    EXPECT_THROW(FeatureGrouping(std::vector<int>{0, 2}), std::invalid_argument);
    EXPECT_THROW(FeatureGrouping(std::vector<int>{}), std::invalid_argument);
}

TEST(Kernel, IdenticalInputsGiveSignalVariance)
{
    Hyperparams<double> hp = Hyperparams<double>::isotropic(0.3, std::log(2.5), std::log(0.1));
    const auto g = FeatureGrouping::isotropic(3);
    VectorXd x(3);
    x << 0.1, -2.0, 4.0;
    EXPECT_DOUBLE_EQ(kernel_value(x, x, hp, g), 2.5);
}

TEST(Kernel, MatchesLoopOracleAndIsSymmetric)
{
    std::mt19937_64 rng(11);
    for (int rep = 0; rep < 20; ++rep) {
        const auto in = oracle::random_instance(rng);
        const MatrixXd K = kernel_matrix(in.X, in.hp, in.grouping);
        const MatrixXd ref = oracle::rbf(in.X, in.X, oracle::expand_lengthscales(in.hp, in.grouping), in.hp.signal_var());
        EXPECT_LT((K - ref).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_EQ(K, K.transpose());
        const MatrixXd C = kernel_matrix(in.X, in.Xh, in.hp, in.grouping);
        if (in.Xh.rows() > 0) {
            const MatrixXd Cref = oracle::rbf(in.X, in.Xh, oracle::expand_lengthscales(in.hp, in.grouping), in.hp.signal_var());
            EXPECT_LT((C - Cref).cwiseAbs().maxCoeff(), 1e-12);
        }
    }
}

TEST(Kernel, IsPositiveSemidefinite)
{
    std::mt19937_64 rng(5);
    for (int rep = 0; rep < 20; ++rep) {
        const auto in = oracle::random_instance(rng);
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(kernel_matrix(in.X, in.hp, in.grouping));
        EXPECT_GT(es.eigenvalues().minCoeff(), -1e-10);
    }
}

TEST(Kernel, MismatchedHyperparametersThrow)
{
    Hyperparams<double> hp = Hyperparams<double>::isotropic(0.0, 0.0, 0.0);
    MatrixXd X = MatrixXd::Random(4, 3);
    EXPECT_THROW(kernel_matrix(X, hp, FeatureGrouping::per_dimension(3)), std::invalid_argument);
    EXPECT_THROW(kernel_matrix(X, hp, FeatureGrouping::isotropic(2)), std::invalid_argument);
}

TEST(Kernel, GradientsMatchFiniteDifferences)
{
    std::mt19937_64 rng(3);
    const auto in = oracle::random_instance(rng);
    const auto grads = kernel_gradients(in.X, in.hp, in.grouping);
    ASSERT_EQ(static_cast<Index>(grads.size()), in.hp.size());
    const VectorXd theta = in.hp.to_vector();
    for (Index p = 0; p < theta.size(); ++p) {
        auto noisy = [&](const VectorXd& t) {
            const auto hp = Hyperparams<double>::from_vector(t);
            MatrixXd K = kernel_matrix(in.X, hp, in.grouping);
            K.diagonal().array() += hp.noise_var();
            return K;
        };
        VectorXd a = theta, b = theta;
        a(p) += 1e-6;
        b(p) -= 1e-6;
        const MatrixXd fd = (noisy(a) - noisy(b)) / 2e-6;
        EXPECT_LT((fd - grads[static_cast<std::size_t>(p)]).cwiseAbs().maxCoeff(), 1e-6) << "parameter " << p;
    }
}

TEST(RobustCholesky, NoJitterForWellConditionedMatrix)
{
    MatrixXd A(2, 2);
    A << 4, 1, 1, 3;
    const auto c = robust_cholesky(A);
    EXPECT_EQ(c.jitter, 0.0);
    EXPECT_LT((c.lower * c.lower.transpose() - A).norm(), 1e-12);
    EXPECT_NEAR(c.log_det(), std::log(11.0), 1e-12);
}

TEST(RobustCholesky, EscalatesJitterForSingularMatrix)
{
    const MatrixXd A = MatrixXd::Ones(5, 5);  // rank one
    const auto c = robust_cholesky(A);
    EXPECT_GT(c.jitter, 0.0);
    EXPECT_LE(c.jitter, 1e-2 * 1.0 + 1e-15);
}

TEST(RobustCholesky, ThrowsWhenJitterIsExhausted)
{
    MatrixXd A = MatrixXd::Identity(3, 3);
    A(0, 0) = -5.0;
    EXPECT_THROW(robust_cholesky(A), NumericError);
    A(0, 0) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(robust_cholesky(A), NumericError);
}

TEST(RobustCholesky, SolveMatchesDenseInverse)
{
    std::mt19937_64 rng(2);
    const auto in = oracle::random_instance(rng);
    MatrixXd K = kernel_matrix(in.X, in.hp, in.grouping);
    K.diagonal().array() += in.hp.noise_var();
    const auto c = robust_cholesky(K);
    EXPECT_LT((c.solve(in.Y) - K.inverse() * in.Y).cwiseAbs().maxCoeff(), 1e-9);
}

// ---- optimizer -------------------------------------------------------------

TEST(MinimizeCg, SolvesIllConditionedQuadratic)
{
    VectorXd scale(3);
    scale << 1.0, 10.0, 100.0;
    VectorXd target(3);
    target << 1.0, -2.0, 0.5;
    auto f = [&](const VectorXd& x, VectorXd& g) {
        const VectorXd d = x - target;
        g = scale.cwiseProduct(d);
        return 0.5 * d.dot(scale.cwiseProduct(d));
    };
    CgOptions opt;
    opt.gradient_tolerance = 1e-10;
    opt.max_iterations = 500;
    const VectorXd lo = VectorXd::Constant(3, -10), hi = VectorXd::Constant(3, 10);
    const auto r = minimize_cg<double>(f, VectorXd::Zero(3), opt, lo, hi);
    EXPECT_TRUE(r.converged);
    EXPECT_LT((r.x - target).norm(), 1e-8);
}

TEST(MinimizeCg, FindsRosenbrockMinimum)
{
    auto f = [](const VectorXd& x, VectorXd& g) {
        const double a = 1.0 - x(0), b = x(1) - x(0) * x(0);
        g.resize(2);
        g(0) = -2.0 * a - 400.0 * x(0) * b;
        g(1) = 200.0 * b;
        return a * a + 100.0 * b * b;
    };
    CgOptions opt;
    opt.max_iterations = 5000;
    opt.gradient_tolerance = 1e-8;
    const VectorXd lo = VectorXd::Constant(2, -5), hi = VectorXd::Constant(2, 5);
    VectorXd x0(2);
    x0 << -1.2, 1.0;
    const auto r = minimize_cg<double>(f, x0, opt, lo, hi);
    EXPECT_NEAR(r.x(0), 1.0, 1e-4);
    EXPECT_NEAR(r.x(1), 1.0, 1e-4);
}

TEST(MinimizeCg, RespectsBoxAndStopsAtActiveBound)
{
    auto f = [](const VectorXd& x, VectorXd& g) {
        g = 2.0 * (x.array() - 5.0).matrix();
        return (x.array() - 5.0).square().sum();
    };
    const VectorXd lo = VectorXd::Constant(2, -1), hi = VectorXd::Constant(2, 2);
    const auto r = minimize_cg<double>(f, VectorXd::Zero(2), CgOptions{}, lo, hi);
    EXPECT_TRUE(r.converged);
    EXPECT_DOUBLE_EQ(r.x(0), 2.0);
    EXPECT_DOUBLE_EQ(r.x(1), 2.0);
}

TEST(MinimizeCg, TraceIsNonIncreasing)
{
    std::mt19937_64 rng(8);
    const auto in = oracle::random_instance(rng);
    const MatrixXd Yc = in.Y.rowwise() - in.Y.colwise().mean();
    auto f = [&](const VectorXd& t, VectorXd& g) {
        const auto hp = Hyperparams<double>::from_vector(t);
        g = nlml_grad(hp, in.grouping, in.X, Yc);
        return nlml(hp, in.grouping, in.X, Yc);
    };
    const VectorXd lo = VectorXd::Constant(in.hp.size(), -9), hi = VectorXd::Constant(in.hp.size(), 9);
    const auto r = minimize_cg<double>(f, in.hp.to_vector(), CgOptions{}, lo, hi);
    for (std::size_t i = 1; i < r.trace.size(); ++i) EXPECT_LE(r.trace[i], r.trace[i - 1] + 1e-12);
}

// ---- GP --------------------------------------------------------------------

TEST(Nlml, MatchesDenseFormula)
{
    std::mt19937_64 rng(21);
    for (int rep = 0; rep < 30; ++rep) {
        const auto in = oracle::random_instance(rng);
        const MatrixXd Yc = in.Y.rowwise() - in.Y.colwise().mean();
        EXPECT_LT(oracle::rel_err(nlml(in.hp, in.grouping, in.X, Yc), oracle::nlml(in.hp, in.grouping, in.X, Yc)), 1e-10);
    }
}

TEST(Nlml, GradientMatchesFiniteDifferencesOfDenseOracle)
{
    std::mt19937_64 rng(22);
    for (int rep = 0; rep < 10; ++rep) {
        const auto in = oracle::random_instance(rng);
        const MatrixXd Yc = in.Y.rowwise() - in.Y.colwise().mean();
        const VectorXd g = nlml_grad(in.hp, in.grouping, in.X, Yc);
        const VectorXd fd = oracle::finite_difference(
            [&](const VectorXd& t) { return oracle::nlml(Hyperparams<double>::from_vector(t), in.grouping, in.X, Yc); },
            in.hp.to_vector());
        EXPECT_LT(oracle::max_rel_err(g, fd, 1e-3), 1e-5);
    }
}

TEST(Nlml, EmptyOrMismatchedInputsThrow)
{
    Hyperparams<double> hp = Hyperparams<double>::isotropic(0, 0, 0);
    const auto g = FeatureGrouping::isotropic(2);
    EXPECT_THROW(nlml(hp, g, MatrixXd(0, 2), MatrixXd(0, 1)), std::invalid_argument);
    EXPECT_THROW(nlml(hp, g, MatrixXd(MatrixXd::Zero(3, 2)), MatrixXd(MatrixXd::Zero(2, 1))), std::invalid_argument);
}

TEST(PredictSgp, MatchesDenseInverse)
{
    std::mt19937_64 rng(23);
    for (int rep = 0; rep < 30; ++rep) {
        const auto in = oracle::random_instance(rng);
        const auto m = make_gp_model(in.hp, in.grouping, in.X, in.Y, true);
        const auto f = predict_sgp(m, in.xs);
        const auto ref = oracle::sgp(in.X, in.Y, in.hp, in.grouping, in.xs);
        EXPECT_LT(oracle::max_rel_err(f.mean, ref.mean), 1e-9);
        EXPECT_LT(oracle::rel_err(f.variance, ref.variance), 1e-8);
    }
}

TEST(PredictSgp, InterpolatesTrainingTargetsWithTinyNoise)
{
    MatrixXd X(3, 1);
    X << -1, 0, 1;
    MatrixXd Y(3, 1);
    Y << 1, 2, 3;
    const auto hp = Hyperparams<double>::isotropic(0.0, 0.0, std::log(1e-8));
    const auto m = make_gp_model(hp, FeatureGrouping::isotropic(1), X, Y, true);
    for (Index i = 0; i < 3; ++i) {
        const auto f = predict_sgp(m, X.row(i).transpose());
        EXPECT_NEAR(f.mean(0), Y(i, 0), 1e-5);
        EXPECT_LT(f.variance, 1e-5);
    }
}

TEST(PredictSgp, RevertsToMeanAndPriorVarianceFarAway)
{
    std::mt19937_64 rng(24);
    const auto in = oracle::random_instance(rng);
    const auto m = make_gp_model(in.hp, in.grouping, in.X, in.Y, true);
    const VectorXd far = VectorXd::Constant(in.X.cols(), 1e3);
    const auto f = predict_sgp(m, far);
    EXPECT_LT((f.mean - m.y_mean).norm(), 1e-9);
    EXPECT_NEAR(f.variance, in.hp.signal_var(), 1e-9);
}

TEST(JointPosterior, DiagonalMatchesPointPredictions)
{
    std::mt19937_64 rng(25);
    const auto in = oracle::random_instance(rng, 20, 5, 2);
    const auto m = make_gp_model(in.hp, in.grouping, in.X, in.Y, true);
    const auto jp = joint_posterior(m, in.Xh);
    for (Index i = 0; i < in.Xh.rows(); ++i) {
        const auto f = predict_sgp(m, in.Xh.row(i).transpose());
        EXPECT_LT((jp.mean.row(i).transpose() - f.mean).norm(), 1e-10);
        EXPECT_NEAR(jp.cov(i, i), f.variance, 1e-10);
    }
}

TEST(FitSgp, ZeroIterationsReturnsInitialHyperparameters)
{
    std::mt19937_64 rng(26);
    const auto in = oracle::random_instance(rng);
    GpFitConfig<double> c;
    c.grouping = in.grouping;
    c.cg.max_iterations = 0;
    c.initial = in.hp;
    const auto m = fit_sgp(in.X, in.Y, c);
    EXPECT_EQ(m.hp.to_vector(), in.hp.to_vector());
}

TEST(FitSgp, LowersNlmlAndIsDeterministic)
{
    std::mt19937_64 rng(27);
    const auto in = oracle::random_instance(rng);
    GpFitConfig<double> c;
    c.grouping = in.grouping;
    c.seed = 99;
    const auto a = fit_sgp(in.X, in.Y, c);
    const auto b = fit_sgp(in.X, in.Y, c);
    EXPECT_EQ(a.hp.to_vector(), b.hp.to_vector());
    const MatrixXd Yc = in.Y.rowwise() - in.Y.colwise().mean();
    EXPECT_LE(a.nlml, nlml(initial_hyperparams(in.X, Yc, c), in.grouping, in.X, Yc) + 1e-9);
}

TEST(FitSgp, RecoversGeneratingHyperparameters)
{
    // draw one function from a known GP, then fit
    std::mt19937_64 rng(28);
    std::normal_distribution<double> z(0.0, 1.0);
    const Index N = 250;
    MatrixXd X(N, 2);
    for (Index i = 0; i < X.size(); ++i) X.data()[i] = 3.0 * z(rng);
    Hyperparams<double> truth;
    truth.log_lengthscales = (VectorXd(2) << std::log(0.7), std::log(3.0)).finished();
    truth.log_signal_var = std::log(4.0);
    truth.log_noise_var = std::log(0.04);
    const auto g = FeatureGrouping::per_dimension(2);
    MatrixXd K = kernel_matrix(X, truth, g);
    K.diagonal().array() += truth.noise_var();
    const MatrixXd L = K.llt().matrixL();
    MatrixXd E(N, 3);
    for (Index i = 0; i < E.size(); ++i) E.data()[i] = z(rng);
    const MatrixXd Y = L * E;

    GpFitConfig<double> c;
    c.grouping = g;
    c.center_targets = false;
    const auto m = fit_sgp(X, Y, c);
    EXPECT_NEAR(m.hp.log_lengthscales(0), truth.log_lengthscales(0), 0.25);
    EXPECT_NEAR(m.hp.log_lengthscales(1), truth.log_lengthscales(1), 0.35);
    EXPECT_NEAR(m.hp.log_signal_var, truth.log_signal_var, 0.6);
    EXPECT_NEAR(m.hp.log_noise_var, truth.log_noise_var, 0.3);
}

TEST(FitSgp, FrozenNoiseStaysAtInitialValue)
{
    std::mt19937_64 rng(29);
    const auto in = oracle::random_instance(rng);
    GpFitConfig<double> c;
    c.grouping = in.grouping;
    c.optimize_noise = false;
    c.initial_noise_var = 0.3;
    const auto m = fit_sgp(in.X, in.Y, c);
    EXPECT_NEAR(m.hp.noise_var(), 0.3, 1e-12);
}

TEST(FitSgp, NoiseNeverFallsBelowFloor)
{
    // noiseless data pull the noise towards zero
    MatrixXd X(30, 1);
    MatrixXd Y(30, 1);
    for (Index i = 0; i < 30; ++i) {
        X(i, 0) = 0.2 * static_cast<double>(i);
        Y(i, 0) = std::sin(X(i, 0));
    }
    GpFitConfig<double> c;
    c.grouping = FeatureGrouping::isotropic(1);
    c.min_noise_var = 1e-4;
    const auto m = fit_sgp(X, Y, c);
    EXPECT_GE(m.hp.noise_var(), 1e-4 * (1 - 1e-12));
}

TEST(FitSgp, SubsampledSearchStillConditionsOnAllRows)
{
    std::mt19937_64 rng(30);
    const auto in = oracle::random_instance(rng, 20);
    GpFitConfig<double> c;
    c.grouping = in.grouping;
    c.max_fit_rows = 5;
    const auto m = fit_sgp(in.X, in.Y, c);
    EXPECT_EQ(m.n_train(), in.X.rows());
}

TEST(FitSgp, RejectsTooFewRows)
{
    GpFitConfig<double> c;
    c.grouping = FeatureGrouping::isotropic(1);
    EXPECT_THROW(fit_sgp(MatrixXd(MatrixXd::Zero(3, 1)), MatrixXd(MatrixXd::Zero(3, 1)), c), std::invalid_argument);
}

} // namespace
} // namespace pgpe
