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

#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "pgpe/personalize.hpp"

namespace pgpe {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct Case {
    oracle::Instance in;
    GpModel<double> model;
    SubjectHistory<double> hist;
};

Case make_case(std::mt19937_64& rng, Index min_hist = 1)
{
    Case c{oracle::random_instance(rng, 20, 5, min_hist), {}, {}};
    c.model = make_gp_model(c.in.hp, c.in.grouping, c.in.X, c.in.Y, true);
    c.hist = {c.in.Xh, c.in.Yh};
    return c;
}

TEST(ConditionalPrior, MatchesDenseInverse)
{
    std::mt19937_64 rng(1);
    for (int rep = 0; rep < 50; ++rep) {
        const auto c = make_case(rng);
        const auto p = conditional_prior(c.model, c.hist);
        const auto ref = oracle::conditional_prior(c.in.X, c.in.Y, c.in.hp, c.in.grouping, c.in.Xh);
        EXPECT_LT((p.mean - ref.mean).cwiseAbs().maxCoeff() / std::max(1.0, ref.mean.cwiseAbs().maxCoeff()), 1e-9);
        EXPECT_LT((p.cov - ref.cov).cwiseAbs().maxCoeff(), 1e-9);
    }
}

TEST(ConditionalPrior, EmptyHistoryThrows)
{
    std::mt19937_64 rng(2);
    const auto c = make_case(rng);
    EXPECT_THROW(conditional_prior(c.model, SubjectHistory<double>{}), std::invalid_argument);
}

TEST(PredictPgp, MatchesTwoStageDenseFormula)
{
    std::mt19937_64 rng(3);
    for (int rep = 0; rep < 50; ++rep) {
        const auto c = make_case(rng);
        const auto f = predict_pgp(c.model, c.hist, c.in.xs);
        const auto ref = oracle::pgp(c.in.X, c.in.Y, c.in.hp, c.in.grouping, c.in.Xh, c.in.Yh, c.in.xs);
        EXPECT_LT(oracle::max_rel_err(f.mean, ref.mean), 1e-8);
        EXPECT_LT(oracle::rel_err(f.variance, ref.variance), 1e-8);
    }
}

TEST(PredictPgp, EqualsJointConditioningOnSourceAndHistory)
{
    std::mt19937_64 rng(4);
    for (int rep = 0; rep < 50; ++rep) {
        const auto c = make_case(rng);
        const auto f = predict_pgp(c.model, c.hist, c.in.xs);
        const auto ref = oracle::joint(c.in.X, c.in.Y, c.in.hp, c.in.grouping, c.in.Xh, c.in.Yh, c.in.xs);
        EXPECT_LT(oracle::max_rel_err(f.mean, ref.mean), 1e-8);
        EXPECT_LT(oracle::rel_err(f.variance, ref.variance), 1e-8);
    }
}

TEST(PredictPgp, EmptyHistoryIsExactlyPopulationPrediction)
{
    std::mt19937_64 rng(5);
    const auto c = make_case(rng);
    const auto p = predict_pgp(c.model, SubjectHistory<double>{}, c.in.xs);
    const auto s = predict_sgp(c.model, c.in.xs);
    EXPECT_EQ(p.mean, s.mean);
    EXPECT_EQ(p.variance, s.variance);
}

TEST(PredictPgp, VarianceNeverExceedsPopulationVariance)
{
    std::mt19937_64 rng(6);
    for (int rep = 0; rep < 100; ++rep) {
        const auto c = make_case(rng);
        EXPECT_LE(predict_pgp(c.model, c.hist, c.in.xs).variance, predict_sgp(c.model, c.in.xs).variance + 1e-10);
    }
}

TEST(PredictPgp, MismatchedHistoryThrows)
{
    std::mt19937_64 rng(7);
    auto c = make_case(rng);
    SubjectHistory<double> bad{c.in.Xh, c.in.Yh.leftCols(c.in.Yh.cols()).replicate(1, 2)};
    EXPECT_THROW(predict_pgp(c.model, bad, c.in.xs), std::invalid_argument);
    EXPECT_THROW(predict_pgp(c.model, c.hist, VectorXd::Zero(c.in.xs.size() + 1)), std::invalid_argument);
}

TEST(PredictTgp, MatchesDenseInverse)
{
    std::mt19937_64 rng(8);
    for (int rep = 0; rep < 50; ++rep) {
        const auto c = make_case(rng);
        const auto f = predict_tgp(c.model, c.hist, c.in.xs);
        const auto ref = oracle::tgp(c.model.y_mean, c.in.hp, c.in.grouping, c.in.Xh, c.in.Yh, c.in.xs);
        EXPECT_LT(oracle::max_rel_err(f.mean, ref.mean), 1e-8);
        EXPECT_LT(oracle::rel_err(f.variance, ref.variance), 1e-8);
    }
}

TEST(PredictTgp, EmptyHistoryThrows)
{
    std::mt19937_64 rng(9);
    const auto c = make_case(rng);
    EXPECT_THROW(predict_tgp(c.model, SubjectHistory<double>{}, c.in.xs), std::invalid_argument);
}

TEST(PredictTgp, IgnoresPopulationData)
{
    std::mt19937_64 rng(10);
    const auto c = make_case(rng);
    MatrixXd Y2 = c.in.Y;
    Y2.array() += 0.0;
    Y2.row(0).array() += 50.0;
    Y2.row(1).array() -= 50.0;  // same column means
    const auto other = make_gp_model(c.in.hp, c.in.grouping, c.in.X, Y2, true);
    const auto a = predict_tgp(c.model, c.hist, c.in.xs);
    const auto b = predict_tgp(other, c.hist, c.in.xs);
    EXPECT_LT((a.mean - b.mean).norm(), 1e-9);
    EXPECT_EQ(a.variance, b.variance);
}

TEST(PredictExperts, FallsBackToPopulationWithoutHistory)
{
    std::mt19937_64 rng(11);
    const auto c = make_case(rng);
    const auto e = predict_experts(c.model, SubjectHistory<double>{}, c.in.xs);
    EXPECT_TRUE(e.population_fallback);
    EXPECT_EQ(e.pgp.mean, e.sgp.mean);
    EXPECT_EQ(e.tgp.mean, e.sgp.mean);
    const auto e2 = predict_experts(c.model, c.hist, c.in.xs);
    EXPECT_FALSE(e2.population_fallback);
}

} // namespace
} // namespace pgpe
