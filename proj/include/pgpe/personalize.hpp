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

// Per-subject personalization of a fitted population GP. Neither expert
// re-optimizes hyperparameters; both reuse the population model's.
//
//  pGP  the population posterior is used as the prior for the subject and
//       corrected with the subject's past visits.
//  tGP  a GP conditioned on the subject's past visits only.

#ifndef PGPE_PERSONALIZE_HPP_
#define PGPE_PERSONALIZE_HPP_

#include "pgpe/common.hpp"
#include "pgpe/gp.hpp"
#include "pgpe/kernels.hpp"

namespace pgpe {

/// Past visits of one target subject, oldest first. Row i of Y holds the
/// forecast window attached to row i of X.
template <typename Scalar>
struct SubjectHistory {
    Mat<Scalar> X;
    Mat<Scalar> Y;

    Index size() const { return X.rows(); }
    bool empty() const { return X.rows() == 0; }
};

/// Population posterior evaluated jointly at the history inputs.
template <typename Scalar>
JointPosterior<Scalar> conditional_prior(const GpModel<Scalar>& model, const SubjectHistory<Scalar>& hist)
{
    if (hist.empty()) throw std::invalid_argument("conditional_prior: empty history");
    return joint_posterior(model, hist.X);
}

template <typename Scalar, typename Derived>
Forecast<Scalar> predict_pgp(const GpModel<Scalar>& model, const SubjectHistory<Scalar>& hist,
                             const Eigen::MatrixBase<Derived>& x_star)
{
    if (x_star.size() != model.input_dim()) throw std::invalid_argument("predict_pgp: dimension mismatch");
    if (hist.empty()) return predict_sgp(model, x_star);
    if (hist.X.cols() != model.input_dim() || hist.Y.cols() != model.output_dim() || hist.Y.rows() != hist.X.rows())
        throw std::invalid_argument("predict_pgp: history shape mismatch");

    const Index h = hist.size();
    // stack history inputs with the test input: one joint posterior gives
    // V_{1:t-1}, V_*^{(t|s)} and V_*^{(s)} at once
    Mat<Scalar> Xq(h + 1, model.input_dim());
    Xq.topRows(h) = hist.X;
    Xq.row(h) = x_star.transpose();
    const JointPosterior<Scalar> post = joint_posterior(model, Xq);

    Mat<Scalar> C = post.cov.topLeftCorner(h, h);
    C.diagonal().array() += model.hp.noise_var();
    const auto chol = robust_cholesky(C);
    const Mat<Scalar> v_star = post.cov.topRightCorner(h, 1);  // V_*^{(t|s)}
    const Mat<Scalar> residual = hist.Y - post.mean.topRows(h);
    const Mat<Scalar> gain = chol.solve(v_star);  // C^-1 V_*

    Forecast<Scalar> f;
    f.mean = post.mean.row(h).transpose() + residual.transpose() * gain;
    const Scalar prior_var = std::max(Scalar(0), post.cov(h, h));
    f.variance = std::max(Scalar(0), prior_var - (v_star.transpose() * gain)(0, 0));
    return f;
}

/// Subject-only GP with the population hyperparameters; history targets are
/// centered by `target_mean` (the population target means).
template <typename Scalar, typename Derived>
Forecast<Scalar> predict_tgp(const Hyperparams<Scalar>& hp, const FeatureGrouping& grouping,
                             const Vec<Scalar>& target_mean, const SubjectHistory<Scalar>& hist,
                             const Eigen::MatrixBase<Derived>& x_star)
{
    if (hist.empty()) throw std::invalid_argument("predict_tgp: empty history");
    if (x_star.size() != hist.X.cols()) throw std::invalid_argument("predict_tgp: dimension mismatch");
    if (hist.Y.cols() != target_mean.size() || hist.Y.rows() != hist.X.rows())
        throw std::invalid_argument("predict_tgp: history shape mismatch");

    Mat<Scalar> K = kernel_matrix(hist.X, hp, grouping);
    K.diagonal().array() += hp.noise_var();
    const auto chol = robust_cholesky(K);
    const RowMat<Scalar> xs = x_star.transpose();
    const Mat<Scalar> ks = kernel_matrix(hist.X, xs, hp, grouping);
    const Mat<Scalar> Yc = hist.Y.rowwise() - target_mean.transpose();

    Forecast<Scalar> f;
    f.mean = target_mean + Yc.transpose() * chol.solve(ks);
    const Mat<Scalar> v = chol.half_solve(ks);
    f.variance = std::max(Scalar(0), hp.signal_var() - v.squaredNorm());
    return f;
}

template <typename Scalar, typename Derived>
Forecast<Scalar> predict_tgp(const GpModel<Scalar>& model, const SubjectHistory<Scalar>& hist,
                             const Eigen::MatrixBase<Derived>& x_star)
{
    return predict_tgp(model.hp, model.grouping, model.y_mean, hist, x_star);
}

/// Both experts at one visit. tGP falls back to the population prediction
/// when there is no history yet, and says so.
template <typename Scalar>
struct ExpertForecasts {
    Forecast<Scalar> sgp;
    Forecast<Scalar> pgp;
    Forecast<Scalar> tgp;
    bool population_fallback = false;
};

template <typename Scalar, typename Derived>
ExpertForecasts<Scalar> predict_experts(const GpModel<Scalar>& model, const SubjectHistory<Scalar>& hist,
                                        const Eigen::MatrixBase<Derived>& x_star)
{
    ExpertForecasts<Scalar> out;
    out.sgp = predict_sgp(model, x_star);
    if (hist.empty()) {
        out.pgp = out.sgp;
        out.tgp = out.sgp;
        out.population_fallback = true;
    } else {
        out.pgp = predict_pgp(model, hist, x_star);
        out.tgp = predict_tgp(model, hist, x_star);
    }
    return out;
}

} // namespace pgpe

#endif // PGPE_PERSONALIZE_HPP_
