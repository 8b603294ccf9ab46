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

// Population GP: marginal likelihood, its gradient, conjugate-gradient
// hyperparameter fitting and the shared-covariance multi-output posterior.
//
// Targets are an N x P matrix (P = 4 forecast steps for the score models,
// P = 1 for the weight regressor). All output columns share one kernel, so
// a single Cholesky factor serves every column and the predictive variance
// is one scalar per test point.

#ifndef PGPE_GP_HPP_
#define PGPE_GP_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

#include "pgpe/common.hpp"
#include "pgpe/kernels.hpp"
#include "pgpe/optimize.hpp"

namespace pgpe {

template <typename Scalar>
struct Forecast {
    Vec<Scalar> mean;    ///< one entry per forecast step
    Scalar variance{0};  ///< shared across the window
};

template <typename Scalar>
struct GpModel {
    Hyperparams<Scalar> hp;
    FeatureGrouping grouping;
    Mat<Scalar> X_train;  ///< N x D
    Mat<Scalar> Y_train;  ///< N x P, uncentered
    Vec<Scalar> y_mean;   ///< subtracted before fitting (zero when centering is off)
    CholeskyFactor<Scalar> chol;  ///< of K + sigma_n^2 I
    Mat<Scalar> alpha_cols;       ///< (K + sigma_n^2 I)^-1 (Y - y_mean)
    Scalar nlml{0};
    std::vector<Scalar> fit_trace;  ///< objective per accepted optimizer iteration

    Index n_train() const { return X_train.rows(); }
    Index input_dim() const { return X_train.cols(); }
    Index output_dim() const { return Y_train.cols(); }
};

template <typename Scalar>
struct GpFitConfig {
    FeatureGrouping grouping;
    bool center_targets = true;
    bool optimize_noise = true;
    CgOptions cg;
    int restarts = 3;
    std::uint64_t seed = 0;
    /// Overrides the heuristic starting point when set.
    std::optional<Hyperparams<Scalar>> initial;
    Scalar initial_noise_fraction = Scalar(0.1);  ///< sigma_n^2 = fraction * var(Y) at start
    std::optional<Scalar> initial_noise_var;      ///< absolute override of the above
    Scalar min_noise_var = Scalar(1e-6);
    /// Multiplies the median-distance length-scale heuristic.
    Scalar lengthscale_init_scale = Scalar(1);
    Scalar restart_spread = Scalar(1);
    /// Optimize hyperparameters on at most this many rows (0 = all rows).
    /// The returned model always conditions on every row.
    Index max_fit_rows = 0;
};

namespace detail {

template <typename Scalar>
Mat<Scalar> noisy_covariance(const Mat<Scalar>& X, const Hyperparams<Scalar>& hp, const FeatureGrouping& grouping)
{
    Mat<Scalar> K = kernel_matrix(X, hp, grouping);
    K.diagonal().array() += hp.noise_var();
    return K;
}

template <typename Scalar>
Scalar nlml_from_factor(const CholeskyFactor<Scalar>& chol, const Mat<Scalar>& Yc, const Mat<Scalar>& A)
{
    const Scalar n = static_cast<Scalar>(Yc.rows());
    const Scalar p = static_cast<Scalar>(Yc.cols());
    const Scalar log2pi = std::log(Scalar(2) * std::numbers::pi_v<Scalar>);
    return Scalar(0.5) * Yc.cwiseProduct(A).sum() + Scalar(0.5) * p * chol.log_det() + Scalar(0.5) * n * p * log2pi;
}

/// Objective and gradient sharing one factorization.
template <typename Scalar>
Scalar nlml_with_gradient(const Hyperparams<Scalar>& hp, const FeatureGrouping& grouping, const Mat<Scalar>& X,
                          const Mat<Scalar>& Yc, Vec<Scalar>* grad)
{
    if (X.rows() != Yc.rows()) throw std::invalid_argument("nlml: X and Y row counts differ");
    if (X.rows() == 0) throw std::invalid_argument("nlml: empty training set");
    const Mat<Scalar> Kn = noisy_covariance(X, hp, grouping);
    const auto chol = robust_cholesky(Kn);
    const Mat<Scalar> A = chol.solve(Yc);
    const Scalar value = nlml_from_factor(chol, Yc, A);
    if (!grad) return value;

    // dNLML/dtheta = 1/2 tr(W dK/dtheta),  W = P K^-1 - A A^T
    const Index n = X.rows();
    const Scalar p = static_cast<Scalar>(Yc.cols());
    Mat<Scalar> W = chol.solve(Mat<Scalar>::Identity(n, n)) * p;
    W.noalias() -= A * A.transpose();

    const Index G = hp.n_lengthscales();
    const Vec<Scalar> inv = inverse_lengthscales(hp, grouping);
    const RowMat<Scalar> Xr = X;
    const Scalar sf2 = hp.signal_var();
    Vec<Scalar> g_ls = Vec<Scalar>::Zero(G);
    Vec<Scalar> per_group(G);
    Scalar g_sf = 0;
    for (Index j = 0; j < n; ++j) {
        g_sf += W(j, j) * sf2;
        for (Index i = 0; i < j; ++i) {
            per_group.setZero();
            for (Index d = 0; d < X.cols(); ++d) {
                const Scalar z = (Xr(i, d) - Xr(j, d)) * inv(d);
                per_group(grouping.group_of(d)) += z * z;
            }
            const Scalar k = sf2 * std::exp(Scalar(-0.5) * per_group.sum());
            const Scalar wk = (W(i, j) + W(j, i)) * k;
            g_sf += wk;
            g_ls += wk * per_group;
        }
    }
    grad->resize(hp.size());
    grad->head(G) = Scalar(0.5) * g_ls;
    (*grad)(hp.signal_index()) = Scalar(0.5) * g_sf;
    (*grad)(hp.noise_index()) = Scalar(0.5) * hp.noise_var() * W.trace();
    return value;
}

template <typename Scalar>
Scalar median(std::vector<Scalar> v)
{
    if (v.empty()) return Scalar(0);
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    return *mid;
}

/// log(median pairwise distance) per group, over at most ~300 evenly
/// strided rows.
template <typename Scalar>
Vec<Scalar> median_distance_log_lengthscales(const Mat<Scalar>& X, const FeatureGrouping& grouping)
{
    const Index G = grouping.n_groups();
    const Index stride = std::max<Index>(1, X.rows() / 300);
    std::vector<Index> rows;
    for (Index i = 0; i < X.rows(); i += stride) rows.push_back(i);

    std::vector<std::vector<Scalar>> dists(static_cast<std::size_t>(G));
    Vec<Scalar> per_group(G);
    for (std::size_t a = 0; a < rows.size(); ++a)
        for (std::size_t b = 0; b < a; ++b) {
            per_group.setZero();
            for (Index d = 0; d < X.cols(); ++d) {
                const Scalar z = X(rows[a], d) - X(rows[b], d);
                per_group(grouping.group_of(d)) += z * z;
            }
            for (Index g = 0; g < G; ++g) dists[static_cast<std::size_t>(g)].push_back(std::sqrt(per_group(g)));
        }
    Vec<Scalar> out(G);
    for (Index g = 0; g < G; ++g) {
        const Scalar m = median(dists[static_cast<std::size_t>(g)]);
        out(g) = std::log(m > Scalar(1e-12) ? m : Scalar(1));
    }
    return out;
}

} // namespace detail

/// Negative log marginal likelihood summed over the (already centered)
/// output columns, all sharing K + sigma_n^2 I.
template <typename Scalar>
Scalar nlml(const Hyperparams<Scalar>& hp, const FeatureGrouping& grouping, const Mat<Scalar>& X,
            const Mat<Scalar>& Y_centered)
{
    return detail::nlml_with_gradient<Scalar>(hp, grouping, X, Y_centered, nullptr);
}

/// Gradient of nlml with respect to the flattened log hyperparameters.
template <typename Scalar>
Vec<Scalar> nlml_grad(const Hyperparams<Scalar>& hp, const FeatureGrouping& grouping, const Mat<Scalar>& X,
                      const Mat<Scalar>& Y_centered)
{
    Vec<Scalar> g;
    detail::nlml_with_gradient<Scalar>(hp, grouping, X, Y_centered, &g);
    return g;
}

/// Conditions a GP with fixed hyperparameters on (X, Y). With
/// `center_targets` the per-column training mean is removed first.
template <typename Scalar>
GpModel<Scalar> make_gp_model(const Hyperparams<Scalar>& hp, const FeatureGrouping& grouping, Mat<Scalar> X,
                              Mat<Scalar> Y, bool center_targets)
{
    if (X.rows() != Y.rows()) throw std::invalid_argument("make_gp_model: X and Y row counts differ");
    if (X.rows() == 0) throw std::invalid_argument("make_gp_model: empty training set");
    if (!Y.allFinite()) throw std::invalid_argument("make_gp_model: non-finite targets");
    GpModel<Scalar> m;
    m.hp = hp;
    m.grouping = grouping;
    m.y_mean = center_targets ? Vec<Scalar>(Y.colwise().mean().transpose()) : Vec<Scalar>::Zero(Y.cols());
    m.X_train = std::move(X);
    m.Y_train = std::move(Y);
    const Mat<Scalar> Yc = m.Y_train.rowwise() - m.y_mean.transpose();
    m.chol = robust_cholesky(detail::noisy_covariance(m.X_train, hp, grouping));
    m.alpha_cols = m.chol.solve(Yc);
    m.nlml = detail::nlml_from_factor(m.chol, Yc, m.alpha_cols);
    return m;
}

/// Heuristic starting point: log l_g = log median pairwise distance within
/// group g, log sigma_f^2 = log var(Y), log sigma_n^2 = log(0.1 var(Y)).
template <typename Scalar>
Hyperparams<Scalar> initial_hyperparams(const Mat<Scalar>& X, const Mat<Scalar>& Y_centered,
                                        const GpFitConfig<Scalar>& config)
{
    Hyperparams<Scalar> hp;
    hp.log_lengthscales = detail::median_distance_log_lengthscales(X, config.grouping).array() +
                          std::log(config.lengthscale_init_scale);
    Scalar var = Y_centered.squaredNorm() / static_cast<Scalar>(std::max<Index>(1, Y_centered.size()));
    if (!(var > Scalar(1e-12))) var = Scalar(1);
    hp.log_signal_var = std::log(var);
    const Scalar noise = config.initial_noise_var ? *config.initial_noise_var : config.initial_noise_fraction * var;
    hp.log_noise_var = std::log(std::max(noise, config.min_noise_var));
    return hp;
}

/// Fits hyperparameters by minimizing the NLML with conjugate gradients
/// (best of the heuristic start plus `restarts` seeded perturbations) and
/// returns the conditioned model.
template <typename Scalar>
GpModel<Scalar> fit_sgp(const Mat<Scalar>& X, const Mat<Scalar>& Y, const GpFitConfig<Scalar>& config)
{
    if (X.rows() != Y.rows()) throw std::invalid_argument("fit_sgp: X and Y row counts differ");
    if (X.rows() < 5) throw std::invalid_argument("fit_sgp: need at least 5 training rows");
    if (config.grouping.n_features() != X.cols())
        throw std::invalid_argument("fit_sgp: grouping does not match input dimension");

    std::mt19937_64 rng(config.seed);

    // rows used for hyperparameter search
    Mat<Scalar> Xf = X;
    Mat<Scalar> Yf = Y;
    if (config.max_fit_rows > 0 && X.rows() > config.max_fit_rows) {
        std::vector<Index> idx(static_cast<std::size_t>(X.rows()));
        std::iota(idx.begin(), idx.end(), Index{0});
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(static_cast<std::size_t>(config.max_fit_rows));
        std::sort(idx.begin(), idx.end());
        Xf = X(idx, Eigen::all);
        Yf = Y(idx, Eigen::all);
    }
    const Vec<Scalar> mu =
        config.center_targets ? Vec<Scalar>(Yf.colwise().mean().transpose()) : Vec<Scalar>::Zero(Yf.cols());
    const Mat<Scalar> Yc = Yf.rowwise() - mu.transpose();

    const Hyperparams<Scalar> init = config.initial ? *config.initial : initial_hyperparams(Xf, Yc, config);
    if (init.n_lengthscales() != config.grouping.n_groups())
        throw std::invalid_argument("fit_sgp: initial hyperparameters do not match grouping");

    const Index n_par = init.size();
    Vec<Scalar> lower = Vec<Scalar>::Constant(n_par, Scalar(-20));
    Vec<Scalar> upper = Vec<Scalar>::Constant(n_par, Scalar(20));
    lower.head(init.n_lengthscales()).setConstant(Scalar(-9));
    upper.head(init.n_lengthscales()).setConstant(Scalar(9));
    lower(init.noise_index()) = std::log(config.min_noise_var);
    if (!config.optimize_noise) {
        lower(init.noise_index()) = init.log_noise_var;
        upper(init.noise_index()) = init.log_noise_var;
    }

    auto objective = [&](const Vec<Scalar>& theta, Vec<Scalar>& grad) {
        const auto hp = Hyperparams<Scalar>::from_vector(theta);
        return detail::nlml_with_gradient<Scalar>(hp, config.grouping, Xf, Yc, &grad);
    };

    const Scalar init_value = nlml(init, config.grouping, Xf, Yc);
    if (!std::isfinite(static_cast<double>(init_value)))
        throw NumericError("fit_sgp: non-finite NLML at the initial hyperparameters");

    std::optional<CgResult<Scalar>> best;
    const Vec<Scalar> x0 = init.to_vector();
    const int starts = config.cg.max_iterations > 0 ? 1 + std::max(0, config.restarts) : 1;
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int s = 0; s < starts; ++s) {
        Vec<Scalar> start = x0;
        if (s > 0) {
            for (Index i = 0; i < n_par; ++i) start(i) += config.restart_spread * static_cast<Scalar>(normal(rng));
            start = start.cwiseMax(lower).cwiseMin(upper);
        }
        try {
            auto r = minimize_cg<Scalar>(objective, start, config.cg, lower, upper);
            if (!best || r.value < best->value) best = std::move(r);
        } catch (const NumericError&) {
            if (s == 0) throw;
        }
    }

    auto model = make_gp_model(Hyperparams<Scalar>::from_vector(best->x), config.grouping, X, Y, config.center_targets);
    model.fit_trace = best->trace;
    return model;
}

/// Predictive distribution at one test input: mean per output column and a
/// single shared variance k** - k*^T (K + sigma_n^2 I)^-1 k*.
template <typename Scalar, typename Derived>
Forecast<Scalar> predict_sgp(const GpModel<Scalar>& model, const Eigen::MatrixBase<Derived>& x_star)
{
    if (x_star.size() != model.input_dim()) throw std::invalid_argument("predict_sgp: dimension mismatch");
    const RowMat<Scalar> xs = x_star.transpose();
    const Mat<Scalar> ks = kernel_matrix(model.X_train, xs, model.hp, model.grouping);  // N x 1
    Forecast<Scalar> f;
    f.mean = model.y_mean + model.alpha_cols.transpose() * ks;
    const Mat<Scalar> v = model.chol.half_solve(ks);
    f.variance = std::max(Scalar(0), model.hp.signal_var() - v.squaredNorm());
    return f;
}

template <typename Scalar>
struct JointPosterior {
    Mat<Scalar> mean;  ///< q x P
    Mat<Scalar> cov;   ///< q x q latent covariance (no observation noise)
};

/// Joint posterior of the latent function at the rows of Xq.
template <typename Scalar>
JointPosterior<Scalar> joint_posterior(const GpModel<Scalar>& model, const Mat<Scalar>& Xq)
{
    if (Xq.cols() != model.input_dim()) throw std::invalid_argument("joint_posterior: dimension mismatch");
    const Mat<Scalar> Ksq = kernel_matrix(model.X_train, Xq, model.hp, model.grouping);
    JointPosterior<Scalar> p;
    p.mean = Ksq.transpose() * model.alpha_cols;
    p.mean.rowwise() += model.y_mean.transpose();
    const Mat<Scalar> V = model.chol.half_solve(Ksq);
    p.cov = kernel_matrix(Xq, model.hp, model.grouping);
    p.cov.noalias() -= V.transpose() * V;
    return p;
}

} // namespace pgpe

#endif // PGPE_GP_HPP_
