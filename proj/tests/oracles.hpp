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

// Independent reference implementations used by the tests. Everything here
// is written from the textbook formulas with explicit inverses and loops,
// sharing no code with the library beyond plain data types.

#ifndef PGPE_TESTS_ORACLES_HPP_
#define PGPE_TESTS_ORACLES_HPP_

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>

#include "pgpe/experts.hpp"
#include "pgpe/gp.hpp"

namespace pgpe::oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Per-input length-scales from group length-scales.
inline VectorXd expand_lengthscales(const Hyperparams<double>& hp, const FeatureGrouping& g)
{
    VectorXd ls(g.n_features());
    for (Index d = 0; d < ls.size(); ++d) ls(d) = std::exp(hp.log_lengthscales(g.group_of(d)));
    return ls;
}

inline MatrixXd rbf(const MatrixXd& A, const MatrixXd& B, const VectorXd& ls, double sf2)
{
    MatrixXd K(A.rows(), B.rows());
    for (Index i = 0; i < A.rows(); ++i)
        for (Index j = 0; j < B.rows(); ++j) {
            double r2 = 0.0;
            for (Index d = 0; d < A.cols(); ++d) {
                const double z = (A(i, d) - B(j, d)) / ls(d);
                r2 += z * z;
            }
            K(i, j) = sf2 * std::exp(-0.5 * r2);
        }
    return K;
}

struct Posterior {
    MatrixXd mean;  // q x P
    MatrixXd cov;   // q x q
};

/// Posterior of a GP with constant prior mean `mu` conditioned on (X, Y)
/// with observation noise, evaluated jointly at Xq. Dense inverse.
inline Posterior condition(const MatrixXd& X, const MatrixXd& Y, const VectorXd& mu, const MatrixXd& Xq,
                           const VectorXd& ls, double sf2, double sn2)
{
    MatrixXd K = rbf(X, X, ls, sf2);
    K += sn2 * MatrixXd::Identity(X.rows(), X.rows());
    const MatrixXd Kinv = K.inverse();
    const MatrixXd Kq = rbf(X, Xq, ls, sf2);
    const MatrixXd Yc = Y.rowwise() - mu.transpose();
    Posterior p;
    p.mean = Kq.transpose() * Kinv * Yc;
    p.mean.rowwise() += mu.transpose();
    p.cov = rbf(Xq, Xq, ls, sf2) - Kq.transpose() * Kinv * Kq;
    return p;
}

inline VectorXd column_mean(const MatrixXd& Y) { return Y.colwise().mean().transpose(); }

struct Prediction {
    VectorXd mean;
    double variance = 0.0;
};

/// Population GP prediction at x*.
inline Prediction sgp(const MatrixXd& X, const MatrixXd& Y, const Hyperparams<double>& hp, const FeatureGrouping& g,
                      const VectorXd& xs)
{
    const auto p = condition(X, Y, column_mean(Y), xs.transpose(), expand_lengthscales(hp, g), hp.signal_var(),
                             hp.noise_var());
    return {p.mean.row(0).transpose(), p.cov(0, 0)};
}

/// Population posterior at the history inputs (latent, no noise).
inline Posterior conditional_prior(const MatrixXd& X, const MatrixXd& Y, const Hyperparams<double>& hp,
                                   const FeatureGrouping& g, const MatrixXd& Xh)
{
    return condition(X, Y, column_mean(Y), Xh, expand_lengthscales(hp, g), hp.signal_var(), hp.noise_var());
}

/// Personalized prediction from the two-stage formulas: population
/// posterior as prior, corrected with the noisy history.
inline Prediction pgp(const MatrixXd& X, const MatrixXd& Y, const Hyperparams<double>& hp, const FeatureGrouping& g,
                      const MatrixXd& Xh, const MatrixXd& Yh, const VectorXd& xs)
{
    const Index h = Xh.rows();
    MatrixXd Xq(h + 1, X.cols());
    Xq.topRows(h) = Xh;
    Xq.row(h) = xs.transpose();
    const auto post = condition(X, Y, column_mean(Y), Xq, expand_lengthscales(hp, g), hp.signal_var(), hp.noise_var());
    const MatrixXd C = post.cov.topLeftCorner(h, h) + hp.noise_var() * MatrixXd::Identity(h, h);
    const MatrixXd Cinv = C.inverse();
    const VectorXd v = post.cov.block(0, h, h, 1);
    Prediction out;
    out.mean = post.mean.row(h).transpose() + (Yh - post.mean.topRows(h)).transpose() * Cinv * v;
    out.variance = post.cov(h, h) - v.dot(Cinv * v);
    return out;
}

/// Single-shot conditioning on population and history data together.
inline Prediction joint(const MatrixXd& X, const MatrixXd& Y, const Hyperparams<double>& hp, const FeatureGrouping& g,
                        const MatrixXd& Xh, const MatrixXd& Yh, const VectorXd& xs)
{
    MatrixXd Xa(X.rows() + Xh.rows(), X.cols());
    Xa << X, Xh;
    MatrixXd Ya(Y.rows() + Yh.rows(), Y.cols());
    Ya << Y, Yh;
    const auto p = condition(Xa, Ya, column_mean(Y), xs.transpose(), expand_lengthscales(hp, g), hp.signal_var(),
                             hp.noise_var());
    return {p.mean.row(0).transpose(), p.cov(0, 0)};
}

/// Subject-only GP with the population mean as prior mean.
inline Prediction tgp(const VectorXd& mu, const Hyperparams<double>& hp, const FeatureGrouping& g, const MatrixXd& Xh,
                      const MatrixXd& Yh, const VectorXd& xs)
{
    const auto p = condition(Xh, Yh, mu, xs.transpose(), expand_lengthscales(hp, g), hp.signal_var(), hp.noise_var());
    return {p.mean.row(0).transpose(), p.cov(0, 0)};
}

/// Multi-output NLML from the dense formula.
inline double nlml(const Hyperparams<double>& hp, const FeatureGrouping& g, const MatrixXd& X, const MatrixXd& Yc)
{
    MatrixXd K = rbf(X, X, expand_lengthscales(hp, g), hp.signal_var());
    K += hp.noise_var() * MatrixXd::Identity(X.rows(), X.rows());
    const double n = static_cast<double>(X.rows());
    const double p = static_cast<double>(Yc.cols());
    const double logdet = std::log(K.determinant());
    return 0.5 * (Yc.transpose() * K.inverse() * Yc).trace() + 0.5 * p * logdet +
           0.5 * n * p * std::log(2.0 * std::numbers::pi);
}

/// Central finite differences of f at x.
inline VectorXd finite_difference(const std::function<double(const VectorXd&)>& f, const VectorXd& x, double h = 1e-5)
{
    VectorXd g(x.size());
    for (Index i = 0; i < x.size(); ++i) {
        VectorXd a = x, b = x;
        a(i) += h;
        b(i) -= h;
        g(i) = (f(a) - f(b)) / (2.0 * h);
    }
    return g;
}

inline double mixture_sse(double alpha, const Vector4& mu_p, const Vector4& mu_t, const Vector4& y, const Mask4& mask)
{
    double s = 0.0;
    for (Index k = 0; k < 4; ++k)
        if (mask(k)) {
            const double r = alpha * mu_p(k) + (1.0 - alpha) * mu_t(k) - y(k);
            s += r * r;
        }
    return s;
}

/// Best weight on a uniform grid over [0, 1].
inline double grid_alpha(const Vector4& mu_p, const Vector4& mu_t, const Vector4& y, const Mask4& mask,
                         double step = 1e-4)
{
    double best = 0.0, best_v = mixture_sse(0.0, mu_p, mu_t, y, mask);
    const int n = static_cast<int>(std::round(1.0 / step));
    for (int i = 1; i <= n; ++i) {
        const double a = i * step;
        const double v = mixture_sse(a, mu_p, mu_t, y, mask);
        if (v < best_v) {
            best_v = v;
            best = a;
        }
    }
    return best;
}

/// Two-sided paired t-test p-value through boost's Student t.
inline double paired_t_pvalue(const std::vector<double>& a, const std::vector<double>& b)
{
    const std::size_t n = a.size();
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) ss += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    const double t = mean / (sd / std::sqrt(static_cast<double>(n)));
    boost::math::students_t dist(static_cast<double>(n - 1));
    return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

inline double rel_err(double a, double b, double floor = 1e-12)
{
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double max_rel_err(const VectorXd& a, const VectorXd& b, double floor = 1e-12)
{
    double m = 0.0;
    for (Index i = 0; i < a.size(); ++i) m = std::max(m, rel_err(a(i), b(i), floor));
    return m;
}

/// A random, well-conditioned GP problem with a subject history.
struct Instance {
    FeatureGrouping grouping;
    Hyperparams<double> hp;
    MatrixXd X, Y;    // population
    MatrixXd Xh, Yh;  // subject history (may be empty)
    VectorXd xs;      // test input
};

inline Instance random_instance(std::mt19937_64& rng, Index max_n = 20, Index max_hist = 5, Index min_hist = 0)
{
    std::uniform_int_distribution<Index> n_dist(5, max_n), h_dist(min_hist, max_hist), d_dist(1, 4), p_dist(1, 4),
        kind_dist(0, 2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> z(0.0, 1.0);

    Instance in;
    const Index D = d_dist(rng);
    switch (kind_dist(rng)) {
    case 0: in.grouping = FeatureGrouping::isotropic(D); break;
    case 1: in.grouping = FeatureGrouping::per_dimension(D); break;
    default: {
        std::vector<int> tags(static_cast<std::size_t>(D));
        for (Index d = 0; d < D; ++d) tags[static_cast<std::size_t>(d)] = static_cast<int>(d / 2);
        in.grouping = FeatureGrouping(tags);
    }
    }
    in.hp.log_lengthscales.resize(in.grouping.n_groups());
    for (Index g = 0; g < in.hp.log_lengthscales.size(); ++g) in.hp.log_lengthscales(g) = -0.3 + 1.3 * u(rng);
    in.hp.log_signal_var = -1.0 + 2.0 * u(rng);
    in.hp.log_noise_var = std::log(0.05 + 0.45 * u(rng));

    const Index N = n_dist(rng), H = h_dist(rng), P = p_dist(rng);
    auto draw = [&](Index rows) {
        MatrixXd M(rows, D);
        for (Index i = 0; i < M.size(); ++i) M.data()[i] = z(rng);
        return M;
    };
    auto targets = [&](const MatrixXd& Xin, double shift) {
        MatrixXd Yout(Xin.rows(), P);
        for (Index i = 0; i < Xin.rows(); ++i)
            for (Index p = 0; p < P; ++p)
                Yout(i, p) = 3.0 + shift + std::sin(Xin.row(i).sum() + static_cast<double>(p)) + 0.2 * z(rng);
        return Yout;
    };
    in.X = draw(N);
    in.Y = targets(in.X, 0.0);
    in.Xh = draw(H);
    in.Yh = targets(in.Xh, 0.7);
    in.xs = draw(1).row(0).transpose();
    return in;
}

} // namespace pgpe::oracle

#endif // PGPE_TESTS_ORACLES_HPP_
