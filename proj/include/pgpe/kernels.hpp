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

#ifndef PGPE_KERNELS_HPP_
#define PGPE_KERNELS_HPP_

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "pgpe/common.hpp"

namespace pgpe {

// ---------------------------------------------------------------------------
// Feature grouping
// ---------------------------------------------------------------------------

/// Assigns every input dimension to one length-scale group.
///
/// A single group gives the isotropic RBF kernel; one group per data
/// modality gives grouped ARD; one group per dimension gives classic ARD.
/// Group labels are contiguous 0..G-1.
class FeatureGrouping {
public:
    FeatureGrouping() = default;

    explicit FeatureGrouping(std::vector<int> group_of) : group_of_(std::move(group_of))
    {
        validate();
    }

    static FeatureGrouping isotropic(Index dim)
    {
        return FeatureGrouping(std::vector<int>(static_cast<std::size_t>(dim), 0));
    }

    static FeatureGrouping per_dimension(Index dim)
    {
        std::vector<int> g(static_cast<std::size_t>(dim));
        for (std::size_t d = 0; d < g.size(); ++d) g[d] = static_cast<int>(d);
        return FeatureGrouping(std::move(g));
    }

    /// Relabels arbitrary integer tags to contiguous group ids in order of
    /// first appearance.
    static FeatureGrouping from_tags(const std::vector<int>& tags)
    {
        std::vector<int> seen;
        std::vector<int> g;
        g.reserve(tags.size());
        for (int tag : tags) {
            auto it = std::find(seen.begin(), seen.end(), tag);
            if (it == seen.end()) {
                seen.push_back(tag);
                g.push_back(static_cast<int>(seen.size()) - 1);
            } else {
                g.push_back(static_cast<int>(it - seen.begin()));
            }
        }
        return FeatureGrouping(std::move(g));
    }

    Index n_features() const { return static_cast<Index>(group_of_.size()); }

    Index n_groups() const
    {
        if (group_of_.empty()) return 0;
        return *std::max_element(group_of_.begin(), group_of_.end()) + 1;
    }

    int group_of(Index d) const { return group_of_[static_cast<std::size_t>(d)]; }

    const std::vector<int>& labels() const { return group_of_; }

    bool operator==(const FeatureGrouping&) const = default;

private:
    void validate() const
    {
        if (group_of_.empty()) throw std::invalid_argument("FeatureGrouping: no features");
        const int g_max = *std::max_element(group_of_.begin(), group_of_.end());
        std::vector<bool> used(static_cast<std::size_t>(g_max) + 1, false);
        for (int g : group_of_) {
            if (g < 0) throw std::invalid_argument("FeatureGrouping: negative group label");
            used[static_cast<std::size_t>(g)] = true;
        }
        if (std::find(used.begin(), used.end(), false) != used.end())
            throw std::invalid_argument("FeatureGrouping: group labels must be contiguous 0..G-1");
    }

    std::vector<int> group_of_;
};

/// Kernel family. Isotropic shares one length-scale; ARD has one per
/// feature group.
enum class KernelKind { iso, ard };

// ---------------------------------------------------------------------------
// Hyperparameters
// ---------------------------------------------------------------------------

/// RBF hyperparameters, all in log space.
///
/// Flattened order (used by gradients and the optimizer):
/// [log l_0 .. log l_{G-1}, log sigma_f^2, log sigma_n^2].
template <typename Scalar>
struct Hyperparams {
    Vec<Scalar> log_lengthscales;
    Scalar log_signal_var{0};
    Scalar log_noise_var{0};

    Index n_lengthscales() const { return log_lengthscales.size(); }
    Index size() const { return log_lengthscales.size() + 2; }
    Index signal_index() const { return log_lengthscales.size(); }
    Index noise_index() const { return log_lengthscales.size() + 1; }

    Scalar signal_var() const { return std::exp(log_signal_var); }
    Scalar noise_var() const { return std::exp(log_noise_var); }
    Vec<Scalar> lengthscales() const { return log_lengthscales.array().exp(); }

    Vec<Scalar> to_vector() const
    {
        Vec<Scalar> v(size());
        v.head(n_lengthscales()) = log_lengthscales;
        v(signal_index()) = log_signal_var;
        v(noise_index()) = log_noise_var;
        return v;
    }

    static Hyperparams from_vector(const Vec<Scalar>& v)
    {
        if (v.size() < 3) throw std::invalid_argument("Hyperparams: vector too short");
        Hyperparams hp;
        hp.log_lengthscales = v.head(v.size() - 2);
        hp.log_signal_var = v(v.size() - 2);
        hp.log_noise_var = v(v.size() - 1);
        return hp;
    }

    static Hyperparams isotropic(Scalar log_lengthscale, Scalar log_signal, Scalar log_noise)
    {
        Hyperparams hp;
        hp.log_lengthscales = Vec<Scalar>::Constant(1, log_lengthscale);
        hp.log_signal_var = log_signal;
        hp.log_noise_var = log_noise;
        return hp;
    }
};

namespace detail {

template <typename Scalar>
void check_compatible(const Hyperparams<Scalar>& hp, const FeatureGrouping& grouping, Index dim)
{
    if (grouping.n_features() != dim)
        throw std::invalid_argument("kernel: grouping covers " + std::to_string(grouping.n_features()) +
                                    " features, input has " + std::to_string(dim));
    if (hp.n_lengthscales() != grouping.n_groups())
        throw std::invalid_argument("kernel: " + std::to_string(hp.n_lengthscales()) +
                                    " length-scales for " + std::to_string(grouping.n_groups()) +
                                    " groups");
    if (!hp.to_vector().allFinite()) throw std::invalid_argument("kernel: non-finite hyperparameters");
}

/// Per-dimension inverse length-scale 1 / l_{g(d)}.
template <typename Scalar>
Vec<Scalar> inverse_lengthscales(const Hyperparams<Scalar>& hp, const FeatureGrouping& grouping)
{
    Vec<Scalar> inv(grouping.n_features());
    for (Index d = 0; d < inv.size(); ++d)
        inv(d) = std::exp(-hp.log_lengthscales(grouping.group_of(d)));
    return inv;
}

template <typename A, typename B, typename Scalar>
Scalar scaled_sq_dist(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b, const Vec<Scalar>& inv_ls)
{
    Scalar s = 0;
    for (Index d = 0; d < inv_ls.size(); ++d) {
        const Scalar z = (a(d) - b(d)) * inv_ls(d);
        s += z * z;
    }
    return s;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Kernel evaluation
// ---------------------------------------------------------------------------

/// k(x, x2) = sigma_f^2 exp(-1/2 sum_d (x_d - x2_d)^2 / l_{g(d)}^2)
template <typename A, typename B, typename Scalar = typename A::Scalar>
Scalar kernel_value(const Eigen::MatrixBase<A>& x, const Eigen::MatrixBase<B>& x2,
                    const Hyperparams<Scalar>& hp, const FeatureGrouping& grouping)
{
    if (x.size() != x2.size()) throw std::invalid_argument("kernel_value: dimension mismatch");
    detail::check_compatible(hp, grouping, x.size());
    if (!x.allFinite() || !x2.allFinite()) throw std::invalid_argument("kernel_value: non-finite input");
    const Vec<Scalar> inv = detail::inverse_lengthscales(hp, grouping);
    return hp.signal_var() * std::exp(Scalar(-0.5) * detail::scaled_sq_dist(x, x2, inv));
}

/// Cross-covariance matrix; rows of X and X2 are points.
template <typename A, typename B, typename Scalar = typename A::Scalar>
Mat<Scalar> kernel_matrix(const Eigen::MatrixBase<A>& X, const Eigen::MatrixBase<B>& X2,
                          const Hyperparams<Scalar>& hp, const FeatureGrouping& grouping)
{
    if (X.cols() != X2.cols()) throw std::invalid_argument("kernel_matrix: dimension mismatch");
    detail::check_compatible(hp, grouping, X.cols());
    if (!X.allFinite() || !X2.allFinite()) throw std::invalid_argument("kernel_matrix: non-finite input");
    const Vec<Scalar> inv = detail::inverse_lengthscales(hp, grouping);
    const RowMat<Scalar> Xr = X;
    const RowMat<Scalar> X2r = X2;
    const Scalar sf2 = hp.signal_var();
    Mat<Scalar> K(X.rows(), X2.rows());
    for (Index j = 0; j < X2r.rows(); ++j)
        for (Index i = 0; i < Xr.rows(); ++i)
            K(i, j) = sf2 * std::exp(Scalar(-0.5) * detail::scaled_sq_dist(Xr.row(i), X2r.row(j), inv));
    return K;
}

/// Symmetric covariance k(X, X); the upper triangle is mirrored so the
/// result is exactly symmetric.
template <typename A, typename Scalar = typename A::Scalar>
Mat<Scalar> kernel_matrix(const Eigen::MatrixBase<A>& X, const Hyperparams<Scalar>& hp,
                          const FeatureGrouping& grouping)
{
    detail::check_compatible(hp, grouping, X.cols());
    if (!X.allFinite()) throw std::invalid_argument("kernel_matrix: non-finite input");
    const Vec<Scalar> inv = detail::inverse_lengthscales(hp, grouping);
    const RowMat<Scalar> Xr = X;
    const Scalar sf2 = hp.signal_var();
    const Index n = Xr.rows();
    Mat<Scalar> K(n, n);
    for (Index j = 0; j < n; ++j) {
        K(j, j) = sf2;
        for (Index i = 0; i < j; ++i) {
            const Scalar v = sf2 * std::exp(Scalar(-0.5) * detail::scaled_sq_dist(Xr.row(i), Xr.row(j), inv));
            K(i, j) = v;
            K(j, i) = v;
        }
    }
    return K;
}

/// Derivatives of the noisy covariance K + sigma_n^2 I with respect to each
/// log hyperparameter, in flattened order. The length-scale and signal
/// entries are derivatives of K itself; the last entry is sigma_n^2 I.
template <typename A, typename Scalar = typename A::Scalar>
std::vector<Mat<Scalar>> kernel_gradients(const Eigen::MatrixBase<A>& X, const Hyperparams<Scalar>& hp,
                                          const FeatureGrouping& grouping)
{
    if (X.rows() == 0) throw std::invalid_argument("kernel_gradients: empty input");
    const Mat<Scalar> K = kernel_matrix(X, hp, grouping);
    const Index n = X.rows();
    const Index G = hp.n_lengthscales();
    const Vec<Scalar> inv = detail::inverse_lengthscales(hp, grouping);
    const RowMat<Scalar> Xr = X;

    std::vector<Mat<Scalar>> grads(static_cast<std::size_t>(hp.size()), Mat<Scalar>::Zero(n, n));
    Vec<Scalar> per_group(G);
    for (Index j = 0; j < n; ++j) {
        for (Index i = 0; i < j; ++i) {
            per_group.setZero();
            for (Index d = 0; d < X.cols(); ++d) {
                const Scalar z = (Xr(i, d) - Xr(j, d)) * inv(d);
                per_group(grouping.group_of(d)) += z * z;
            }
            for (Index g = 0; g < G; ++g) {
                const Scalar v = K(i, j) * per_group(g);
                grads[static_cast<std::size_t>(g)](i, j) = v;
                grads[static_cast<std::size_t>(g)](j, i) = v;
            }
        }
    }
    grads[static_cast<std::size_t>(hp.signal_index())] = K;
    grads[static_cast<std::size_t>(hp.noise_index())] = Mat<Scalar>::Identity(n, n) * hp.noise_var();
    return grads;
}

// ---------------------------------------------------------------------------
// Cholesky with jitter escalation
// ---------------------------------------------------------------------------

template <typename Scalar>
struct CholeskyFactor {
    Mat<Scalar> lower;  ///< L with L L^T = A + jitter I
    Scalar jitter{0};

    Index size() const { return lower.rows(); }

    auto L() const { return lower.template triangularView<Eigen::Lower>(); }

    /// Solves (L L^T) Z = B.
    template <typename Derived>
    Mat<Scalar> solve(const Eigen::MatrixBase<Derived>& B) const
    {
        Mat<Scalar> Z = L().solve(B);
        lower.transpose().template triangularView<Eigen::Upper>().solveInPlace(Z);
        return Z;
    }

    /// Solves L Z = B.
    template <typename Derived>
    Mat<Scalar> half_solve(const Eigen::MatrixBase<Derived>& B) const
    {
        return L().solve(B);
    }

    Scalar log_det() const { return Scalar(2) * lower.diagonal().array().log().sum(); }
};

/// Factorizes a symmetric positive (semi)definite matrix. On failure adds
/// jitter starting at 1e-8 * mean(diag), growing by 10x up to
/// 1e-2 * mean(diag), then throws NumericError.
template <typename Derived, typename Scalar = typename Derived::Scalar>
CholeskyFactor<Scalar> robust_cholesky(const Eigen::MatrixBase<Derived>& A)
{
    if (A.rows() != A.cols()) throw std::invalid_argument("robust_cholesky: matrix not square");
    if (!A.allFinite()) throw NumericError("robust_cholesky: non-finite matrix entries");

    auto attempt = [&](Scalar jitter, CholeskyFactor<Scalar>& out) {
        Mat<Scalar> M = A;
        if (jitter > 0) M.diagonal().array() += jitter;
        Eigen::LLT<Mat<Scalar>> llt(M);
        if (llt.info() != Eigen::Success) return false;
        out.lower = llt.matrixL();
        const auto diag = out.lower.diagonal().array();
        if (!(diag > Scalar(0)).all() || !diag.allFinite()) return false;
        out.jitter = jitter;
        return true;
    };

    CholeskyFactor<Scalar> f;
    if (A.rows() == 0 || attempt(Scalar(0), f)) return f;

    const Scalar mean_diag = std::abs(A.diagonal().mean());
    const Scalar scale = mean_diag > Scalar(0) ? mean_diag : Scalar(1);
    for (Scalar rel = Scalar(1e-8); rel <= Scalar(1.5e-2); rel *= Scalar(10))
        if (attempt(rel * scale, f)) return f;
    throw NumericError("robust_cholesky: matrix not positive definite after jitter escalation (n=" +
                       std::to_string(A.rows()) + ")");
}

} // namespace pgpe

#endif // PGPE_KERNELS_HPP_
