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

#include "pgpe/experts.hpp"

#include <algorithm>
#include <cmath>

#include <spdlog/spdlog.h>

namespace pgpe {

double clamp_alpha(double alpha)
{
    if (std::isnan(alpha)) {
        spdlog::warn("mixing weight is NaN, using 0.5");
        return 0.5;
    }
    if (alpha < 0.0 || alpha > 1.0) {
        spdlog::warn("mixing weight {} outside [0, 1], clamped", alpha);
        return std::clamp(alpha, 0.0, 1.0);
    }
    return alpha;
}

Vector4 mix_means(const Vector4& mu_p, const Vector4& mu_t, const Vector4& alphas)
{
    Vector4 a;
    for (Index k = 0; k < 4; ++k) a(k) = clamp_alpha(alphas(k));
    return a.cwiseProduct(mu_p) + (Vector4::Ones() - a).cwiseProduct(mu_t);
}

double optimal_alpha(const Vector4& mu_p, const Vector4& mu_t, const Vector4& y_true, const Mask4& mask)
{
    if (!mask.any()) throw std::invalid_argument("optimal_alpha: no observed horizon");
    double num = 0.0;
    double den = 0.0;
    for (Index k = 0; k < 4; ++k) {
        if (!mask(k)) continue;
        const double diff = mu_p(k) - mu_t(k);
        num += (y_true(k) - mu_t(k)) * diff;
        den += diff * diff;
    }
    if (den < 1e-12) return 0.5;
    return std::clamp(num / den, 0.0, 1.0);
}

namespace {

Eigen::Matrix<double, 9, 1> centered_raw(const Vector4& mu_p, const Vector4& mu_t, double y_t)
{
    Eigen::Matrix<double, 9, 1> m;
    m << mu_p, mu_t, y_t;
    if (!m.allFinite()) throw std::invalid_argument("build_meta_features: non-finite input");
    // the rounded mean of equal values need not equal them
    if (m.maxCoeff() == m.minCoeff()) return Eigen::Matrix<double, 9, 1>::Zero();
    m.array() -= m.mean();
    return m;
}

} // namespace

Eigen::VectorXd build_meta_features(const Vector4& mu_p, const Vector4& mu_t, double y_t)
{
    const auto c = centered_raw(mu_p, mu_t, y_t);
    Eigen::VectorXd e(kMetaDim);
    Index k = 0;
    e(k++) = 1.0;
    for (Index i = 0; i < kMetaRawDim; ++i) e(k++) = c(i);
    for (Index i = 0; i < kMetaRawDim; ++i)
        for (Index j = i; j < kMetaRawDim; ++j) e(k++) = c(i) * c(j);
    return e / e.norm();
}

bool meta_features_degenerate(const Vector4& mu_p, const Vector4& mu_t, double y_t)
{
    return centered_raw(mu_p, mu_t, y_t).isZero(0.0);
}

MetaSample MetaSample::make(const Vector4& mu_p, const Vector4& mu_t, double y_t, double alpha_opt)
{
    MetaSample s;
    s.raw.resize(kMetaRawDim);
    s.raw << mu_p, mu_t, y_t;
    s.expanded = build_meta_features(mu_p, mu_t, y_t);
    s.degenerate = meta_features_degenerate(mu_p, mu_t, y_t);
    s.alpha_opt = alpha_opt;
    return s;
}

GpFitConfig<double> default_meta_fit_config()
{
    GpFitConfig<double> c;
    c.grouping = FeatureGrouping::per_dimension(kMetaDim);
    c.initial_noise_var = 0.01;
    c.min_noise_var = 1e-6;
    // per-dimension medians would put every pair ~sqrt(55) length-scales
    // apart and start from a diagonal kernel
    c.lengthscale_init_scale = std::sqrt(static_cast<double>(kMetaDim));
    return c;
}

MetaGp fit_meta_gp(std::span<const MetaSample> samples, const GpFitConfig<double>& config)
{
    if (samples.size() < 10) throw std::invalid_argument("fit_meta_gp: need at least 10 samples");
    const auto n = static_cast<Index>(samples.size());
    Eigen::MatrixXd X(n, kMetaDim);
    Eigen::MatrixXd Y(n, 1);
    for (Index i = 0; i < n; ++i) {
        const auto& s = samples[static_cast<std::size_t>(i)];
        if (s.expanded.size() != kMetaDim) throw std::invalid_argument("fit_meta_gp: sample is not 55-dimensional");
        X.row(i) = s.expanded.transpose();
        Y(i, 0) = s.alpha_opt;
    }
    GpFitConfig<double> c = config;
    if (c.grouping.n_features() != kMetaDim) c.grouping = FeatureGrouping::per_dimension(kMetaDim);
    return MetaGp{fit_sgp(X, Y, c)};
}

MetaGp fit_meta_gp(std::span<const MetaSample> samples)
{
    return fit_meta_gp(samples, default_meta_fit_config());
}

double predict_alpha(const MetaGp& model, const Vector4& mu_p, const Vector4& mu_t, double y_t)
{
    const Eigen::VectorXd m = build_meta_features(mu_p, mu_t, y_t);
    const double a = predict_sgp(model.gp, m).mean(0);
    return std::isfinite(a) ? std::clamp(a, 0.0, 1.0) : 0.5;
}

double VisitTable::at(int visit, Index horizon) const
{
    if (visit < 0 || visit >= alpha.rows()) return fallback;
    return alpha(visit, horizon);
}

std::string_view scheme_tag(const WeightScheme& scheme)
{
    struct Tag {
        std::string_view operator()(const PriorWeights&) const { return "prior"; }
        std::string_view operator()(const FreqWeights&) const { return "freq"; }
        std::string_view operator()(const AveWeights&) const { return "ave"; }
        std::string_view operator()(const VarWeights&) const { return "var"; }
        std::string_view operator()(const RegWeights&) const { return "reg"; }
        std::string_view operator()(const OptWeights&) const { return "opt"; }
        std::string_view operator()(const RandWeights&) const { return "rand"; }
    };
    return std::visit(Tag{}, scheme);
}

PriorWeights weights_prior(const PerVisitMae& mae)
{
    if (mae.pgp.rows() != mae.tgp.rows() || mae.pgp.cols() != 4 || mae.tgp.cols() != 4)
        throw std::invalid_argument("weights_prior: table shape mismatch");
    PriorWeights w;
    w.table.fallback = 1.0;
    w.table.alpha.resize(mae.pgp.rows(), 4);
    for (Index v = 0; v < mae.pgp.rows(); ++v)
        for (Index k = 0; k < 4; ++k) {
            const double p = mae.pgp(v, k);
            const double t = mae.tgp(v, k);
            // NaN compares false: an empty cell keeps pGP
            w.table.alpha(v, k) = (t < p) ? 0.0 : 1.0;
        }
    return w;
}

FreqWeights weights_freq(const Dominance& dominance)
{
    FreqWeights w;
    w.table.fallback = 0.5;
    const Index n_visits = dominance.n_visits();
    w.table.alpha.resize(n_visits, 4);
    for (Index k = 0; k < 4; ++k) {
        const auto& D = dominance.per_horizon[static_cast<std::size_t>(k)];
        for (Index v = 0; v < n_visits; ++v) {
            const auto col = D.col(v).array();
            const Index wins = (col == -1).count();
            const Index with_data = (col != 0).count();
            w.table.alpha(v, k) = with_data > 0 ? static_cast<double>(wins) / static_cast<double>(with_data) : 0.5;
        }
    }
    return w;
}

double weight_var(double var_p, double var_t)
{
    constexpr double eps = 1e-12;
    const bool p_certain = var_p < eps;
    const bool t_certain = var_t < eps;
    if (p_certain && t_certain) return 0.5;
    if (p_certain) return 1.0;
    if (t_certain) return 0.0;
    const double prec_p = 1.0 / var_p;
    const double prec_t = 1.0 / var_t;
    return prec_p / (prec_p + prec_t);
}

namespace {

std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

} // namespace

Vector4 scheme_alphas(const WeightScheme& scheme, const WeightQuery& q)
{
    struct Visitor {
        const WeightQuery& q;
        Vector4 operator()(const PriorWeights& w) const { return table(w.table); }
        Vector4 operator()(const FreqWeights& w) const { return table(w.table); }
        Vector4 operator()(const AveWeights&) const { return Vector4::Constant(0.5); }
        Vector4 operator()(const VarWeights&) const { return Vector4::Constant(weight_var(q.var_p, q.var_t)); }
        Vector4 operator()(const RegWeights& w) const
        {
            if (!w.meta) throw std::logic_error("scheme_alphas: regression scheme without a fitted model");
            return Vector4::Constant(predict_alpha(*w.meta, q.mu_p, q.mu_t, q.y_t));
        }
        Vector4 operator()(const OptWeights&) const
        {
            if (!q.mask.any()) return Vector4::Constant(0.5);
            return Vector4::Constant(optimal_alpha(q.mu_p, q.mu_t, q.y_true, q.mask));
        }
        Vector4 operator()(const RandWeights& w) const
        {
            const std::uint64_t h = splitmix64(w.seed ^ splitmix64(q.sample_key));
            return Vector4::Constant(static_cast<double>(h >> 11) * 0x1.0p-53);
        }
        Vector4 table(const VisitTable& t) const
        {
            Vector4 a;
            for (Index k = 0; k < 4; ++k) a(k) = t.at(q.visit, k);
            return a;
        }
    };
    return std::visit(Visitor{q}, scheme);
}

} // namespace pgpe
