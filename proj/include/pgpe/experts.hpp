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

#ifndef PGPE_EXPERTS_HPP_
#define PGPE_EXPERTS_HPP_

#include <array>
#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "pgpe/common.hpp"
#include "pgpe/gp.hpp"

namespace pgpe {

inline constexpr Index kMetaRawDim = 9;
inline constexpr Index kMetaDim = 55;  // 1 + 9 + 9*10/2

using Vector4 = Eigen::Matrix<double, 4, 1>;
using Mask4 = Eigen::Array<bool, 4, 1>;

// ---------------------------------------------------------------------------
// Two-expert mixture
// ---------------------------------------------------------------------------

double clamp_alpha(double alpha);

/// alpha * pGP + (1 - alpha) * tGP; variance alpha^2 V_p + (1-alpha)^2 V_t.
/// alpha outside [0, 1] is clamped with a warning.
template <typename Scalar>
Forecast<Scalar> mix(const Forecast<Scalar>& f_p, const Forecast<Scalar>& f_t, double alpha)
{
    if (f_p.mean.size() != f_t.mean.size()) throw std::invalid_argument("mix: forecast lengths differ");
    const Scalar a = static_cast<Scalar>(clamp_alpha(alpha));
    if (a == Scalar(1)) return f_p;
    if (a == Scalar(0)) return f_t;
    Forecast<Scalar> f;
    f.mean = a * f_p.mean + (Scalar(1) - a) * f_t.mean;
    f.variance = a * a * f_p.variance + (Scalar(1) - a) * (Scalar(1) - a) * f_t.variance;
    return f;
}

/// Per-horizon weights; point predictions only.
Vector4 mix_means(const Vector4& mu_p, const Vector4& mu_t, const Vector4& alphas);

/// Least-squares optimal mixing weight over the masked-in horizons,
/// clamped to [0, 1]; 0.5 when the experts (nearly) agree.
double optimal_alpha(const Vector4& mu_p, const Vector4& mu_t, const Vector4& y_true, const Mask4& mask);

// ---------------------------------------------------------------------------
// Meta-features
// ---------------------------------------------------------------------------

/// Raw 9-vector [mu_p (4), mu_t (4), y_t], centered by its own mean,
/// expanded to every monomial of degree <= 2 (constant, 9 linear, 45
/// quadratic) and scaled to unit Euclidean norm.
///
/// Layout: [1, c_0..c_8, c_0c_0, c_0c_1, .., c_0c_8, c_1c_1, .., c_8c_8].
Eigen::VectorXd build_meta_features(const Vector4& mu_p, const Vector4& mu_t, double y_t);

/// True when the centered raw vector is identically zero (all nine inputs
/// equal); the expanded vector is then [1, 0, ..., 0].
bool meta_features_degenerate(const Vector4& mu_p, const Vector4& mu_t, double y_t);

struct MetaSample {
    Eigen::VectorXd raw;       ///< length 9
    Eigen::VectorXd expanded;  ///< length 55
    double alpha_opt = 0.5;
    bool degenerate = false;

    static MetaSample make(const Vector4& mu_p, const Vector4& mu_t, double y_t, double alpha_opt);
};

// ---------------------------------------------------------------------------
// Weight regression
// ---------------------------------------------------------------------------

struct MetaGp {
    GpModel<double> gp;
};

/// Meta-GP defaults: ARD over all 55 dimensions, noise starting at 0.01
/// and floored at 1e-6.
GpFitConfig<double> default_meta_fit_config();

/// Fits alpha_opt ~ GP(expanded meta-features). Callers pass training-fold
/// samples only.
MetaGp fit_meta_gp(std::span<const MetaSample> samples, const GpFitConfig<double>& config);
MetaGp fit_meta_gp(std::span<const MetaSample> samples);

double predict_alpha(const MetaGp& model, const Vector4& mu_p, const Vector4& mu_t, double y_t);

// ---------------------------------------------------------------------------
// Baseline weighting tables
// ---------------------------------------------------------------------------

/// Mean absolute error per (visit, horizon) for each expert. Cells without
/// data hold NaN.
struct PerVisitMae {
    Eigen::MatrixXd pgp;  ///< visits x 4
    Eigen::MatrixXd tgp;  ///< visits x 4
    Eigen::MatrixXi count;
};

/// Subject x visit encoding per horizon: -1 pGP strictly better, +1 tGP
/// strictly better, 0 no data or exact tie.
struct Dominance {
    std::vector<std::string> subjects;
    std::array<Eigen::MatrixXi, 4> per_horizon;  ///< subjects x visits

    Index n_subjects() const { return per_horizon[0].rows(); }
    Index n_visits() const { return per_horizon[0].cols(); }
};

/// Weight per (visit, horizon); visits beyond the table use `fallback`.
struct VisitTable {
    Eigen::MatrixXd alpha;  ///< visits x 4, entries in [0, 1]
    double fallback = 0.5;

    double at(int visit, Index horizon) const;
};

struct PriorWeights { VisitTable table; };
struct FreqWeights { VisitTable table; };
struct AveWeights {};
struct VarWeights {};
struct RegWeights { std::shared_ptr<const MetaGp> meta; };
struct OptWeights {};
struct RandWeights { std::uint64_t seed = 0; };

using WeightScheme = std::variant<PriorWeights, FreqWeights, AveWeights, VarWeights, RegWeights, OptWeights, RandWeights>;

std::string_view scheme_tag(const WeightScheme& scheme);

/// pGP weight 1 where its mean MAE is <= tGP's (ties and empty cells go to
/// pGP), else 0.
PriorWeights weights_prior(const PerVisitMae& mae);

/// Fraction of subjects with data for whom pGP wins; 0.5 where no subject
/// has data.
FreqWeights weights_freq(const Dominance& dominance);

/// Inverse-variance (precision) weight of pGP.
double weight_var(double var_p, double var_t);

/// Everything a scheme may look at for one forecast.
struct WeightQuery {
    int visit = 0;
    Vector4 mu_p = Vector4::Zero();
    Vector4 mu_t = Vector4::Zero();
    double var_p = 0.0;
    double var_t = 0.0;
    double y_t = 0.0;
    // only read by the oracle scheme
    Vector4 y_true = Vector4::Zero();
    Mask4 mask = Mask4::Constant(false);
    // only read by the random scheme
    std::uint64_t sample_key = 0;
};

/// Per-horizon weights chosen by `scheme`, each in [0, 1].
Vector4 scheme_alphas(const WeightScheme& scheme, const WeightQuery& q);

} // namespace pgpe

#endif // PGPE_EXPERTS_HPP_
