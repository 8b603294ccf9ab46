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

// Longitudinal cohorts: CSV ingestion, causal imputation, z-normalization,
// forecast-window construction and a synthetic cohort generator.
//
// Pipeline order is fixed: impute_forward -> apply_norm -> build_windows.

#ifndef PGPE_DATASET_HPP_
#define PGPE_DATASET_HPP_

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "pgpe/common.hpp"
#include "pgpe/experts.hpp"
#include "pgpe/kernels.hpp"

namespace pgpe {

inline constexpr double kMaxScore = 85.0;

/// Where a value came from.
enum class FillSource : std::uint8_t {
    observed,
    carried_forward,  ///< most recent past observation of the same subject
    population_mean,  ///< no past observation; training-fold mean
    missing,          ///< not yet imputed
};

struct Visit {
    int visit_index = 0;                    ///< 0-based, six-month grid
    Eigen::VectorXd features;               ///< NaN where missing
    std::vector<FillSource> feature_source;
    std::optional<double> score;
    FillSource score_source = FillSource::missing;

    bool score_observed() const { return score_source == FillSource::observed; }
    /// Score known at this visit from this or an earlier observation.
    bool score_defined() const
    {
        return score_source == FillSource::observed || score_source == FillSource::carried_forward;
    }
};

struct Subject {
    std::string id;
    std::string group_label;  ///< CN, CN->MCI, MCI, AD or empty; metadata only
    std::vector<Visit> visits;  ///< strictly increasing visit_index
};

struct Cohort {
    std::vector<std::string> feature_names;
    std::vector<int> modality;  ///< modality tag per feature (k of an "mk_" prefix)
    std::vector<Subject> subjects;

    Index n_features() const { return static_cast<Index>(feature_names.size()); }
    const Subject* find(const std::string& id) const;
};

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Parses the cohort CSV schema:
///   subject_id,visit_index,group_label,m1_*,...,m6_*,adas13
/// Empty cells are missing values; lines starting with '#' are comments.
Cohort read_cohort(std::istream& in, const std::string& source = "<stream>");
Cohort load_cohort(const std::string& path);

/// Writes observed values only, so imputed cohorts write back their raw data.
/// `comment`, when not empty, is emitted as a leading '#' line.
void write_cohort(std::ostream& out, const Cohort& cohort, const std::string& comment = {});
void save_cohort(const std::string& path, const Cohort& cohort, const std::string& comment = {});

/// Keeps subjects whose raw missing fraction (features and scores over all
/// visits) does not exceed `max_missing_fraction`.
Cohort filter_by_missingness(const Cohort& cohort, double max_missing_fraction);

double missing_fraction(const Subject& subject);
double missing_fraction(const Cohort& cohort);

Cohort select_subjects(const Cohort& cohort, const std::vector<std::string>& ids);

// ---------------------------------------------------------------------------
// Imputation and normalization
// ---------------------------------------------------------------------------

struct ImputeMeans {
    Eigen::VectorXd feature_mean;
    double score_mean = 0.0;
};

/// Means of the observed raw values over the given (training) cohort.
ImputeMeans fit_impute_means(const Cohort& training);

/// Forward fill: each missing value takes the subject's most recent past
/// observation; values with no past observation take the training mean.
/// Never reads a later visit.
Cohort impute_forward(const Cohort& cohort, const ImputeMeans& means);

struct NormStats {
    Eigen::VectorXd mean;  ///< per original feature
    Eigen::VectorXd std;
    std::vector<Index> kept;     ///< original indices retained
    std::vector<Index> dropped;  ///< constant on the training data
    double score_mean = 0.0;     ///< for the y_t predictor
    double score_std = 1.0;
};

/// Statistics of an imputed training cohort.
NormStats fit_norm(const Cohort& imputed_training);

/// z-scores features with training statistics and removes dropped columns.
/// Scores are left in their natural units.
Cohort apply_norm(const Cohort& imputed, const NormStats& stats);

// ---------------------------------------------------------------------------
// Forecast windows
// ---------------------------------------------------------------------------

enum class FeaturePreset { full, vis };

struct WindowSample {
    std::string subject_id;
    int t = 0;            ///< visit index
    Eigen::VectorXd x;    ///< features then normalized y_t (full) or y_t alone (vis)
    Vector4 y_future = Vector4::Zero();
    Mask4 mask = Mask4::Constant(false);  ///< true where genuinely observed
    double y_t = 0.0;     ///< current score, natural units
};

/// One sample per visit with a defined current score. Entry k of the window
/// is the score at visit t+k when observed; otherwise the latest observed
/// score at or before t+k is repeated and the mask is false.
std::vector<WindowSample> build_windows(const Subject& normalized, const NormStats& stats, FeaturePreset preset);

/// Visits with index <= t. Windows of a truncated subject only use
/// information available at visit t.
Subject truncate(const Subject& subject, int t);

/// Input grouping for windows of `normalized`: one group per modality plus
/// one for y_t (ard), a single group (iso), or y_t alone (vis).
FeatureGrouping input_grouping(const Cohort& normalized, FeaturePreset preset, KernelKind kernel);

// ---------------------------------------------------------------------------
// Synthetic cohorts
// ---------------------------------------------------------------------------

/// Generator settings. Subjects follow one of two regimes:
///  - population-like: scores track a shared sigmoid of a latent disease
///    stage that the features measure;
///  - idiosyncratic: an atypical biomarker profile (shifted features) and a
///    personal score trend the features do not explain.
struct SynthConfig {
    int n_subjects = 100;
    int n_visits = 13;
    int n_features = 24;
    int n_modalities = 6;
    double idiosyncratic_fraction = 0.5;
    double feature_shift = 2.5;        ///< SD units, idiosyncratic profiles
    double feature_noise = 0.5;
    double score_noise = 1.0;
    double personal_trend = 1.5;       ///< SD of idiosyncratic slope, points per visit
    double missing_feature_rate = 0.1;
    double missing_score_rate = 0.05;
    double missing_visit_rate = 0.05;  ///< whole visits absent from the grid
    bool yearly_after_fifth = false;   ///< drop odd visits after the fifth

    void validate() const;
};

Cohort synth_cohort(const SynthConfig& config, std::uint64_t seed);

} // namespace pgpe

#endif // PGPE_DATASET_HPP_
