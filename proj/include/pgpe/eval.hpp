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

// Subject-independent cross-validation of the forecasting models.

#ifndef PGPE_EVAL_HPP_
#define PGPE_EVAL_HPP_

#include <array>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pgpe/dataset.hpp"
#include "pgpe/experts.hpp"
#include "pgpe/gp.hpp"
#include "pgpe/personalize.hpp"

namespace pgpe {

// ---------------------------------------------------------------------------
// Model roster
// ---------------------------------------------------------------------------

enum class ModelId {
    base_yt,
    sgp_vis,
    sgp_iso,
    sgp_ard,
    pgp,
    tgp,
    pgpe_prior,
    pgpe_freq,
    pgpe_ave,
    pgpe_var,
    pgpe_reg,
    pgpe_opt,
    pgpe_rand,  ///< uniform random weights; ablation only
};

std::string_view model_name(ModelId id);
std::optional<ModelId> parse_model(std::string_view name);
/// Every model except the random-weight ablation.
std::vector<ModelId> default_roster();
bool is_pgpe(ModelId id);

/// Throws ConfigError for duplicates or a pGPE entry without both pGP and tGP.
void validate_roster(const std::vector<ModelId>& roster);

// ---------------------------------------------------------------------------
// Folds
// ---------------------------------------------------------------------------

struct FoldPlan {
    std::vector<std::string> subjects;  ///< cohort order
    std::vector<int> fold_of;           ///< parallel to `subjects`
    int k = 0;
    std::uint64_t seed = 0;

    std::vector<std::string> members(int fold) const;
    std::vector<std::string> complement(int fold) const;
    int fold(const std::string& subject_id) const;
};

/// Seeded subject-level shuffle dealt round-robin, so fold sizes differ by
/// at most one.
FoldPlan make_folds(const Cohort& cohort, int k, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

struct OptimizerSettings {
    int max_iterations = 200;
    double gradient_tolerance = 1e-5;
    double relative_tolerance = 0.0;
    int restarts = 3;
    Index max_fit_rows = 0;
    bool optimize_noise = true;
    bool center_targets = true;

    void apply(GpFitConfig<double>& c) const;
};

struct ExperimentConfig {
    OptimizerSettings sgp;
    OptimizerSettings meta;
    /// Subject-level cross-fitting folds used to produce the training-set
    /// expert forecasts that weight schemes learn from; <= 1 evaluates the
    /// fold's own population model in-sample.
    int inner_folds = 5;
    int jobs = 1;
    std::uint64_t seed = 0;
    std::string config_echo;  ///< resolved configuration, embedded in reports
};

/// Both experts' forecast for one training or test window.
struct ExpertRecord {
    std::string subject_id;
    int visit = 0;
    double y_t = 0.0;
    Vector4 mu_p = Vector4::Zero();
    Vector4 mu_t = Vector4::Zero();
    double var_p = 0.0;
    double var_t = 0.0;
    Vector4 y_true = Vector4::Zero();
    Mask4 mask = Mask4::Constant(false);
    bool population_fallback = false;
};

/// Everything fitted on one training split. Never reads held-out subjects.
struct FittedFold {
    int fold = -1;  ///< -1: fitted on the whole cohort
    std::vector<std::string> raw_feature_names;
    std::vector<int> raw_modality;
    std::vector<std::string> train_ids;
    ImputeMeans impute;
    NormStats norm;
    std::optional<GpModel<double>> sgp_ard;
    std::optional<GpModel<double>> sgp_iso;
    std::optional<GpModel<double>> sgp_vis;
    std::optional<PriorWeights> prior;
    std::optional<FreqWeights> freq;
    std::shared_ptr<const MetaGp> meta;
    std::vector<ExpertRecord> train_records;
};

/// Fits the models `roster` needs on `train_ids`.
FittedFold fit_training_split(const Cohort& cohort, const std::vector<std::string>& train_ids,
                              const std::vector<ModelId>& roster, const ExperimentConfig& config,
                              std::uint64_t seed);

/// Sequential expert forecasts for every window of the given normalized
/// subjects, using `model` as the population GP. History at visit t holds
/// the windows of earlier visits built from data up to t.
std::vector<ExpertRecord> expert_records(const GpModel<double>& model, const Cohort& normalized,
                                         const NormStats& stats, const std::vector<std::string>& subject_ids,
                                         FeaturePreset preset);

/// Weight scheme for a pGPE roster entry.
WeightScheme scheme_for(const FittedFold& fitted, ModelId id, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Forecasting one subject
// ---------------------------------------------------------------------------

struct SampleForecast {
    std::string subject_id;
    int fold = -1;
    int visit = 0;
    int ordinal = 0;  ///< 1-based position among the subject's windows
    double y_t = 0.0;
    Vector4 y_true = Vector4::Zero();
    Mask4 mask = Mask4::Constant(false);
    bool population_fallback = false;
    double var_sgp = 0.0;
    double var_p = 0.0;
    double var_t = 0.0;
    std::vector<Vector4> predictions;  ///< parallel to the roster
    std::vector<Vector4> variances;    ///< predictive variance, NaN for Base(y_t)
    std::vector<Vector4> alpha;        ///< per-horizon pGP weight, NaN for non-pGPE entries
};

/// Forecasts of every roster model for each window of one raw subject.
std::vector<SampleForecast> forecast_subject(const FittedFold& fitted, const Subject& raw,
                                             const std::vector<ModelId>& roster, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct HorizonMae {
    std::array<std::optional<double>, 4> mae;
    std::optional<double> average;  ///< mean of the present horizons
};

HorizonMae mae_per_horizon(std::span<const Vector4> predictions, std::span<const Vector4> truths,
                           std::span<const Mask4> masks);

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
    bool degenerate = false;  ///< zero-variance differences
};

/// Two-sided paired t-test.
TTestResult paired_ttest(std::span<const double> a, std::span<const double> b);

/// Regularized incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);

/// Two-sided tail probability of Student's t with `df` degrees of freedom.
double student_t_two_sided(double t, double df);

struct SampleErrors {
    std::string subject_id;
    int visit = 0;
    Vector4 err_pgp;  ///< absolute error, NaN where unobserved
    Vector4 err_tgp;
};

Dominance dominance_matrix(std::span<const SampleErrors> errors);
PerVisitMae per_visit_mae(std::span<const SampleErrors> errors);
std::vector<SampleErrors> sample_errors(std::span<const ExpertRecord> records);

// ---------------------------------------------------------------------------
// Experiment
// ---------------------------------------------------------------------------

struct ModelSummary {
    ModelId id{};
    std::array<double, 4> mae_mean{};
    std::array<double, 4> mae_std{};
    double avg_mean = 0.0;
    double avg_std = 0.0;
    Eigen::MatrixXd fold_mae;  ///< folds x 4, NaN where a fold lacks data
    std::optional<TTestResult> vs_reg;
};

struct EvalReport {
    std::vector<ModelId> roster;
    std::vector<ModelSummary> models;
    std::vector<SampleForecast> samples;
    PerVisitMae per_visit;  ///< test-set pGP / tGP MAE per visit
    Dominance dominance;    ///< test-set, subjects in cohort order
    /// group -> visit -> (count, mean observed score)
    std::map<std::string, std::map<int, std::pair<int, double>>> group_scores;
    std::vector<std::map<std::string, double>> fold_info;
    std::string config_echo;

    const ModelSummary* summary(ModelId id) const;
};

EvalReport run_experiment(const Cohort& cohort, const FoldPlan& plan, const std::vector<ModelId>& roster,
                          const ExperimentConfig& config);

/// Table-style CSV: rows = models, columns t+1..t+4, Avg as "mean±std".
std::string report_table_csv(const EvalReport& report);
/// Full structured report.
std::string report_json(const EvalReport& report);
/// Subject x visit dominance for horizon h (0-based).
std::string dominance_csv(const EvalReport& report, int horizon);

/// Writes table.csv, report.json and dominance_h1..4.csv into `dir`.
void write_report(const EvalReport& report, const std::string& dir);

} // namespace pgpe

#endif // PGPE_EVAL_HPP_
