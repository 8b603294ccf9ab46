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

#include "pgpe/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

namespace pgpe {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct ModelInfo {
    ModelId id;
    std::string_view name;
    std::string_view token;
};

constexpr std::array<ModelInfo, 13> kModels{{
    {ModelId::base_yt, "Base(y_t)", "base"},
    {ModelId::sgp_vis, "sGP(VIS)", "sgp_vis"},
    {ModelId::sgp_iso, "sGP(RBF-iso)", "sgp_iso"},
    {ModelId::sgp_ard, "sGP(RBF-ard)", "sgp_ard"},
    {ModelId::pgp, "pGP", "pgp"},
    {ModelId::tgp, "tGP", "tgp"},
    {ModelId::pgpe_prior, "pGPE(W_prior)", "pgpe_prior"},
    {ModelId::pgpe_freq, "pGPE(W_freq)", "pgpe_freq"},
    {ModelId::pgpe_ave, "pGPE(W_ave)", "pgpe_ave"},
    {ModelId::pgpe_var, "pGPE(W_var)", "pgpe_var"},
    {ModelId::pgpe_reg, "pGPE(W_reg)", "pgpe_reg"},
    {ModelId::pgpe_opt, "pGPE(W_opt)", "pgpe_opt"},
    {ModelId::pgpe_rand, "pGPE(W_rand)", "pgpe_rand"},
}};

bool contains(const std::vector<ModelId>& roster, ModelId id)
{
    return std::find(roster.begin(), roster.end(), id) != roster.end();
}

bool needs_ard(const std::vector<ModelId>& roster)
{
    return std::any_of(roster.begin(), roster.end(), [](ModelId id) {
        return id == ModelId::sgp_ard || id == ModelId::pgp || id == ModelId::tgp || is_pgpe(id);
    });
}

bool needs_records(const std::vector<ModelId>& roster)
{
    return contains(roster, ModelId::pgpe_prior) || contains(roster, ModelId::pgpe_freq) ||
           contains(roster, ModelId::pgpe_reg);
}

/// FNV-1a over the subject id and visit; stable across platforms.
std::uint64_t sample_key(const std::string& id, int visit)
{
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&](unsigned char c) {
        h ^= c;
        h *= 1099511628211ULL;
    };
    for (char c : id) mix(static_cast<unsigned char>(c));
    mix(0xff);
    for (int i = 0; i < 4; ++i) mix(static_cast<unsigned char>((static_cast<unsigned>(visit) >> (8 * i)) & 0xffu));
    return h;
}

void stack_windows(const std::vector<WindowSample>& windows, Eigen::MatrixXd& X, Eigen::MatrixXd& Y)
{
    const auto n = static_cast<Index>(windows.size());
    X.resize(n, n ? windows.front().x.size() : 0);
    Y.resize(n, kHorizons);
    for (Index i = 0; i < n; ++i) {
        X.row(i) = windows[static_cast<std::size_t>(i)].x.transpose();
        Y.row(i) = windows[static_cast<std::size_t>(i)].y_future.transpose();
    }
}

std::vector<WindowSample> cohort_windows(const Cohort& normalized, const std::vector<std::string>& ids,
                                         const NormStats& stats, FeaturePreset preset)
{
    std::vector<WindowSample> out;
    for (const auto& id : ids) {
        const Subject* s = normalized.find(id);
        if (!s) throw std::invalid_argument("unknown subject '" + id + "'");
        auto w = build_windows(*s, stats, preset);
        out.insert(out.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
    }
    return out;
}

/// Windows of visits before `t`, built from data up to `t`.
SubjectHistory<double> history_at(const Subject& s, const NormStats& stats, FeaturePreset preset, int t)
{
    auto windows = build_windows(truncate(s, t), stats, preset);
    std::erase_if(windows, [&](const WindowSample& w) { return w.t >= t; });
    SubjectHistory<double> h;
    stack_windows(windows, h.X, h.Y);
    return h;
}

double finite_mean(const std::vector<double>& v)
{
    double sum = 0.0;
    int n = 0;
    for (double x : v)
        if (!std::isnan(x)) {
            sum += x;
            ++n;
        }
    return n ? sum / n : kNaN;
}

double finite_std(const std::vector<double>& v)
{
    const double m = finite_mean(v);
    double ss = 0.0;
    int n = 0;
    for (double x : v)
        if (!std::isnan(x)) {
            ss += (x - m) * (x - m);
            ++n;
        }
    return n > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
}

std::string fixed(double v, int digits = 4)
{
    if (std::isnan(v)) return "NA";
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(digits);
    os << v;
    return os.str();
}

nlohmann::ordered_json number_or_null(double v)
{
    if (!std::isfinite(v)) return nullptr;
    return v;
}

nlohmann::ordered_json vec_json(const Vector4& v)
{
    auto a = nlohmann::ordered_json::array();
    for (Index k = 0; k < kHorizons; ++k) a.push_back(number_or_null(v(k)));
    return a;
}

nlohmann::ordered_json matrix_json(const Eigen::MatrixXd& m)
{
    auto rows = nlohmann::ordered_json::array();
    for (Index i = 0; i < m.rows(); ++i) {
        auto r = nlohmann::ordered_json::array();
        for (Index j = 0; j < m.cols(); ++j) r.push_back(number_or_null(m(i, j)));
        rows.push_back(std::move(r));
    }
    return rows;
}

nlohmann::ordered_json config_json(const std::string& echo)
{
    if (echo.empty()) return nlohmann::ordered_json::object();
    try {
        return nlohmann::ordered_json::parse(echo);
    } catch (const nlohmann::json::exception&) {
        return echo;
    }
}

/// Average MAE of each model on the restricted clinical cohort the method
/// was designed on; reported as context, never compared against.
constexpr std::array<std::pair<std::string_view, double>, 12> kReferenceAvg{{
    {"Base(y_t)", 4.34},
    {"sGP(VIS)", 4.02},
    {"sGP(RBF-iso)", 4.50},
    {"sGP(RBF-ard)", 3.86},
    {"pGP", 3.76},
    {"tGP", 4.01},
    {"pGPE(W_prior)", 3.76},
    {"pGPE(W_freq)", 3.63},
    {"pGPE(W_ave)", 3.61},
    {"pGPE(W_var)", 3.95},
    {"pGPE(W_reg)", 2.65},
    {"pGPE(W_opt)", 1.58},
}};

std::string single_line(std::string s)
{
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

} // namespace

// ---------------------------------------------------------------------------
// Roster
// ---------------------------------------------------------------------------

std::string_view model_name(ModelId id)
{
    for (const auto& m : kModels)
        if (m.id == id) return m.name;
    return "?";
}

std::optional<ModelId> parse_model(std::string_view name)
{
    for (const auto& m : kModels)
        if (m.name == name || m.token == name) return m.id;
    return std::nullopt;
}

std::vector<ModelId> default_roster()
{
    std::vector<ModelId> r;
    for (const auto& m : kModels)
        if (m.id != ModelId::pgpe_rand) r.push_back(m.id);
    return r;
}

bool is_pgpe(ModelId id)
{
    switch (id) {
    case ModelId::pgpe_prior:
    case ModelId::pgpe_freq:
    case ModelId::pgpe_ave:
    case ModelId::pgpe_var:
    case ModelId::pgpe_reg:
    case ModelId::pgpe_opt:
    case ModelId::pgpe_rand:
        return true;
    default:
        return false;
    }
}

void validate_roster(const std::vector<ModelId>& roster)
{
    if (roster.empty()) throw ConfigError("roster is empty");
    std::set<ModelId> seen;
    for (ModelId id : roster) {
        if (!seen.insert(id).second) throw ConfigError("roster lists " + std::string(model_name(id)) + " twice");
        if (is_pgpe(id) && !(contains(roster, ModelId::pgp) && contains(roster, ModelId::tgp)))
            throw ConfigError(std::string(model_name(id)) + " requires pGP and tGP in the roster");
    }
}

// ---------------------------------------------------------------------------
// Folds
// ---------------------------------------------------------------------------

std::vector<std::string> FoldPlan::members(int f) const
{
    std::vector<std::string> out;
    for (std::size_t i = 0; i < subjects.size(); ++i)
        if (fold_of[i] == f) out.push_back(subjects[i]);
    return out;
}

std::vector<std::string> FoldPlan::complement(int f) const
{
    std::vector<std::string> out;
    for (std::size_t i = 0; i < subjects.size(); ++i)
        if (fold_of[i] != f) out.push_back(subjects[i]);
    return out;
}

int FoldPlan::fold(const std::string& subject_id) const
{
    for (std::size_t i = 0; i < subjects.size(); ++i)
        if (subjects[i] == subject_id) return fold_of[i];
    return -1;
}

FoldPlan make_folds(const Cohort& cohort, int k, std::uint64_t seed)
{
    const auto n = cohort.subjects.size();
    if (k < 2) throw ConfigError("fold count must be >= 2");
    if (static_cast<std::size_t>(k) > n) throw ConfigError("fold count exceeds the number of subjects");
    FoldPlan plan;
    plan.k = k;
    plan.seed = seed;
    for (const auto& s : cohort.subjects) plan.subjects.push_back(s.id);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    // Fisher-Yates with an explicit draw so the plan does not depend on the
    // standard library's shuffle
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(order[i - 1], order[j]);
    }
    plan.fold_of.assign(n, 0);
    for (std::size_t r = 0; r < n; ++r) plan.fold_of[order[r]] = static_cast<int>(r % static_cast<std::size_t>(k));
    return plan;
}

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

void OptimizerSettings::apply(GpFitConfig<double>& c) const
{
    c.cg.max_iterations = max_iterations;
    c.cg.gradient_tolerance = gradient_tolerance;
    c.cg.relative_tolerance = relative_tolerance;
    c.restarts = restarts;
    c.max_fit_rows = max_fit_rows;
    c.optimize_noise = optimize_noise;
    c.center_targets = center_targets;
}

std::vector<ExpertRecord> expert_records(const GpModel<double>& model, const Cohort& normalized,
                                         const NormStats& stats, const std::vector<std::string>& subject_ids,
                                         FeaturePreset preset)
{
    std::vector<ExpertRecord> out;
    for (const auto& id : subject_ids) {
        const Subject* s = normalized.find(id);
        if (!s) throw std::invalid_argument("expert_records: unknown subject '" + id + "'");
        for (const auto& w : build_windows(*s, stats, preset)) {
            const auto hist = history_at(*s, stats, preset, w.t);
            const auto ex = predict_experts(model, hist, w.x);
            ExpertRecord r;
            r.subject_id = id;
            r.visit = w.t;
            r.y_t = w.y_t;
            r.mu_p = ex.pgp.mean;
            r.mu_t = ex.tgp.mean;
            r.var_p = ex.pgp.variance;
            r.var_t = ex.tgp.variance;
            r.y_true = w.y_future;
            r.mask = w.mask;
            r.population_fallback = ex.population_fallback;
            out.push_back(std::move(r));
        }
    }
    return out;
}

FittedFold fit_training_split(const Cohort& cohort, const std::vector<std::string>& train_ids,
                              const std::vector<ModelId>& roster, const ExperimentConfig& config,
                              std::uint64_t seed)
{
    validate_roster(roster);
    FittedFold fitted;
    fitted.raw_feature_names = cohort.feature_names;
    fitted.raw_modality = cohort.modality;
    fitted.train_ids = train_ids;

    const Cohort train_raw = select_subjects(cohort, train_ids);
    fitted.impute = fit_impute_means(train_raw);
    const Cohort train_imputed = impute_forward(train_raw, fitted.impute);
    fitted.norm = fit_norm(train_imputed);
    const Cohort train = apply_norm(train_imputed, fitted.norm);

    auto fit = [&](FeaturePreset preset, KernelKind kernel, std::uint64_t model_seed) {
        Eigen::MatrixXd X, Y;
        stack_windows(cohort_windows(train, train_ids, fitted.norm, preset), X, Y);
        if (X.rows() < 2) throw DataError("training split has fewer than two forecast windows");
        GpFitConfig<double> c;
        config.sgp.apply(c);
        c.grouping = input_grouping(train, preset, kernel);
        c.seed = model_seed;
        auto model = fit_sgp(X, Y, c);
        spdlog::debug("fitted sGP ({} rows, {} inputs), nlml {:.4f}", X.rows(), X.cols(), model.nlml);
        return model;
    };

    if (contains(roster, ModelId::sgp_vis)) fitted.sgp_vis = fit(FeaturePreset::vis, KernelKind::iso, seed + 1);
    if (contains(roster, ModelId::sgp_iso)) fitted.sgp_iso = fit(FeaturePreset::full, KernelKind::iso, seed + 2);
    if (needs_ard(roster)) fitted.sgp_ard = fit(FeaturePreset::full, KernelKind::ard, seed + 3);

    if (!needs_records(roster)) return fitted;

    // expert forecasts on training subjects, each produced by a population
    // model that did not see that subject
    const auto& ard = *fitted.sgp_ard;
    if (config.inner_folds <= 1) {
        fitted.train_records = expert_records(ard, train, fitted.norm, train_ids, FeaturePreset::full);
    } else {
        Cohort ids_only;
        for (const auto& id : train_ids) ids_only.subjects.push_back(Subject{id, {}, {}});
        const int inner = std::min<int>(config.inner_folds, static_cast<int>(train_ids.size()));
        const FoldPlan plan = make_folds(ids_only, inner, seed ^ 0x9e3779b97f4a7c15ULL);
        for (int g = 0; g < plan.k; ++g) {
            Eigen::MatrixXd X, Y;
            stack_windows(cohort_windows(train, plan.complement(g), fitted.norm, FeaturePreset::full), X, Y);
            if (X.rows() == 0) continue;
            const auto model = make_gp_model(ard.hp, ard.grouping, X, Y, config.sgp.center_targets);
            auto recs = expert_records(model, train, fitted.norm, plan.members(g), FeaturePreset::full);
            fitted.train_records.insert(fitted.train_records.end(), std::make_move_iterator(recs.begin()),
                                        std::make_move_iterator(recs.end()));
        }
        // restore training order so downstream tables do not depend on the inner split
        std::map<std::string, std::size_t> rank;
        for (std::size_t i = 0; i < train_ids.size(); ++i) rank[train_ids[i]] = i;
        std::stable_sort(fitted.train_records.begin(), fitted.train_records.end(),
                         [&](const ExpertRecord& a, const ExpertRecord& b) {
                             const auto ra = rank[a.subject_id], rb = rank[b.subject_id];
                             return ra != rb ? ra < rb : a.visit < b.visit;
                         });
    }

    const auto errors = sample_errors(fitted.train_records);
    if (contains(roster, ModelId::pgpe_prior)) fitted.prior = weights_prior(per_visit_mae(errors));
    if (contains(roster, ModelId::pgpe_freq)) fitted.freq = weights_freq(dominance_matrix(errors));
    if (contains(roster, ModelId::pgpe_reg)) {
        std::vector<MetaSample> samples;
        for (const auto& r : fitted.train_records) {
            // first visits carry no information about the weight: both experts agree
            if (r.population_fallback || !r.mask.any()) continue;
            samples.push_back(MetaSample::make(r.mu_p, r.mu_t, r.y_t, optimal_alpha(r.mu_p, r.mu_t, r.y_true, r.mask)));
        }
        if (samples.size() < 10) throw DataError("too few training samples to fit the weight regressor");
        GpFitConfig<double> c = default_meta_fit_config();
        config.meta.apply(c);
        c.seed = seed + 4;
        fitted.meta = std::make_shared<const MetaGp>(fit_meta_gp(samples, c));
    }
    return fitted;
}

WeightScheme scheme_for(const FittedFold& fitted, ModelId id, std::uint64_t seed)
{
    auto missing = [&]() { return ConfigError(std::string(model_name(id)) + " was not fitted"); };
    switch (id) {
    case ModelId::pgpe_prior:
        if (!fitted.prior) throw missing();
        return *fitted.prior;
    case ModelId::pgpe_freq:
        if (!fitted.freq) throw missing();
        return *fitted.freq;
    case ModelId::pgpe_ave:
        return AveWeights{};
    case ModelId::pgpe_var:
        return VarWeights{};
    case ModelId::pgpe_reg:
        if (!fitted.meta) throw missing();
        return RegWeights{fitted.meta};
    case ModelId::pgpe_opt:
        return OptWeights{};
    case ModelId::pgpe_rand:
        return RandWeights{seed};
    default:
        throw std::invalid_argument("scheme_for: not a pGPE model");
    }
}

// ---------------------------------------------------------------------------
// Forecasting one subject
// ---------------------------------------------------------------------------

std::vector<SampleForecast> forecast_subject(const FittedFold& fitted, const Subject& raw,
                                             const std::vector<ModelId>& roster, std::uint64_t seed)
{
    validate_roster(roster);
    Cohort one;
    one.feature_names = fitted.raw_feature_names;
    one.modality = fitted.raw_modality;
    one.subjects.push_back(raw);
    const Cohort normalized = apply_norm(impute_forward(one, fitted.impute), fitted.norm);
    const Subject& s = normalized.subjects.front();

    const bool full = needs_ard(roster) || contains(roster, ModelId::sgp_iso) || contains(roster, ModelId::base_yt);
    const auto windows_full = build_windows(s, fitted.norm, FeaturePreset::full);
    std::vector<WindowSample> windows_vis;
    if (contains(roster, ModelId::sgp_vis)) windows_vis = build_windows(s, fitted.norm, FeaturePreset::vis);
    const auto& windows = full || windows_vis.empty() ? windows_full : windows_vis;

    std::vector<std::pair<std::size_t, WeightScheme>> schemes;
    for (std::size_t m = 0; m < roster.size(); ++m)
        if (is_pgpe(roster[m])) schemes.emplace_back(m, scheme_for(fitted, roster[m], seed));

    auto need = [&](const std::optional<GpModel<double>>& model, ModelId id) -> const GpModel<double>& {
        if (!model) throw ConfigError(std::string(model_name(id)) + " requires a model that was not fitted");
        return *model;
    };

    std::vector<SampleForecast> out;
    for (std::size_t j = 0; j < windows.size(); ++j) {
        const auto& w = windows[j];
        SampleForecast f;
        f.subject_id = s.id;
        f.visit = w.t;
        f.ordinal = static_cast<int>(j) + 1;
        f.y_t = w.y_t;
        f.y_true = w.y_future;
        f.mask = w.mask;
        f.predictions.assign(roster.size(), Vector4::Constant(kNaN));
        f.alpha.assign(roster.size(), Vector4::Constant(kNaN));
        f.variances.assign(roster.size(), Vector4::Constant(kNaN));

        std::optional<ExpertForecasts<double>> ex;
        if (needs_ard(roster)) {
            const auto& ard = need(fitted.sgp_ard, ModelId::sgp_ard);
            ex = predict_experts(ard, history_at(s, fitted.norm, FeaturePreset::full, w.t), windows_full[j].x);
            f.population_fallback = ex->population_fallback;
            f.var_sgp = ex->sgp.variance;
            f.var_p = ex->pgp.variance;
            f.var_t = ex->tgp.variance;
        }

        auto put = [&](std::size_t m, const Forecast<double>& g) {
            f.predictions[m] = g.mean;
            f.variances[m] = Vector4::Constant(g.variance);
        };
        for (std::size_t m = 0; m < roster.size(); ++m) {
            switch (roster[m]) {
            case ModelId::base_yt:
                f.predictions[m] = Vector4::Constant(w.y_t);
                break;
            case ModelId::sgp_vis:
                put(m, predict_sgp(need(fitted.sgp_vis, roster[m]), windows_vis[j].x));
                break;
            case ModelId::sgp_iso:
                put(m, predict_sgp(need(fitted.sgp_iso, roster[m]), windows_full[j].x));
                break;
            case ModelId::sgp_ard:
                put(m, ex->sgp);
                break;
            case ModelId::pgp:
                put(m, ex->pgp);
                break;
            case ModelId::tgp:
                put(m, ex->tgp);
                break;
            default:
                break;
            }
        }
        for (const auto& [m, scheme] : schemes) {
            WeightQuery q;
            q.visit = w.t;
            q.mu_p = ex->pgp.mean;
            q.mu_t = ex->tgp.mean;
            q.var_p = ex->pgp.variance;
            q.var_t = ex->tgp.variance;
            q.y_t = w.y_t;
            q.y_true = w.y_future;
            q.mask = w.mask;
            q.sample_key = sample_key(s.id, w.t);
            const Vector4 a = scheme_alphas(scheme, q);
            f.predictions[m] = mix_means(q.mu_p, q.mu_t, a);
            f.alpha[m] = a;
            f.variances[m] = a.array().square() * q.var_p + (1.0 - a.array()).square() * q.var_t;
        }
        out.push_back(std::move(f));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

HorizonMae mae_per_horizon(std::span<const Vector4> predictions, std::span<const Vector4> truths,
                           std::span<const Mask4> masks)
{
    if (predictions.size() != truths.size() || truths.size() != masks.size())
        throw std::invalid_argument("mae_per_horizon: input lengths differ");
    HorizonMae out;
    double total = 0.0;
    int present = 0;
    for (Index k = 0; k < kHorizons; ++k) {
        double sum = 0.0;
        int n = 0;
        for (std::size_t i = 0; i < predictions.size(); ++i) {
            if (!masks[i](k)) continue;
            sum += std::abs(predictions[i](k) - truths[i](k));
            ++n;
        }
        if (n > 0) {
            out.mae[static_cast<std::size_t>(k)] = sum / n;
            total += sum / n;
            ++present;
        }
    }
    if (present > 0) out.average = total / present;
    return out;
}

double incomplete_beta(double a, double b, double x)
{
    if (!(a > 0.0) || !(b > 0.0)) throw std::invalid_argument("incomplete_beta: a and b must be positive");
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    // continued fraction converges fast for x < (a+1)/(a+b+2); use the
    // symmetry relation otherwise
    if (x > (a + 1.0) / (a + b + 2.0)) return 1.0 - incomplete_beta(b, a, 1.0 - x);

    const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
    constexpr double tiny = 1e-300;
    constexpr double eps = 1e-16;
    // modified Lentz
    double f = 1.0, c = 1.0, d = 0.0;
    for (int i = 0; i <= 400; ++i) {
        const int m = i / 2;
        double numerator;
        if (i == 0) {
            numerator = 1.0;
        } else if (i % 2 == 0) {
            numerator = (m * (b - m) * x) / ((a + 2.0 * m - 1.0) * (a + 2.0 * m));
        } else {
            numerator = -((a + m) * (a + b + m) * x) / ((a + 2.0 * m) * (a + 2.0 * m + 1.0));
        }
        d = 1.0 + numerator * d;
        if (std::abs(d) < tiny) d = tiny;
        d = 1.0 / d;
        c = 1.0 + numerator / c;
        if (std::abs(c) < tiny) c = tiny;
        const double delta = c * d;
        f *= delta;
        if (std::abs(1.0 - delta) < eps) return std::exp(log_front) * (f - 1.0) / a;
    }
    throw NumericError("incomplete_beta: continued fraction did not converge");
}

double student_t_two_sided(double t, double df)
{
    if (!(df > 0.0)) throw std::invalid_argument("student_t_two_sided: df must be positive");
    if (std::isinf(t)) return 0.0;
    return incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
}

TTestResult paired_ttest(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size()) throw std::invalid_argument("paired_ttest: lengths differ");
    if (a.size() < 2) throw std::invalid_argument("paired_ttest: need at least two pairs");
    const auto n = static_cast<double>(a.size());
    double mean = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
    mean /= n;
    double ss = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i] - mean;
        ss += d * d;
    }
    const double sd = std::sqrt(ss / (n - 1.0));
    TTestResult r;
    // differences constant up to rounding
    double scale = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
    if (sd <= 1e-14 * std::max(1.0, scale)) {
        r.degenerate = true;
        if (std::abs(mean) <= 1e-14 * std::max(1.0, scale)) {
            r.t = 0.0;
            r.p = 1.0;
        } else {
            r.t = mean > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
            r.p = 0.0;
        }
        return r;
    }
    r.t = mean / (sd / std::sqrt(n));
    r.p = student_t_two_sided(r.t, n - 1.0);
    return r;
}

std::vector<SampleErrors> sample_errors(std::span<const ExpertRecord> records)
{
    std::vector<SampleErrors> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        SampleErrors e{r.subject_id, r.visit, Vector4::Constant(kNaN), Vector4::Constant(kNaN)};
        for (Index k = 0; k < kHorizons; ++k) {
            if (!r.mask(k)) continue;
            e.err_pgp(k) = std::abs(r.mu_p(k) - r.y_true(k));
            e.err_tgp(k) = std::abs(r.mu_t(k) - r.y_true(k));
        }
        out.push_back(std::move(e));
    }
    return out;
}

Dominance dominance_matrix(std::span<const SampleErrors> errors)
{
    Dominance d;
    std::map<std::string, Index> row;
    int max_visit = -1;
    for (const auto& e : errors) {
        if (e.visit < 0) throw std::invalid_argument("dominance_matrix: negative visit index");
        if (row.emplace(e.subject_id, static_cast<Index>(d.subjects.size())).second) d.subjects.push_back(e.subject_id);
        max_visit = std::max(max_visit, e.visit);
    }
    for (auto& m : d.per_horizon) m = Eigen::MatrixXi::Zero(static_cast<Index>(d.subjects.size()), max_visit + 1);
    for (const auto& e : errors) {
        const Index i = row[e.subject_id];
        for (Index k = 0; k < kHorizons; ++k) {
            const double p = e.err_pgp(k), t = e.err_tgp(k);
            if (std::isnan(p) || std::isnan(t)) continue;
            d.per_horizon[static_cast<std::size_t>(k)](i, e.visit) = p < t ? -1 : (t < p ? 1 : 0);
        }
    }
    return d;
}

PerVisitMae per_visit_mae(std::span<const SampleErrors> errors)
{
    int max_visit = -1;
    for (const auto& e : errors) max_visit = std::max(max_visit, e.visit);
    const Index V = max_visit + 1;
    PerVisitMae out;
    out.pgp = Eigen::MatrixXd::Zero(V, kHorizons);
    out.tgp = Eigen::MatrixXd::Zero(V, kHorizons);
    out.count = Eigen::MatrixXi::Zero(V, kHorizons);
    for (const auto& e : errors) {
        for (Index k = 0; k < kHorizons; ++k) {
            if (std::isnan(e.err_pgp(k)) || std::isnan(e.err_tgp(k))) continue;
            out.pgp(e.visit, k) += e.err_pgp(k);
            out.tgp(e.visit, k) += e.err_tgp(k);
            out.count(e.visit, k) += 1;
        }
    }
    for (Index v = 0; v < V; ++v)
        for (Index k = 0; k < kHorizons; ++k) {
            const int n = out.count(v, k);
            out.pgp(v, k) = n ? out.pgp(v, k) / n : kNaN;
            out.tgp(v, k) = n ? out.tgp(v, k) / n : kNaN;
        }
    return out;
}

// ---------------------------------------------------------------------------
// Experiment
// ---------------------------------------------------------------------------

const ModelSummary* EvalReport::summary(ModelId id) const
{
    for (const auto& m : models)
        if (m.id == id) return &m;
    return nullptr;
}

EvalReport run_experiment(const Cohort& cohort, const FoldPlan& plan, const std::vector<ModelId>& roster,
                          const ExperimentConfig& config)
{
    validate_roster(roster);
    if (plan.subjects.size() != cohort.subjects.size()) throw ConfigError("fold plan does not match the cohort");
    for (const auto& s : cohort.subjects)
        if (plan.fold(s.id) < 0) throw ConfigError("subject '" + s.id + "' has no fold");

    struct FoldOutput {
        std::vector<SampleForecast> samples;
        std::map<std::string, double> info;
    };
    std::vector<FoldOutput> outputs(static_cast<std::size_t>(plan.k));
    std::vector<std::exception_ptr> failures(static_cast<std::size_t>(plan.k));

    auto run_fold = [&](int f) {
        const auto test_ids = plan.members(f);
        const std::uint64_t fold_seed = config.seed * 1000003ULL + static_cast<std::uint64_t>(f) * 7919ULL;
        const FittedFold fitted = fit_training_split(cohort, plan.complement(f), roster, config, fold_seed);
        FoldOutput& out = outputs[static_cast<std::size_t>(f)];
        out.info["fold"] = f;
        out.info["n_train_subjects"] = static_cast<double>(fitted.train_ids.size());
        out.info["n_test_subjects"] = static_cast<double>(test_ids.size());
        if (fitted.sgp_ard) {
            const auto& hp = fitted.sgp_ard->hp;
            out.info["ard_nlml"] = fitted.sgp_ard->nlml;
            out.info["ard_n_train"] = static_cast<double>(fitted.sgp_ard->n_train());
            for (Index g = 0; g < hp.n_lengthscales(); ++g)
                out.info["ard_log_lengthscale_" + std::to_string(g)] = hp.log_lengthscales(g);
            out.info["ard_log_signal_var"] = hp.log_signal_var;
            out.info["ard_log_noise_var"] = hp.log_noise_var;
        }
        if (fitted.meta) out.info["meta_nlml"] = fitted.meta->gp.nlml;
        for (const auto& id : test_ids) {
            auto s = forecast_subject(fitted, *cohort.find(id), roster, config.seed);
            for (auto& x : s) x.fold = f;
            out.samples.insert(out.samples.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
        }
        spdlog::info("fold {}/{} done ({} test windows)", f + 1, plan.k, out.samples.size());
    };

    const int jobs = std::clamp(config.jobs, 1, plan.k);
    if (jobs == 1) {
        for (int f = 0; f < plan.k; ++f) run_fold(f);
    } else {
        std::atomic<int> next{0};
        std::vector<std::thread> workers;
        for (int w = 0; w < jobs; ++w) {
            workers.emplace_back([&]() {
                for (int f = next++; f < plan.k; f = next++) {
                    try {
                        run_fold(f);
                    } catch (...) {
                        failures[static_cast<std::size_t>(f)] = std::current_exception();
                    }
                }
            });
        }
        for (auto& t : workers) t.join();
        for (auto& e : failures)
            if (e) std::rethrow_exception(e);
    }

    EvalReport report;
    report.roster = roster;
    report.config_echo = config.config_echo;
    // samples in cohort order regardless of fold scheduling
    std::map<std::string, std::vector<SampleForecast>> by_subject;
    for (auto& out : outputs) {
        report.fold_info.push_back(out.info);
        for (auto& s : out.samples) by_subject[s.subject_id].push_back(std::move(s));
    }
    for (const auto& subj : cohort.subjects) {
        auto it = by_subject.find(subj.id);
        if (it == by_subject.end()) continue;
        for (auto& s : it->second) report.samples.push_back(std::move(s));
    }

    for (std::size_t m = 0; m < roster.size(); ++m) {
        ModelSummary ms;
        ms.id = roster[m];
        ms.fold_mae = Eigen::MatrixXd::Constant(plan.k, kHorizons, kNaN);
        std::vector<double> fold_avg(static_cast<std::size_t>(plan.k), kNaN);
        for (int f = 0; f < plan.k; ++f) {
            std::vector<Vector4> pred, truth;
            std::vector<Mask4> mask;
            for (const auto& s : report.samples) {
                if (s.fold != f) continue;
                pred.push_back(s.predictions[m]);
                truth.push_back(s.y_true);
                mask.push_back(s.mask);
            }
            const auto h = mae_per_horizon(pred, truth, mask);
            for (Index k = 0; k < kHorizons; ++k)
                if (h.mae[static_cast<std::size_t>(k)]) ms.fold_mae(f, k) = *h.mae[static_cast<std::size_t>(k)];
            if (h.average) fold_avg[static_cast<std::size_t>(f)] = *h.average;
        }
        for (Index k = 0; k < kHorizons; ++k) {
            std::vector<double> col(ms.fold_mae.col(k).data(), ms.fold_mae.col(k).data() + plan.k);
            ms.mae_mean[static_cast<std::size_t>(k)] = finite_mean(col);
            ms.mae_std[static_cast<std::size_t>(k)] = finite_std(col);
        }
        ms.avg_mean = finite_mean(fold_avg);
        ms.avg_std = finite_std(fold_avg);
        report.models.push_back(std::move(ms));
    }

    const auto reg_it = std::find(roster.begin(), roster.end(), ModelId::pgpe_reg);
    if (reg_it != roster.end()) {
        const auto r = static_cast<std::size_t>(reg_it - roster.begin());
        for (std::size_t m = 0; m < roster.size(); ++m) {
            if (m == r) continue;
            std::vector<double> ea, eb;
            for (const auto& s : report.samples)
                for (Index k = 0; k < kHorizons; ++k) {
                    if (!s.mask(k)) continue;
                    ea.push_back(std::abs(s.predictions[m](k) - s.y_true(k)));
                    eb.push_back(std::abs(s.predictions[r](k) - s.y_true(k)));
                }
            if (ea.size() >= 2) report.models[m].vs_reg = paired_ttest(ea, eb);
        }
    }

    const auto p_it = std::find(roster.begin(), roster.end(), ModelId::pgp);
    const auto t_it = std::find(roster.begin(), roster.end(), ModelId::tgp);
    if (p_it != roster.end() && t_it != roster.end()) {
        const auto ip = static_cast<std::size_t>(p_it - roster.begin());
        const auto it = static_cast<std::size_t>(t_it - roster.begin());
        std::vector<SampleErrors> errors;
        for (const auto& s : report.samples) {
            SampleErrors e{s.subject_id, s.visit, Vector4::Constant(kNaN), Vector4::Constant(kNaN)};
            for (Index k = 0; k < kHorizons; ++k) {
                if (!s.mask(k)) continue;
                e.err_pgp(k) = std::abs(s.predictions[ip](k) - s.y_true(k));
                e.err_tgp(k) = std::abs(s.predictions[it](k) - s.y_true(k));
            }
            errors.push_back(std::move(e));
        }
        report.per_visit = per_visit_mae(errors);
        report.dominance = dominance_matrix(errors);
    }

    for (const auto& s : report.samples) {
        const Subject* subj = cohort.find(s.subject_id);
        const std::string group = subj && !subj->group_label.empty() ? subj->group_label : "unlabeled";
        auto& cell = report.group_scores[group][s.visit];
        cell.second = (cell.second * cell.first + s.y_t) / (cell.first + 1);
        cell.first += 1;
    }
    return report;
}

// ---------------------------------------------------------------------------
// Report artifacts
// ---------------------------------------------------------------------------

std::string report_table_csv(const EvalReport& report)
{
    std::ostringstream os;
    os << "# config: " << single_line(config_json(report.config_echo).dump()) << '\n';
    os << "# reference avg MAE on the restricted clinical cohort (context only):";
    for (const auto& [name, v] : kReferenceAvg) os << ' ' << name << '=' << fixed(v, 2);
    os << '\n';
    os << "model,t+1,t+2,t+3,t+4,Avg,p_vs_W_reg\n";
    for (const auto& m : report.models) {
        os << model_name(m.id);
        for (std::size_t k = 0; k < 4; ++k) os << ',' << fixed(m.mae_mean[k]) << "±" << fixed(m.mae_std[k]);
        os << ',' << fixed(m.avg_mean) << "±" << fixed(m.avg_std) << ',';
        if (m.vs_reg) {
            std::ostringstream p;
            p.precision(3);
            p << std::scientific << m.vs_reg->p;
            os << p.str();
        }
        os << '\n';
    }
    return os.str();
}

std::string report_json(const EvalReport& report)
{
    using json = nlohmann::ordered_json;
    json j;
    j["format"] = "pgpe-report";
    j["version"] = 1;
    j["config"] = config_json(report.config_echo);
    json ref = json::object();
    for (const auto& [name, v] : kReferenceAvg) ref[std::string(name)] = v;
    j["reference_avg_mae"] = ref;

    json roster = json::array();
    for (ModelId id : report.roster) roster.push_back(std::string(model_name(id)));
    j["roster"] = roster;

    json models = json::array();
    for (const auto& m : report.models) {
        json e;
        e["model"] = std::string(model_name(m.id));
        e["mae_mean"] = json::array();
        e["mae_std"] = json::array();
        for (std::size_t k = 0; k < 4; ++k) {
            e["mae_mean"].push_back(number_or_null(m.mae_mean[k]));
            e["mae_std"].push_back(number_or_null(m.mae_std[k]));
        }
        e["avg_mean"] = number_or_null(m.avg_mean);
        e["avg_std"] = number_or_null(m.avg_std);
        e["fold_mae"] = matrix_json(m.fold_mae);
        if (m.vs_reg) {
            e["vs_reg"] = {{"t", number_or_null(m.vs_reg->t)}, {"p", m.vs_reg->p}, {"degenerate", m.vs_reg->degenerate}};
        }
        models.push_back(std::move(e));
    }
    j["models"] = models;

    json folds = json::array();
    for (const auto& info : report.fold_info) {
        json f = json::object();
        for (const auto& [k, v] : info) f[k] = number_or_null(v);
        folds.push_back(std::move(f));
    }
    j["folds"] = folds;

    j["per_visit_mae"] = {{"pGP", matrix_json(report.per_visit.pgp)}, {"tGP", matrix_json(report.per_visit.tgp)}};
    {
        json counts = json::array();
        for (Index v = 0; v < report.per_visit.count.rows(); ++v) {
            json r = json::array();
            for (Index k = 0; k < report.per_visit.count.cols(); ++k) r.push_back(report.per_visit.count(v, k));
            counts.push_back(std::move(r));
        }
        j["per_visit_mae"]["count"] = counts;
    }

    json groups = json::object();
    for (const auto& [g, visits] : report.group_scores) {
        json arr = json::array();
        for (const auto& [v, cell] : visits) arr.push_back({{"visit", v}, {"n", cell.first}, {"mean_score", cell.second}});
        groups[g] = arr;
    }
    j["group_trajectories"] = groups;

    json samples = json::array();
    for (const auto& s : report.samples) {
        json e;
        e["subject_id"] = s.subject_id;
        e["fold"] = s.fold;
        e["visit"] = s.visit;
        e["ordinal"] = s.ordinal;
        e["y_t"] = s.y_t;
        e["y_true"] = vec_json(s.y_true);
        json mask = json::array();
        for (Index k = 0; k < kHorizons; ++k) mask.push_back(static_cast<bool>(s.mask(k)));
        e["mask"] = mask;
        e["population_fallback"] = s.population_fallback;
        e["var_sgp"] = s.var_sgp;
        e["var_pgp"] = s.var_p;
        e["var_tgp"] = s.var_t;
        json preds = json::object();
        json alphas = json::object();
        for (std::size_t m = 0; m < report.roster.size(); ++m) {
            preds[std::string(model_name(report.roster[m]))] = vec_json(s.predictions[m]);
            if (is_pgpe(report.roster[m])) alphas[std::string(model_name(report.roster[m]))] = vec_json(s.alpha[m]);
        }
        e["predictions"] = preds;
        e["alpha"] = alphas;
        samples.push_back(std::move(e));
    }
    j["samples"] = samples;
    return j.dump(1) + "\n";
}

std::string dominance_csv(const EvalReport& report, int horizon)
{
    if (horizon < 0 || horizon >= kHorizons) throw std::invalid_argument("dominance_csv: horizon out of range");
    std::ostringstream os;
    os << "# config: " << single_line(config_json(report.config_echo).dump()) << '\n';
    os << "# horizon t+" << horizon + 1 << "; -1 pGP better, +1 tGP better, 0 no data or tie\n";
    const auto& m = report.dominance.per_horizon[static_cast<std::size_t>(horizon)];
    os << "subject_id";
    for (Index v = 0; v < m.cols(); ++v) os << ",v" << v;
    os << '\n';
    for (Index i = 0; i < m.rows(); ++i) {
        os << report.dominance.subjects[static_cast<std::size_t>(i)];
        for (Index v = 0; v < m.cols(); ++v) os << ',' << m(i, v);
        os << '\n';
    }
    return os.str();
}

void write_report(const EvalReport& report, const std::string& dir)
{
    namespace fs = std::filesystem;
    // render everything first so a failure leaves no partial report behind
    std::vector<std::pair<std::string, std::string>> files;
    files.emplace_back("table.csv", report_table_csv(report));
    files.emplace_back("report.json", report_json(report));
    for (int h = 0; h < kHorizons; ++h)
        files.emplace_back("dominance_h" + std::to_string(h + 1) + ".csv", dominance_csv(report, h));
    fs::create_directories(dir);
    for (const auto& [name, text] : files) {
        const fs::path path = fs::path(dir) / name;
        const fs::path tmp = fs::path(dir) / (name + ".tmp");
        {
            std::ofstream out(tmp, std::ios::binary);
            if (!out) throw std::runtime_error("cannot write " + tmp.string());
            out << text;
            if (!out) throw std::runtime_error("failed writing " + tmp.string());
        }
        fs::rename(tmp, path);
    }
}

} // namespace pgpe
