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

#include "pgpe/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace pgpe {

namespace {

using json = nlohmann::ordered_json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string read_file(const std::string& path, const char* what)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(std::string("cannot open ") + what + " '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where)
{
    if (!obj.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& [key, value] : obj.items())
        if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& where)
{
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("bad value for '" + std::string(key) + "' in " + where);
    }
}

std::string kernel_name(KernelKind k) { return k == KernelKind::ard ? "ard" : "iso"; }
std::string preset_name(FeaturePreset p) { return p == FeaturePreset::full ? "full" : "vis"; }

void read_optimizer(const json& j, OptimizerSettings& o, const std::string& where)
{
    reject_unknown(j, {"max_iterations", "gradient_tolerance", "relative_tolerance", "restarts", "max_fit_rows",
                       "optimize_noise", "center_targets"},
                   where);
    read(j, "max_iterations", o.max_iterations, where);
    read(j, "gradient_tolerance", o.gradient_tolerance, where);
    read(j, "relative_tolerance", o.relative_tolerance, where);
    read(j, "restarts", o.restarts, where);
    read(j, "max_fit_rows", o.max_fit_rows, where);
    read(j, "optimize_noise", o.optimize_noise, where);
    read(j, "center_targets", o.center_targets, where);
}

json optimizer_json(const OptimizerSettings& o)
{
    return {{"max_iterations", o.max_iterations},   {"gradient_tolerance", o.gradient_tolerance},
            {"relative_tolerance", o.relative_tolerance}, {"restarts", o.restarts},
            {"max_fit_rows", o.max_fit_rows},       {"optimize_noise", o.optimize_noise},
            {"center_targets", o.center_targets}};
}

void validate_optimizer(const OptimizerSettings& o, const std::string& where)
{
    if (o.max_iterations < 0) throw ConfigError(where + ".max_iterations must be >= 0");
    if (!(o.gradient_tolerance >= 0.0)) throw ConfigError(where + ".gradient_tolerance must be >= 0");
    if (!(o.relative_tolerance >= 0.0)) throw ConfigError(where + ".relative_tolerance must be >= 0");
    if (o.restarts < 0) throw ConfigError(where + ".restarts must be >= 0");
    if (o.max_fit_rows < 0) throw ConfigError(where + ".max_fit_rows must be >= 0");
}

// ---- bundle helpers ------------------------------------------------------

json num(double v)
{
    if (!std::isfinite(v)) return nullptr;
    return v;
}

double as_num(const json& j)
{
    if (j.is_null()) return kNaN;
    return j.get<double>();
}

json vec_to_json(const Eigen::VectorXd& v)
{
    json a = json::array();
    for (Index i = 0; i < v.size(); ++i) a.push_back(num(v(i)));
    return a;
}

Eigen::VectorXd vec_from_json(const json& j)
{
    Eigen::VectorXd v(static_cast<Index>(j.size()));
    for (Index i = 0; i < v.size(); ++i) v(i) = as_num(j.at(static_cast<std::size_t>(i)));
    return v;
}

json mat_to_json(const Eigen::MatrixXd& m)
{
    json rows = json::array();
    for (Index i = 0; i < m.rows(); ++i) {
        json r = json::array();
        for (Index k = 0; k < m.cols(); ++k) r.push_back(num(m(i, k)));
        rows.push_back(std::move(r));
    }
    return rows;
}

Eigen::MatrixXd mat_from_json(const json& j, Index cols)
{
    Eigen::MatrixXd m(static_cast<Index>(j.size()), cols);
    for (Index i = 0; i < m.rows(); ++i) {
        const json& r = j.at(static_cast<std::size_t>(i));
        if (static_cast<Index>(r.size()) != cols) throw DataError("bundle: ragged matrix");
        for (Index k = 0; k < cols; ++k) m(i, k) = as_num(r.at(static_cast<std::size_t>(k)));
    }
    return m;
}

json gp_to_json(const GpModel<double>& m)
{
    json j;
    j["grouping"] = m.grouping.labels();
    j["log_lengthscales"] = vec_to_json(m.hp.log_lengthscales);
    j["log_signal_var"] = m.hp.log_signal_var;
    j["log_noise_var"] = m.hp.log_noise_var;
    j["center_targets"] = !m.y_mean.isZero(0.0);
    j["nlml"] = num(m.nlml);
    j["X"] = mat_to_json(m.X_train);
    j["Y"] = mat_to_json(m.Y_train);
    return j;
}

GpModel<double> gp_from_json(const json& j)
{
    const FeatureGrouping grouping(j.at("grouping").get<std::vector<int>>());
    Hyperparams<double> hp;
    hp.log_lengthscales = vec_from_json(j.at("log_lengthscales"));
    hp.log_signal_var = j.at("log_signal_var").get<double>();
    hp.log_noise_var = j.at("log_noise_var").get<double>();
    const Index D = grouping.n_features();
    const json& Y = j.at("Y");
    const Index P = Y.empty() ? 0 : static_cast<Index>(Y.at(0).size());
    auto model = make_gp_model(hp, grouping, mat_from_json(j.at("X"), D), mat_from_json(Y, P),
                               j.at("center_targets").get<bool>());
    return model;
}

json table_to_json(const VisitTable& t)
{
    return {{"alpha", mat_to_json(t.alpha)}, {"fallback", t.fallback}};
}

VisitTable table_from_json(const json& j)
{
    VisitTable t;
    t.alpha = mat_from_json(j.at("alpha"), kHorizons);
    t.fallback = j.at("fallback").get<double>();
    return t;
}

} // namespace

// ---------------------------------------------------------------------------
// RunConfig
// ---------------------------------------------------------------------------

void RunConfig::validate() const
{
    if (data_path.empty()) synth.validate();
    if (!(max_missing_fraction >= 0.0 && max_missing_fraction <= 1.0))
        throw ConfigError("max_missing_fraction must be in [0, 1]");
    validate_roster(roster);
    if (folds < 2) throw ConfigError("folds must be >= 2");
    if (fit_fold < -1 || fit_fold >= folds) throw ConfigError("fit_fold must be -1 or a fold index");
    if (inner_folds < 0) throw ConfigError("inner_folds must be >= 0");
    if (jobs < 1) throw ConfigError("jobs must be >= 1");
    if (out.empty()) throw ConfigError("out must not be empty");
    validate_optimizer(sgp_optimizer, "optimizer.sgp");
    validate_optimizer(meta_optimizer, "optimizer.meta");
}

ExperimentConfig RunConfig::experiment() const
{
    ExperimentConfig c;
    c.sgp = sgp_optimizer;
    c.meta = meta_optimizer;
    c.inner_folds = inner_folds;
    c.jobs = jobs;
    c.seed = seed;
    c.config_echo = run_config_to_json(*this);
    return c;
}

RunConfig run_config_from_json(const std::string& text)
{
    json j;
    try {
        j = json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    reject_unknown(j, {"data", "synth", "kernel", "preset", "roster", "folds", "fit_fold", "inner_folds", "seed", "jobs",
                       "out", "optimizer"},
                   "config");
    RunConfig c;
    if (j.contains("data")) {
        const json& d = j.at("data");
        reject_unknown(d, {"path", "max_missing_fraction"}, "data");
        read(d, "path", c.data_path, "data");
        read(d, "max_missing_fraction", c.max_missing_fraction, "data");
    }
    if (j.contains("synth")) {
        const json& s = j.at("synth");
        reject_unknown(s, {"n_subjects", "n_visits", "n_features", "n_modalities", "idiosyncratic_fraction",
                           "feature_shift", "feature_noise", "score_noise", "personal_trend", "missing_feature_rate",
                           "missing_score_rate", "missing_visit_rate", "yearly_after_fifth", "seed"},
                       "synth");
        auto& sc = c.synth;
        read(s, "n_subjects", sc.n_subjects, "synth");
        read(s, "n_visits", sc.n_visits, "synth");
        read(s, "n_features", sc.n_features, "synth");
        read(s, "n_modalities", sc.n_modalities, "synth");
        read(s, "idiosyncratic_fraction", sc.idiosyncratic_fraction, "synth");
        read(s, "feature_shift", sc.feature_shift, "synth");
        read(s, "feature_noise", sc.feature_noise, "synth");
        read(s, "score_noise", sc.score_noise, "synth");
        read(s, "personal_trend", sc.personal_trend, "synth");
        read(s, "missing_feature_rate", sc.missing_feature_rate, "synth");
        read(s, "missing_score_rate", sc.missing_score_rate, "synth");
        read(s, "missing_visit_rate", sc.missing_visit_rate, "synth");
        read(s, "yearly_after_fifth", sc.yearly_after_fifth, "synth");
        if (s.contains("seed")) {
            std::uint64_t v = 0;
            read(s, "seed", v, "synth");
            c.synth_seed = v;
        }
    }
    if (j.contains("kernel")) {
        const auto k = j.at("kernel");
        if (k == "ard")
            c.kernel = KernelKind::ard;
        else if (k == "iso")
            c.kernel = KernelKind::iso;
        else
            throw ConfigError("kernel must be \"ard\" or \"iso\"");
    }
    if (j.contains("preset")) {
        const auto p = j.at("preset");
        if (p == "full")
            c.preset = FeaturePreset::full;
        else if (p == "vis")
            c.preset = FeaturePreset::vis;
        else
            throw ConfigError("preset must be \"full\" or \"vis\"");
    }
    if (j.contains("roster")) {
        const json& r = j.at("roster");
        if (!r.is_array()) throw ConfigError("roster must be an array of model names");
        c.roster.clear();
        for (const auto& e : r) {
            if (!e.is_string()) throw ConfigError("roster entries must be strings");
            const auto id = parse_model(e.get<std::string>());
            if (!id) throw ConfigError("unknown model '" + e.get<std::string>() + "' in roster");
            c.roster.push_back(*id);
        }
    }
    read(j, "folds", c.folds, "config");
    read(j, "fit_fold", c.fit_fold, "config");
    read(j, "inner_folds", c.inner_folds, "config");
    read(j, "seed", c.seed, "config");
    read(j, "jobs", c.jobs, "config");
    read(j, "out", c.out, "config");
    if (j.contains("optimizer")) {
        const json& o = j.at("optimizer");
        reject_unknown(o, {"sgp", "meta"}, "optimizer");
        if (o.contains("sgp")) read_optimizer(o.at("sgp"), c.sgp_optimizer, "optimizer.sgp");
        if (o.contains("meta")) read_optimizer(o.at("meta"), c.meta_optimizer, "optimizer.meta");
    }
    return c;
}

RunConfig load_run_config(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return run_config_from_json(ss.str());
}

std::string run_config_to_json(const RunConfig& c)
{
    json j;
    j["data"] = {{"path", c.data_path}, {"max_missing_fraction", c.max_missing_fraction}};
    const auto& s = c.synth;
    j["synth"] = {{"n_subjects", s.n_subjects},
                  {"n_visits", s.n_visits},
                  {"n_features", s.n_features},
                  {"n_modalities", s.n_modalities},
                  {"idiosyncratic_fraction", s.idiosyncratic_fraction},
                  {"feature_shift", s.feature_shift},
                  {"feature_noise", s.feature_noise},
                  {"score_noise", s.score_noise},
                  {"personal_trend", s.personal_trend},
                  {"missing_feature_rate", s.missing_feature_rate},
                  {"missing_score_rate", s.missing_score_rate},
                  {"missing_visit_rate", s.missing_visit_rate},
                  {"yearly_after_fifth", s.yearly_after_fifth},
                  {"seed", c.resolved_synth_seed()}};
    j["kernel"] = kernel_name(c.kernel);
    j["preset"] = preset_name(c.preset);
    json roster = json::array();
    for (ModelId id : c.roster) roster.push_back(std::string(model_name(id)));
    j["roster"] = roster;
    j["folds"] = c.folds;
    j["fit_fold"] = c.fit_fold;
    j["inner_folds"] = c.inner_folds;
    j["seed"] = c.seed;
    j["jobs"] = c.jobs;
    j["out"] = c.out;
    j["optimizer"] = {{"sgp", optimizer_json(c.sgp_optimizer)}, {"meta", optimizer_json(c.meta_optimizer)}};
    return j.dump(2);
}

ModelId primary_model(KernelKind kernel, FeaturePreset preset)
{
    if (preset == FeaturePreset::vis) return ModelId::sgp_vis;
    return kernel == KernelKind::ard ? ModelId::sgp_ard : ModelId::sgp_iso;
}

// ---------------------------------------------------------------------------
// Bundle
// ---------------------------------------------------------------------------

std::string bundle_to_json(const ModelBundle& b)
{
    const FittedFold& f = b.fitted;
    json j;
    j["format"] = "pgpe-bundle";
    j["version"] = kBundleVersion;
    try {
        j["config"] = json::parse(b.config_echo);
    } catch (const nlohmann::json::exception&) {
        j["config"] = b.config_echo;
    }
    json roster = json::array();
    for (ModelId id : b.roster) roster.push_back(std::string(model_name(id)));
    j["roster"] = roster;
    j["seed"] = b.seed;
    j["fold"] = f.fold;
    j["raw_feature_names"] = f.raw_feature_names;
    j["raw_modality"] = f.raw_modality;
    j["train_ids"] = f.train_ids;
    j["impute"] = {{"feature_mean", vec_to_json(f.impute.feature_mean)}, {"score_mean", f.impute.score_mean}};
    j["norm"] = {{"mean", vec_to_json(f.norm.mean)},
                 {"std", vec_to_json(f.norm.std)},
                 {"kept", f.norm.kept},
                 {"dropped", f.norm.dropped},
                 {"score_mean", f.norm.score_mean},
                 {"score_std", f.norm.score_std}};
    json models = json::object();
    if (f.sgp_ard) models["sgp_ard"] = gp_to_json(*f.sgp_ard);
    if (f.sgp_iso) models["sgp_iso"] = gp_to_json(*f.sgp_iso);
    if (f.sgp_vis) models["sgp_vis"] = gp_to_json(*f.sgp_vis);
    j["models"] = models;
    json schemes = json::object();
    if (f.prior) schemes["prior"] = table_to_json(f.prior->table);
    if (f.freq) schemes["freq"] = table_to_json(f.freq->table);
    if (f.meta) schemes["reg"] = gp_to_json(f.meta->gp);
    j["weights"] = schemes;
    return j.dump(1) + "\n";
}

ModelBundle bundle_from_json(const std::string& text)
{
    try {
        const json j = json::parse(text);
        if (j.at("format") != "pgpe-bundle") throw DataError("not a model bundle");
        const int version = j.at("version").get<int>();
        if (version != kBundleVersion)
            throw DataError("unsupported bundle version " + std::to_string(version) + " (expected " +
                            std::to_string(kBundleVersion) + ")");
        ModelBundle b;
        b.config_echo = j.at("config").is_string() ? j.at("config").get<std::string>() : j.at("config").dump(2);
        for (const auto& e : j.at("roster")) {
            const auto id = parse_model(e.get<std::string>());
            if (!id) throw DataError("bundle lists unknown model '" + e.get<std::string>() + "'");
            b.roster.push_back(*id);
        }
        b.seed = j.at("seed").get<std::uint64_t>();
        FittedFold& f = b.fitted;
        f.fold = j.at("fold").get<int>();
        f.raw_feature_names = j.at("raw_feature_names").get<std::vector<std::string>>();
        f.raw_modality = j.at("raw_modality").get<std::vector<int>>();
        f.train_ids = j.at("train_ids").get<std::vector<std::string>>();
        f.impute.feature_mean = vec_from_json(j.at("impute").at("feature_mean"));
        f.impute.score_mean = j.at("impute").at("score_mean").get<double>();
        const json& n = j.at("norm");
        f.norm.mean = vec_from_json(n.at("mean"));
        f.norm.std = vec_from_json(n.at("std"));
        f.norm.kept = n.at("kept").get<std::vector<Index>>();
        f.norm.dropped = n.at("dropped").get<std::vector<Index>>();
        f.norm.score_mean = n.at("score_mean").get<double>();
        f.norm.score_std = n.at("score_std").get<double>();
        const auto D = static_cast<Index>(f.raw_feature_names.size());
        if (static_cast<Index>(f.raw_modality.size()) != D || f.impute.feature_mean.size() != D ||
            f.norm.mean.size() != D || f.norm.std.size() != D)
            throw DataError("bundle: feature dimensions disagree");
        const json& m = j.at("models");
        if (m.contains("sgp_ard")) f.sgp_ard = gp_from_json(m.at("sgp_ard"));
        if (m.contains("sgp_iso")) f.sgp_iso = gp_from_json(m.at("sgp_iso"));
        if (m.contains("sgp_vis")) f.sgp_vis = gp_from_json(m.at("sgp_vis"));
        const json& w = j.at("weights");
        if (w.contains("prior")) f.prior = PriorWeights{table_from_json(w.at("prior"))};
        if (w.contains("freq")) f.freq = FreqWeights{table_from_json(w.at("freq"))};
        if (w.contains("reg")) f.meta = std::make_shared<const MetaGp>(MetaGp{gp_from_json(w.at("reg"))});
        return b;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed model bundle: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw DataError(std::string("inconsistent model bundle: ") + e.what());
    }
}

void save_bundle(const std::string& path, const ModelBundle& bundle)
{
    const std::string text = bundle_to_json(bundle);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write bundle '" + path + "'");
    out << text;
}

ModelBundle load_bundle(const std::string& path)
{
    return bundle_from_json(read_file(path, "bundle"));
}

} // namespace pgpe
