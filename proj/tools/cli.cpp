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

#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "pgpe/config.hpp"
#include "pgpe/dataset.hpp"
#include "pgpe/eval.hpp"

namespace pgpe::cli {

namespace {

namespace fs = std::filesystem;

struct Options {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> jobs;
    std::optional<std::string> out;
    std::optional<std::string> data;
    // forecast
    std::string bundle;
    std::string subject;
    int t = 1;
};

RunConfig resolve(const Options& o)
{
    RunConfig c = o.config_path.empty() ? RunConfig{} : load_run_config(o.config_path);
    if (o.seed) c.seed = *o.seed;
    if (o.jobs) c.jobs = *o.jobs;
    if (o.out) c.out = *o.out;
    if (o.data) c.data_path = *o.data;
    c.validate();
    return c;
}

Cohort load_data(const RunConfig& c)
{
    Cohort cohort = c.data_path.empty() ? synth_cohort(c.synth, c.resolved_synth_seed()) : load_cohort(c.data_path);
    if (c.max_missing_fraction < 1.0) cohort = filter_by_missingness(cohort, c.max_missing_fraction);
    if (cohort.subjects.empty()) throw DataError("cohort has no subjects");
    return cohort;
}

void write_text(const fs::path& path, const std::string& text)
{
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out << text;
        if (!out) throw std::runtime_error("failed writing " + tmp.string());
    }
    fs::rename(tmp, path);
}

std::string fmt_num(double v, int precision = 4)
{
    if (!std::isfinite(v)) return "-";
    std::ostringstream os;
    os << std::fixed << std::setprecision(precision) << v;
    return os.str();
}

int cmd_synth(const Options& o, std::ostream& out)
{
    const RunConfig c = resolve(o);
    if (!c.data_path.empty()) throw ConfigError("synth does not read a data file");
    const Cohort cohort = synth_cohort(c.synth, c.resolved_synth_seed());
    std::size_t visits = 0;
    for (const auto& s : cohort.subjects) visits += s.visits.size();
    std::string comment = "config: " + nlohmann::ordered_json::parse(run_config_to_json(c)).dump();
    fs::create_directories(c.out);
    const fs::path path = fs::path(c.out) / "cohort.csv";
    std::ostringstream csv;
    write_cohort(csv, cohort, comment);
    write_text(path, csv.str());
    out << "wrote " << path.string() << '\n'
        << "subjects: " << cohort.subjects.size() << '\n'
        << "visits: " << visits << '\n'
        << "features: " << cohort.n_features() << '\n'
        << "missing fraction: " << fmt_num(missing_fraction(cohort)) << '\n';
    return kOk;
}

int cmd_fit(const Options& o, std::ostream& out)
{
    RunConfig c = resolve(o);
    const ModelId primary = primary_model(c.kernel, c.preset);
    if (std::find(c.roster.begin(), c.roster.end(), primary) == c.roster.end()) c.roster.push_back(primary);
    c.validate();
    const Cohort cohort = load_data(c);

    std::vector<std::string> train_ids;
    if (c.fit_fold >= 0) {
        train_ids = make_folds(cohort, c.folds, c.seed).complement(c.fit_fold);
    } else {
        for (const auto& s : cohort.subjects) train_ids.push_back(s.id);
    }
    const ExperimentConfig ec = c.experiment();
    ModelBundle bundle;
    bundle.fitted = fit_training_split(cohort, train_ids, c.roster, ec, c.seed);
    bundle.fitted.fold = c.fit_fold;
    bundle.roster = c.roster;
    bundle.config_echo = ec.config_echo;
    bundle.seed = c.seed;

    const GpModel<double>* m = nullptr;
    switch (primary) {
    case ModelId::sgp_vis: m = &*bundle.fitted.sgp_vis; break;
    case ModelId::sgp_iso: m = &*bundle.fitted.sgp_iso; break;
    default: m = &*bundle.fitted.sgp_ard; break;
    }

    fs::create_directories(c.out);
    const fs::path path = fs::path(c.out) / "bundle.json";
    write_text(path, bundle_to_json(bundle));

    out << "wrote " << path.string() << '\n';
    out << "model: " << model_name(primary) << " (" << m->n_train() << " windows, input dimension " << m->input_dim()
        << ")\n";
    out << "nlml: " << fmt_num(m->nlml, 6) << '\n';
    out << "length-scales (" << m->hp.n_lengthscales() << "):";
    for (Index g = 0; g < m->hp.n_lengthscales(); ++g) out << ' ' << fmt_num(std::exp(m->hp.log_lengthscales(g)), 6);
    out << '\n';
    out << "signal variance: " << fmt_num(m->hp.signal_var(), 6) << '\n';
    out << "noise variance: " << fmt_num(m->hp.noise_var(), 6) << '\n';
    if (bundle.fitted.meta) out << "weight regressor nlml: " << fmt_num(bundle.fitted.meta->gp.nlml, 6) << '\n';
    return kOk;
}

int cmd_evaluate(const Options& o, std::ostream& out)
{
    const RunConfig c = resolve(o);
    const Cohort cohort = load_data(c);
    const FoldPlan plan = make_folds(cohort, c.folds, c.seed);
    const EvalReport report = run_experiment(cohort, plan, c.roster, c.experiment());
    write_report(report, c.out);
    out << report_table_csv(report);
    out << "wrote " << (fs::path(c.out) / "table.csv").string() << ", report.json, dominance_h1..4.csv\n";
    return kOk;
}

int cmd_forecast(const Options& o, std::ostream& out)
{
    if (o.bundle.empty()) throw ConfigError("forecast needs --bundle");
    if (!o.data) throw ConfigError("forecast needs --data <subject csv>");
    if (o.t < 1) throw ConfigError("--t is 1-based and must be >= 1");
    const ModelBundle bundle = load_bundle(o.bundle);
    const Cohort cohort = load_cohort(*o.data);
    if (cohort.feature_names != bundle.fitted.raw_feature_names)
        throw DataError("subject CSV columns do not match the bundle's features");
    const Subject* subject = o.subject.empty() ? (cohort.subjects.empty() ? nullptr : &cohort.subjects.front())
                                               : cohort.find(o.subject);
    if (!subject) throw DataError(o.subject.empty() ? "subject CSV is empty" : "subject '" + o.subject + "' not found");

    const auto forecasts = forecast_subject(bundle.fitted, *subject, bundle.roster, bundle.seed);
    if (o.t > static_cast<int>(forecasts.size()))
        throw DataError("subject '" + subject->id + "' has " + std::to_string(forecasts.size()) +
                        " scored visits; --t " + std::to_string(o.t) + " is out of range");
    const SampleForecast& f = forecasts[static_cast<std::size_t>(o.t - 1)];

    out << "subject " << f.subject_id << ", t=" << f.ordinal << " (visit_index " << f.visit
        << "), y_t=" << fmt_num(f.y_t, 2) << '\n';
    if (f.population_fallback) out << "note: empty history; pGP and tGP equal the sGP forecast\n";
    out << std::left << std::setw(15) << "model";
    for (int k = 1; k <= 4; ++k) out << std::setw(10) << ("t+" + std::to_string(k));
    for (int k = 1; k <= 4; ++k) out << std::setw(10) << ("var" + std::to_string(k));
    out << "alpha\n";
    nlohmann::ordered_json j;
    j["config"] = nlohmann::ordered_json::parse(bundle.config_echo, nullptr, false);
    j["subject_id"] = f.subject_id;
    j["t"] = f.ordinal;
    j["visit_index"] = f.visit;
    j["y_t"] = f.y_t;
    j["population_fallback"] = f.population_fallback;
    for (std::size_t m = 0; m < bundle.roster.size(); ++m) {
        const std::string name(model_name(bundle.roster[m]));
        out << std::setw(15) << name;
        auto& e = j["models"][name];
        for (Index k = 0; k < kHorizons; ++k) {
            out << std::setw(10) << fmt_num(f.predictions[m](k), 3);
            e["mean"].push_back(f.predictions[m](k));
        }
        for (Index k = 0; k < kHorizons; ++k) {
            out << std::setw(10) << fmt_num(f.variances[m](k), 3);
            if (std::isfinite(f.variances[m](k)))
                e["variance"].push_back(f.variances[m](k));
            else
                e["variance"].push_back(nullptr);
        }
        if (is_pgpe(bundle.roster[m])) {
            for (Index k = 0; k < kHorizons; ++k) {
                out << (k ? "," : "") << fmt_num(f.alpha[m](k), 3);
                e["alpha"].push_back(f.alpha[m](k));
            }
        } else {
            out << '-';
        }
        out << '\n';
    }
    if (o.out) {
        fs::create_directories(*o.out);
        const fs::path path = fs::path(*o.out) / "forecast.json";
        write_text(path, j.dump(1) + "\n");
        out << "wrote " << path.string() << '\n';
    }
    return kOk;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out)
{
    CLI::App app{"Personalized Gaussian-process forecasting of longitudinal scores"};
    app.require_subcommand(1);
    Options o;
    auto common = [&](CLI::App* cmd) {
        cmd->add_option("--config", o.config_path, "JSON run configuration")->check(CLI::ExistingFile);
        cmd->add_option("--seed", o.seed, "seed (overrides the config)");
        cmd->add_option("--jobs", o.jobs, "parallel folds (overrides the config)");
        cmd->add_option("--out", o.out, "output directory (overrides the config)");
    };
    auto* synth = app.add_subcommand("synth", "generate a synthetic cohort CSV");
    common(synth);
    auto* fit = app.add_subcommand("fit", "fit models and write a bundle");
    common(fit);
    fit->add_option("--data", o.data, "cohort CSV (overrides the config)");
    auto* evaluate = app.add_subcommand("evaluate", "cross-validate the roster and write reports");
    common(evaluate);
    evaluate->add_option("--data", o.data, "cohort CSV (overrides the config)");
    auto* forecast = app.add_subcommand("forecast", "forecast one subject from a bundle");
    forecast->add_option("--bundle", o.bundle, "model bundle")->required();
    forecast->add_option("--data", o.data, "subject CSV")->required();
    forecast->add_option("--subject", o.subject, "subject id (default: first in the file)");
    forecast->add_option("--t", o.t, "1-based index of the scored visit to forecast from")->required();
    forecast->add_option("--out", o.out, "also write forecast.json here");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kOk;
    } catch (const CLI::ParseError& e) {
        spdlog::error("{}", e.what());
        return kConfigError;
    }

    try {
        if (*synth) return cmd_synth(o, out);
        if (*fit) return cmd_fit(o, out);
        if (*evaluate) return cmd_evaluate(o, out);
        if (*forecast) return cmd_forecast(o, out);
    } catch (const ConfigError& e) {
        spdlog::error("config error: {}", e.what());
        return kConfigError;
    } catch (const DataError& e) {
        spdlog::error("data error: {}", e.what());
        return kDataError;
    } catch (const NumericError& e) {
        spdlog::error("numeric failure: {}", e.what());
        return kNumericError;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return kFailure;
    }
    return kFailure;
}

} // namespace pgpe::cli
