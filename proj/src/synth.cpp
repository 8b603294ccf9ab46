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

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "pgpe/dataset.hpp"

namespace pgpe {

void SynthConfig::validate() const
{
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw ConfigError("synth: " + what);
    };
    require(n_subjects >= 1, "n_subjects must be >= 1");
    require(n_visits >= 5, "n_visits must be >= 5");
    require(n_visits <= 200, "n_visits must be <= 200");
    require(n_modalities >= 1 && n_modalities <= 9, "n_modalities must be in [1, 9]");
    require(n_features >= n_modalities, "n_features must be >= n_modalities");
    require(idiosyncratic_fraction >= 0.0 && idiosyncratic_fraction <= 1.0, "idiosyncratic_fraction must be in [0, 1]");
    auto rate = [](double r) { return r >= 0.0 && r < 1.0; };
    require(rate(missing_feature_rate), "missing_feature_rate must be in [0, 1)");
    require(rate(missing_score_rate), "missing_score_rate must be in [0, 1)");
    require(rate(missing_visit_rate), "missing_visit_rate must be in [0, 1)");
    require(feature_shift >= 0.0 && feature_noise >= 0.0 && score_noise >= 0.0 && personal_trend >= 0.0,
            "noise and shift scales must be non-negative");
}

namespace {

/// Population score as a function of latent disease stage.
double population_score(double stage)
{
    return 5.0 + 55.0 / (1.0 + std::exp(-(stage - 2.0)));
}

std::string group_for(double baseline, double last)
{
    if (last < 14.0) return "CN";
    if (baseline < 14.0) return "CN->MCI";
    if (last < 30.0) return "MCI";
    return "AD";
}

} // namespace

Cohort synth_cohort(const SynthConfig& config, std::uint64_t seed)
{
    config.validate();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);

    const int M = config.n_modalities;
    const int D = config.n_features;

    Cohort cohort;
    std::vector<int> modality_of(static_cast<std::size_t>(D));
    std::vector<int> count(static_cast<std::size_t>(M), 0);
    for (int f = 0; f < D; ++f) {
        const int m = f * M / D;
        modality_of[static_cast<std::size_t>(f)] = m;
        cohort.feature_names.push_back("m" + std::to_string(m + 1) + "_f" + std::to_string(count[static_cast<std::size_t>(m)]++));
        cohort.modality.push_back(m + 1);
    }

    // informativeness decays across modalities; the last is pure noise when M > 1
    Eigen::VectorXd stage_load(D), rate_load(D), offset(D);
    for (int f = 0; f < D; ++f) {
        const int m = modality_of[static_cast<std::size_t>(f)];
        const double w = M > 1 ? 1.0 - static_cast<double>(m) / static_cast<double>(M - 1) : 1.0;
        const double sign = uniform(rng) < 0.5 ? -1.0 : 1.0;
        stage_load(f) = sign * w * (0.5 + uniform(rng));
        rate_load(f) = (m % 2 == 1) ? w * (1.0 + uniform(rng)) : 0.0;
        offset(f) = normal(rng);
    }

    for (int i = 0; i < config.n_subjects; ++i) {
        Subject s;
        char id[32];
        std::snprintf(id, sizeof(id), "S%03d", i + 1);
        s.id = id;

        const bool idiosyncratic = uniform(rng) < config.idiosyncratic_fraction;
        const double stage0 = normal(rng);
        const double rate = 0.3 * std::exp(0.4 * normal(rng));
        const double personal_slope = 0.5 + config.personal_trend * normal(rng);
        Eigen::VectorXd shift = Eigen::VectorXd::Zero(D);
        if (idiosyncratic) {
            for (int m = 0; m < M; ++m) {
                const double delta = config.feature_shift * normal(rng);
                for (int f = 0; f < D; ++f)
                    if (modality_of[static_cast<std::size_t>(f)] == m) shift(f) = delta;
            }
        }

        double first_score = std::numeric_limits<double>::quiet_NaN();
        double last_score = first_score;
        for (int t = 0; t < config.n_visits; ++t) {
            const bool skipped_grid = config.yearly_after_fifth && t > 4 && (t % 2 == 1);
            const bool absent = t > 0 && uniform(rng) < config.missing_visit_rate;
            const double stage = stage0 + rate * t;
            double score = idiosyncratic ? population_score(stage0) + personal_slope * t : population_score(stage);
            score = std::round(std::clamp(score + config.score_noise * normal(rng), 0.0, kMaxScore) * 100.0) / 100.0;

            Visit v;
            v.visit_index = t;
            v.features.resize(D);
            v.feature_source.assign(static_cast<std::size_t>(D), FillSource::observed);
            for (int f = 0; f < D; ++f) {
                v.features(f) = offset(f) + stage_load(f) * stage + rate_load(f) * (rate - 0.3) * 5.0 + shift(f) +
                                config.feature_noise * normal(rng);
                v.features(f) = std::round(v.features(f) * 1e4) / 1e4;
                if (uniform(rng) < config.missing_feature_rate) {
                    v.features(f) = std::numeric_limits<double>::quiet_NaN();
                    v.feature_source[static_cast<std::size_t>(f)] = FillSource::missing;
                }
            }
            if (uniform(rng) >= config.missing_score_rate || t == 0) {
                v.score = score;
                v.score_source = FillSource::observed;
            }
            if (std::isnan(first_score)) first_score = score;
            last_score = score;
            if (!skipped_grid && !absent) s.visits.push_back(std::move(v));
        }
        s.group_label = group_for(first_score, last_score);
        cohort.subjects.push_back(std::move(s));
    }
    return cohort;
}

} // namespace pgpe
