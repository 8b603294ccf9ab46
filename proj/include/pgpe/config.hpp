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

// Run configuration and the versioned model bundle.

#ifndef PGPE_CONFIG_HPP_
#define PGPE_CONFIG_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pgpe/dataset.hpp"
#include "pgpe/eval.hpp"

namespace pgpe {

/// Run-level optimizer budgets. Lower than the library defaults so a full
/// cross-validation fits in minutes on one core; raise them in the config
/// for final numbers.
inline OptimizerSettings default_sgp_budget()
{
    OptimizerSettings o;
    o.max_iterations = 60;
    o.restarts = 0;
    o.max_fit_rows = 400;
    return o;
}

inline OptimizerSettings default_meta_budget()
{
    OptimizerSettings o;
    o.max_iterations = 40;
    o.restarts = 0;
    o.max_fit_rows = 300;
    return o;
}

/// Single source of truth for a run. JSON keys mirror the field names;
/// unknown keys are rejected.
struct RunConfig {
    std::string data_path;              ///< cohort CSV; empty means synthetic
    SynthConfig synth;
    std::optional<std::uint64_t> synth_seed;  ///< defaults to `seed`
    double max_missing_fraction = 1.0;  ///< subjects above this are dropped after loading
    KernelKind kernel = KernelKind::ard;
    FeaturePreset preset = FeaturePreset::full;
    std::vector<ModelId> roster = default_roster();
    int folds = 10;
    int fit_fold = -1;                  ///< fit: -1 for the whole cohort, else that fold's training split
    int inner_folds = 5;
    std::uint64_t seed = 7;
    int jobs = 1;
    std::string out = "out";
    OptimizerSettings sgp_optimizer = default_sgp_budget();
    OptimizerSettings meta_optimizer = default_meta_budget();

    std::uint64_t resolved_synth_seed() const { return synth_seed.value_or(seed); }

    /// Throws ConfigError.
    void validate() const;
    ExperimentConfig experiment() const;
};

RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::string& path);
/// Fully resolved configuration, pretty-printed and deterministic.
std::string run_config_to_json(const RunConfig& config);

/// Model a (kernel, preset) pair selects: sGP(VIS), sGP(RBF-iso) or sGP(RBF-ard).
ModelId primary_model(KernelKind kernel, FeaturePreset preset);

/// Fitted objects plus what produced them.
struct ModelBundle {
    FittedFold fitted;
    std::vector<ModelId> roster;
    std::string config_echo;
    std::uint64_t seed = 0;
};

inline constexpr int kBundleVersion = 1;

std::string bundle_to_json(const ModelBundle& bundle);
/// Rebuilds every GP from its stored training data and hyperparameters.
/// Throws DataError on malformed or incompatible input.
ModelBundle bundle_from_json(const std::string& text);
void save_bundle(const std::string& path, const ModelBundle& bundle);
ModelBundle load_bundle(const std::string& path);

} // namespace pgpe

#endif // PGPE_CONFIG_HPP_
