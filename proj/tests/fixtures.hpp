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

// Small cohorts and cheap optimizer budgets shared by the slower tests.

#ifndef PGPE_TESTS_FIXTURES_HPP_
#define PGPE_TESTS_FIXTURES_HPP_

#include "pgpe/dataset.hpp"
#include "pgpe/eval.hpp"

namespace pgpe::fixture {

inline SynthConfig tiny_synth(int n_subjects = 24)
{
    SynthConfig c;
    c.n_subjects = n_subjects;
    c.n_visits = 8;
    c.n_features = 6;
    c.n_modalities = 3;
    return c;
}

inline ExperimentConfig cheap_config(std::uint64_t seed = 1)
{
    ExperimentConfig c;
    c.sgp.max_iterations = 15;
    c.sgp.restarts = 0;
    c.sgp.max_fit_rows = 120;
    c.meta.max_iterations = 10;
    c.meta.restarts = 0;
    c.meta.max_fit_rows = 80;
    c.inner_folds = 3;
    c.seed = seed;
    return c;
}

} // namespace pgpe::fixture

#endif // PGPE_TESTS_FIXTURES_HPP_
