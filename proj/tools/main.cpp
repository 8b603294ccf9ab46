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

#include <cstdlib>
#include <iostream>

#include <spdlog/cfg/helpers.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "cli.hpp"

int main(int argc, char** argv)
{
    auto logger = spdlog::stderr_color_mt("pgpe");
    spdlog::set_default_logger(logger);
    spdlog::set_level(spdlog::level::info);
    // PGPE_LOG=debug|info|warn|error|off
    if (const char* level = std::getenv("PGPE_LOG")) spdlog::cfg::helpers::load_levels(level);

    std::vector<std::string> args(argv + 1, argv + argc);
    return pgpe::cli::run(args, std::cout);
}
