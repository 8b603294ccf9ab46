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

#ifndef PGPE_TOOLS_CLI_HPP_
#define PGPE_TOOLS_CLI_HPP_

#include <iosfwd>
#include <string>
#include <vector>

namespace pgpe::cli {

enum ExitCode : int {
    kOk = 0,
    kFailure = 1,
    kConfigError = 2,
    kDataError = 3,
    kNumericError = 4,
};

/// Runs one command line (args exclude the program name). Human-readable
/// output goes to `out`; logs go to stderr.
int run(const std::vector<std::string>& args, std::ostream& out);

} // namespace pgpe::cli

#endif // PGPE_TOOLS_CLI_HPP_
