// Copyright 2026 The easkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace easkit {

/// Process exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitUsage = 2,  // unknown subcommand or bad flags
  kExitBadConfig = 3,
  kExitMissingCheckpoint = 4,
  kExitCorruptCheckpoint = 5,
  kExitVersion = 6,
};

/// Runs one subcommand (args excludes the program name) and prints a single
/// JSON line to `out`: the summary on success, {"ok":false,...} otherwise.
int run_command(const std::vector<std::string>& args, std::ostream& out);

}  // namespace easkit
