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

#include <cstdint>
#include <optional>
#include <string>

#include "easkit/bandit.hpp"
#include "easkit/model.hpp"
#include "easkit/profiler.hpp"
#include "easkit/task.hpp"
#include "easkit/trainer.hpp"

namespace easkit {

enum class Precision { F32, F64 };

std::string to_string(Precision p);
Precision parse_precision(const std::string& text);

/// Everything one command needs. Unset sections keep their defaults.
struct RunConfig {
  ModelConfig model;
  TaskSpec task;
  SearchSchedule schedule;
  OptimizerConfig optimizer;  // adapter tuning and search
  OptimizerConfig pretrain{3e-3, 0.9, 0.999, 1e-8, 1500, 16, 1.0};
  BenchOptions bench;
  CandidateSet candidates = CandidateSet::Mha;
  Precision precision = Precision::F64;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "runs";

  /// ConfigError on an invalid section or a missing seed.
  void validate() const;
};

/// Parses a JSON document. Unknown keys and wrong types are ConfigErrors.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
std::string to_json(const RunConfig& config);

}  // namespace easkit
