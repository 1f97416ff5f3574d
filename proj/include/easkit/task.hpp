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
#include <span>
#include <string>
#include <vector>

#include "easkit/model.hpp"

namespace easkit {

enum class TaskKind { Copy, Reverse, ModularAdd };

std::string to_string(TaskKind kind);
TaskKind parse_task_kind(const std::string& text);

/// Synthetic sequence-to-sequence task. Content tokens are 0..vocab-1 and the
/// separator is token `vocab`, so models need at least vocab + 1 ids.
struct TaskSpec {
  TaskKind kind = TaskKind::Copy;
  int seq_len = 4;
  int vocab = 16;
  int train_size = 256;
  int eval_size = 64;
  std::uint64_t seed = 0;

  int separator() const { return vocab; }
  /// Prompt plus separator.
  int prompt_len() const { return seq_len + 1; }
  /// Teacher-forced training sequence: prompt, separator, answer[0..L-2].
  int sequence_len() const { return 2 * seq_len; }
  /// Adapter statistics freeze once the first generated token is in.
  int freeze_position() const { return prompt_len(); }

  void validate() const;
  /// Also checks the task fits the model (vocab and max_seq).
  void validate_for(const ModelConfig& model) const;
};

struct Example {
  std::vector<int> prompt;
  std::vector<int> target;
};

struct Dataset {
  TaskSpec spec;
  std::vector<Example> train;
  std::vector<Example> eval;
};

std::vector<int> task_answer(TaskKind kind, std::span<const int> prompt, int vocab);

/// Deterministic in spec.seed. Throws ConfigError for vocab < 3.
Dataset make_task(const TaskSpec& spec);

/// prompt + separator.
std::vector<int> model_prompt(const Example& ex, int separator);
/// prompt + separator + target without its last token.
std::vector<int> training_sequence(const Example& ex, int separator);

}  // namespace easkit
