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

#include "easkit/task.hpp"

#include "easkit/rng.hpp"

namespace easkit {

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::Copy: return "copy";
    case TaskKind::Reverse: return "reverse";
    case TaskKind::ModularAdd: return "modular-add";
  }
  return "?";
}

TaskKind parse_task_kind(const std::string& text) {
  if (text == "copy") return TaskKind::Copy;
  if (text == "reverse") return TaskKind::Reverse;
  if (text == "modular-add") return TaskKind::ModularAdd;
  throw ConfigError("unknown task kind '" + text + "'");
}

void TaskSpec::validate() const {
  if (vocab < 3) throw ConfigError("task vocab must be >= 3");
  if (seq_len < 1) throw ConfigError("task seq_len must be >= 1");
  if (train_size < 1 || eval_size < 0) throw ConfigError("task sizes must be positive");
}

void TaskSpec::validate_for(const ModelConfig& model) const {
  validate();
  if (model.vocab < vocab + 1) {
    throw ConfigError("model vocab " + std::to_string(model.vocab) + " cannot hold " +
                      std::to_string(vocab) + " task tokens plus a separator");
  }
  if (2 * seq_len + 1 > model.max_seq) {
    throw ConfigError("task seq_len " + std::to_string(seq_len) + " does not fit max_seq " +
                      std::to_string(model.max_seq));
  }
}

std::vector<int> task_answer(TaskKind kind, std::span<const int> prompt, int vocab) {
  const size_t n = prompt.size();
  std::vector<int> out(n);
  for (size_t i = 0; i < n; ++i) {
    switch (kind) {
      case TaskKind::Copy: out[i] = prompt[i]; break;
      case TaskKind::Reverse: out[i] = prompt[n - 1 - i]; break;
      case TaskKind::ModularAdd: out[i] = (prompt[i] + prompt[(i + 1) % n]) % vocab; break;
    }
  }
  return out;
}

Dataset make_task(const TaskSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  auto draw = [&](int count) {
    std::vector<Example> out;
    out.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
      Example ex;
      ex.prompt.resize(static_cast<size_t>(spec.seq_len));
      for (auto& t : ex.prompt) t = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(spec.vocab)));
      ex.target = task_answer(spec.kind, ex.prompt, spec.vocab);
      out.push_back(std::move(ex));
    }
    return out;
  };
  Dataset ds;
  ds.spec = spec;
  ds.train = draw(spec.train_size);
  ds.eval = draw(spec.eval_size);
  return ds;
}

std::vector<int> model_prompt(const Example& ex, int separator) {
  std::vector<int> out = ex.prompt;
  out.push_back(separator);
  return out;
}

std::vector<int> training_sequence(const Example& ex, int separator) {
  std::vector<int> out = model_prompt(ex, separator);
  out.insert(out.end(), ex.target.begin(), ex.target.end() - 1);
  return out;
}

}  // namespace easkit
