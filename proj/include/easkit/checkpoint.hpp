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

#include <optional>
#include <string>

#include "easkit/bandit.hpp"
#include "easkit/config.hpp"
#include "easkit/model.hpp"
#include "easkit/trainer.hpp"
#include "easkit/transformer.hpp"

namespace easkit {

inline constexpr int kCheckpointVersion = 1;

std::string to_string(DecodeMode mode);
DecodeMode parse_decode_mode(const std::string& text);

/// Tensors are held at double precision; f32 runs widen on save and narrow
/// on load, which is exact.
struct Checkpoint {
  int format_version = kCheckpointVersion;
  std::string stage;
  RunConfig config;
  Model<double> model;
  AdapterSet<double> adapters;
  SkipMask mask;
  std::optional<PreferenceState> preferences;
  DecodeMode decode_mode = DecodeMode::AlwaysEager;
  std::optional<EvalReport> eval;
};

std::string checkpoint_to_json(const Checkpoint& ckpt);
/// CorruptCheckpointError on malformed or inconsistent content,
/// VersionError on an unknown format_version.
Checkpoint checkpoint_from_json(const std::string& text);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
/// MissingCheckpointError when the file does not exist.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace easkit
