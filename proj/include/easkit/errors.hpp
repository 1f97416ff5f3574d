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

#include <stdexcept>
#include <string>

namespace easkit {

/// Base class for every error raised by easkit. `kind()` is a stable
/// machine-readable tag used by the CLI error JSON.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define EASKIT_DEFINE_ERROR(Name, tag)                                  \
  class Name : public Error {                                           \
   public:                                                              \
    explicit Name(const std::string& message) : Error(tag, message) {} \
  }

EASKIT_DEFINE_ERROR(ShapeError, "shape");
EASKIT_DEFINE_ERROR(DomainError, "domain");
EASKIT_DEFINE_ERROR(EmptyInputError, "empty_input");
EASKIT_DEFINE_ERROR(IndexError, "index");
EASKIT_DEFINE_ERROR(DiagnosticError, "diagnostic");
EASKIT_DEFINE_ERROR(ConfigError, "config");
EASKIT_DEFINE_ERROR(CapacityError, "capacity");
EASKIT_DEFINE_ERROR(InputError, "input");
EASKIT_DEFINE_ERROR(ModeError, "mode");
EASKIT_DEFINE_ERROR(StateError, "state");
EASKIT_DEFINE_ERROR(ContractError, "contract");
EASKIT_DEFINE_ERROR(CorruptCheckpointError, "corrupt_checkpoint");
EASKIT_DEFINE_ERROR(VersionError, "version");
EASKIT_DEFINE_ERROR(MissingCheckpointError, "missing_checkpoint");

#undef EASKIT_DEFINE_ERROR

}  // namespace easkit
