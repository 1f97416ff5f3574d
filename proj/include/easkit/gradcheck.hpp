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

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "easkit/tape.hpp"

namespace easkit {

/// A named view of a parameter tensor's storage. The finite-difference
/// oracle perturbs entries through it in place and restores them.
template <typename Scalar>
struct ParamRef {
  std::string name;
  std::span<Scalar> values;
};

template <typename Scalar>
using LossBuilder = std::function<typename GradTape<Scalar>::Var(GradTape<Scalar>&)>;

struct GradCheckOptions {
  double step = 1e-5;
  double relative_tolerance = 1e-4;
  double absolute_tolerance = 1e-7;
  /// Below this magnitude on both sides the absolute branch applies.
  double small_threshold = 1e-6;
  /// 0 checks every entry; otherwise at most this many entries per tensor,
  /// spread evenly over the tensor.
  size_t max_entries_per_tensor = 0;
};

struct GradCheckEntry {
  std::string name;
  size_t checked = 0;
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_relative_error = 0.0;
  bool passed = true;
};

/// Compares tape gradients of `build_loss` against central differences
/// (f(p+h) - f(p-h)) / 2h for every tensor in `params`. Tensors the tape never
/// registered are treated as having zero gradient. Throws DiagnosticError if
/// any loss evaluation is non-finite.
template <typename Scalar>
GradCheckReport finite_diff_check(const LossBuilder<Scalar>& build_loss,
                                  std::span<const ParamRef<Scalar>> params,
                                  const GradCheckOptions& options = {});

}  // namespace easkit
