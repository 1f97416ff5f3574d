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

#include "easkit/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace easkit {
namespace {

template <typename Scalar>
double evaluate(const LossBuilder<Scalar>& build_loss) {
  GradTape<Scalar> tape;
  const double v = static_cast<double>(tape.scalar(build_loss(tape)));
  if (!std::isfinite(v)) throw DiagnosticError("finite_diff_check: non-finite loss");
  return v;
}

}  // namespace

template <typename Scalar>
GradCheckReport finite_diff_check(const LossBuilder<Scalar>& build_loss,
                                  std::span<const ParamRef<Scalar>> params,
                                  const GradCheckOptions& options) {
  GradTape<Scalar> tape;
  auto loss = build_loss(tape);
  if (!std::isfinite(static_cast<double>(tape.scalar(loss)))) {
    throw DiagnosticError("finite_diff_check: non-finite loss");
  }
  tape.backward(loss);

  GradCheckReport report;
  for (const auto& p : params) {
    GradCheckEntry entry;
    entry.name = p.name;
    Matrix<Scalar> analytic;
    if (tape.has_parameter(p.name)) {
      analytic = tape.gradient(p.name);
      if (static_cast<size_t>(analytic.size()) != p.values.size()) {
        throw ShapeError("finite_diff_check: gradient of " + p.name + " has " +
                         std::to_string(analytic.size()) + " entries, parameter has " +
                         std::to_string(p.values.size()));
      }
    }
    const size_t n = p.values.size();
    const size_t stride = (options.max_entries_per_tensor == 0 || n <= options.max_entries_per_tensor)
                              ? 1
                              : n / options.max_entries_per_tensor;
    for (size_t idx = 0; idx < n; idx += stride) {
      Scalar& slot = p.values[idx];
      const Scalar saved = slot;
      slot = saved + static_cast<Scalar>(options.step);
      const double up = evaluate<Scalar>(build_loss);
      slot = saved - static_cast<Scalar>(options.step);
      const double down = evaluate<Scalar>(build_loss);
      slot = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double exact =
          analytic.size() == 0 ? 0.0 : static_cast<double>(analytic.data()[idx]);
      const double abs_err = std::abs(numeric - exact);
      entry.max_absolute_error = std::max(entry.max_absolute_error, abs_err);
      ++entry.checked;
      if (std::abs(numeric) < options.small_threshold && std::abs(exact) < options.small_threshold) {
        if (abs_err > options.absolute_tolerance) entry.passed = false;
        continue;
      }
      const double rel = abs_err / std::max(std::abs(numeric), std::abs(exact));
      entry.max_relative_error = std::max(entry.max_relative_error, rel);
      if (rel > options.relative_tolerance) entry.passed = false;
    }
    report.max_relative_error = std::max(report.max_relative_error, entry.max_relative_error);
    report.passed = report.passed && entry.passed;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

template GradCheckReport finite_diff_check<float>(const LossBuilder<float>&,
                                                  std::span<const ParamRef<float>>,
                                                  const GradCheckOptions&);
template GradCheckReport finite_diff_check<double>(const LossBuilder<double>&,
                                                   std::span<const ParamRef<double>>,
                                                   const GradCheckOptions&);

}  // namespace easkit
