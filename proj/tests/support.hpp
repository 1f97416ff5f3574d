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

#include <cmath>
#include <vector>

#include "easkit/model.hpp"
#include "easkit/numeric.hpp"
#include "easkit/pia.hpp"
#include "easkit/rng.hpp"

namespace easkit::testing {

template <typename Scalar = double>
Matrix<Scalar> random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  Matrix<Scalar> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = Scalar(rng.normal(0.0, scale));
  return m;
}

template <typename Scalar = double>
RowVector<Scalar> random_row(Rng& rng, Eigen::Index n, double scale = 1.0) {
  RowVector<Scalar> v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = Scalar(rng.normal(0.0, scale));
  return v;
}

template <typename A, typename B>
double max_abs_diff(const A& a, const B& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return INFINITY;
  if (a.size() == 0) return 0.0;
  return static_cast<double>((a - b).cwiseAbs().maxCoeff());
}

template <typename A, typename B>
bool bit_equal(const A& a, const B& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (std::signbit(a.data()[i]) != std::signbit(b.data()[i]) || !(a.data()[i] == b.data()[i])) {
      return false;
    }
  }
  return true;
}

/// Live two-path adapter with every tensor random.
template <typename Scalar = double>
PiaParams<Scalar> random_pia(Rng& rng, int d, int r, double tau = 1.0) {
  auto p = PiaParams<Scalar>::zeros(PiaMode::TwoPathSkip, d, r, Scalar(tau));
  p.visit("", [&](const std::string&, auto& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = Scalar(rng.normal(0.0, 0.5));
  });
  return p;
}

template <typename Scalar = double>
FfnWeights<Scalar> random_ffn(Rng& rng, int d, int d_ffn) {
  return {random_matrix<Scalar>(rng, d, d_ffn, 1.0 / std::sqrt(d)), random_row<Scalar>(rng, d_ffn, 0.1),
          random_matrix<Scalar>(rng, d_ffn, d, 1.0 / std::sqrt(d_ffn)), random_row<Scalar>(rng, d, 0.1)};
}

/// Fills every adapter tensor (including up paths) with random values.
template <typename Scalar>
void randomize(AdapterSet<Scalar>& adapters, Rng& rng, double scale = 0.3) {
  adapters.visit([&](const std::string&, auto& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = Scalar(rng.normal(0.0, scale));
  });
}

inline ModelConfig tiny_config(int n_layers = 2, int d = 8, int vocab = 11, int max_seq = 16) {
  ModelConfig c;
  c.n_layers = n_layers;
  c.d_model = d;
  c.n_heads = 2;
  c.d_ffn = 2 * d;
  c.vocab = vocab;
  c.max_seq = max_seq;
  c.r_skip = 3;
  c.r_adapt = 2;
  return c;
}

inline std::vector<int> random_tokens(Rng& rng, int n, int vocab) {
  std::vector<int> t(static_cast<size_t>(n));
  for (auto& x : t) x = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(vocab)));
  return t;
}

}  // namespace easkit::testing
