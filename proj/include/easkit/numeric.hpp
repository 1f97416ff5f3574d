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

#include <Eigen/Dense>

#include <span>
#include <string>

namespace easkit {

/// Dense row-major matrix. Rows are tokens, columns are features, so every
/// projection reads `X * W + b` with `b` broadcast over rows.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using MatrixD = Matrix<double>;
using MatrixF = Matrix<float>;
using RowVectorD = RowVector<double>;
using RowVectorF = RowVector<float>;

inline constexpr double kLayerNormEps = 1e-5;

std::string shape_string(Eigen::Index rows, Eigen::Index cols);

template <typename Derived>
std::string shape_of(const Eigen::EigenBase<Derived>& m) {
  return shape_string(m.rows(), m.cols());
}

/// Y = X * W + b. Throws ShapeError naming both shapes on mismatch.
template <typename Scalar>
Matrix<Scalar> matmul_affine(const Matrix<Scalar>& x, const Matrix<Scalar>& w,
                             const RowVector<Scalar>& b);

/// softmax(v / tau), max-subtracted. Throws DomainError for tau <= 0.
template <typename Scalar>
RowVector<Scalar> softmax_temp(const RowVector<Scalar>& v, Scalar tau);

/// Column means. Throws EmptyInputError for zero rows.
template <typename Scalar>
RowVector<Scalar> average_pool_rows(const Matrix<Scalar>& x);

template <typename Scalar>
RowVector<Scalar> layer_norm(const RowVector<Scalar>& x, const RowVector<Scalar>& gamma,
                             const RowVector<Scalar>& beta, Scalar eps = Scalar(kLayerNormEps));

/// Row-wise layer_norm of every row of `x`.
template <typename Scalar>
Matrix<Scalar> layer_norm_rows(const Matrix<Scalar>& x, const RowVector<Scalar>& gamma,
                               const RowVector<Scalar>& beta, Scalar eps = Scalar(kLayerNormEps));

/// Exact GELU, x * Phi(x).
template <typename Scalar>
Scalar gelu(Scalar x);

/// d/dx of the exact GELU.
template <typename Scalar>
Scalar gelu_derivative(Scalar x);

template <typename Scalar>
Matrix<Scalar> gelu(const Matrix<Scalar>& x);

/// Mean over rows of -log softmax(logits[i])[targets[i]].
template <typename Scalar>
Scalar cross_entropy_loss(const Matrix<Scalar>& logits, std::span<const int> targets);

/// Throws DiagnosticError if any entry is NaN or Inf.
template <typename Derived>
void require_finite(const Eigen::DenseBase<Derived>& m, const char* what);

}  // namespace easkit

#include "easkit/errors.hpp"

namespace easkit {

template <typename Derived>
void require_finite(const Eigen::DenseBase<Derived>& m, const char* what) {
  if (!m.derived().allFinite()) {
    throw DiagnosticError(std::string("non-finite values in ") + what);
  }
}

}  // namespace easkit
