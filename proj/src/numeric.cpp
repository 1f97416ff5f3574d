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

#include "easkit/numeric.hpp"

#include <cmath>
#include <numbers>

namespace easkit {

std::string shape_string(Eigen::Index rows, Eigen::Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

template <typename Scalar>
Matrix<Scalar> matmul_affine(const Matrix<Scalar>& x, const Matrix<Scalar>& w,
                             const RowVector<Scalar>& b) {
  if (x.cols() != w.rows() || b.size() != w.cols()) {
    throw ShapeError("matmul_affine: X " + shape_of(x) + " W " + shape_of(w) + " b " +
                     shape_of(b));
  }
  Matrix<Scalar> y = x * w;
  y.rowwise() += b;
  return y;
}

template <typename Scalar>
RowVector<Scalar> softmax_temp(const RowVector<Scalar>& v, Scalar tau) {
  if (!(tau > Scalar(0))) throw DomainError("softmax_temp: temperature must be positive");
  if (v.size() == 0) throw EmptyInputError("softmax_temp: empty input");
  RowVector<Scalar> z = v / tau;
  z.array() -= z.maxCoeff();
  z = z.array().exp().matrix();
  return z / z.sum();
}

template <typename Scalar>
RowVector<Scalar> average_pool_rows(const Matrix<Scalar>& x) {
  if (x.rows() == 0) throw EmptyInputError("average_pool_rows: no rows");
  return x.colwise().mean();
}

template <typename Scalar>
RowVector<Scalar> layer_norm(const RowVector<Scalar>& x, const RowVector<Scalar>& gamma,
                             const RowVector<Scalar>& beta, Scalar eps) {
  if (x.size() == 0) throw EmptyInputError("layer_norm: empty input");
  if (gamma.size() != x.size() || beta.size() != x.size()) {
    throw ShapeError("layer_norm: x " + shape_of(x) + " gamma " + shape_of(gamma) + " beta " +
                     shape_of(beta));
  }
  const Scalar mean = x.mean();
  const RowVector<Scalar> centered = x.array() - mean;
  const Scalar var = centered.squaredNorm() / Scalar(x.size());
  const Scalar inv = Scalar(1) / std::sqrt(var + eps);
  return (centered.array() * inv * gamma.array() + beta.array()).matrix();
}

template <typename Scalar>
Matrix<Scalar> layer_norm_rows(const Matrix<Scalar>& x, const RowVector<Scalar>& gamma,
                               const RowVector<Scalar>& beta, Scalar eps) {
  Matrix<Scalar> y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    y.row(i) = layer_norm<Scalar>(x.row(i), gamma, beta, eps);
  }
  return y;
}

template <typename Scalar>
Scalar gelu(Scalar x) {
  return Scalar(0.5) * x * (Scalar(1) + std::erf(x / std::numbers::sqrt2_v<Scalar>));
}

template <typename Scalar>
Scalar gelu_derivative(Scalar x) {
  const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(x / std::numbers::sqrt2_v<Scalar>));
  const Scalar pdf = std::exp(Scalar(-0.5) * x * x) * std::numbers::inv_sqrtpi_v<Scalar> /
                     std::numbers::sqrt2_v<Scalar>;
  return cdf + x * pdf;
}

template <typename Scalar>
Matrix<Scalar> gelu(const Matrix<Scalar>& x) {
  return x.unaryExpr([](Scalar v) { return gelu<Scalar>(v); });
}

template <typename Scalar>
Scalar cross_entropy_loss(const Matrix<Scalar>& logits, std::span<const int> targets) {
  if (static_cast<Eigen::Index>(targets.size()) != logits.rows()) {
    throw ShapeError("cross_entropy_loss: logits " + shape_of(logits) + " targets " +
                     std::to_string(targets.size()));
  }
  if (logits.rows() == 0) throw EmptyInputError("cross_entropy_loss: no positions");
  Scalar total = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const int t = targets[static_cast<size_t>(i)];
    if (t < 0 || t >= logits.cols()) {
      throw IndexError("cross_entropy_loss: target " + std::to_string(t) + " outside [0, " +
                       std::to_string(logits.cols()) + ")");
    }
    const Scalar mx = logits.row(i).maxCoeff();
    const Scalar lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
    total += lse - logits(i, t);
  }
  return total / Scalar(logits.rows());
}

#define EASKIT_INSTANTIATE(S)                                                                  \
  template Matrix<S> matmul_affine<S>(const Matrix<S>&, const Matrix<S>&, const RowVector<S>&); \
  template RowVector<S> softmax_temp<S>(const RowVector<S>&, S);                               \
  template RowVector<S> average_pool_rows<S>(const Matrix<S>&);                                \
  template RowVector<S> layer_norm<S>(const RowVector<S>&, const RowVector<S>&,                \
                                      const RowVector<S>&, S);                                 \
  template Matrix<S> layer_norm_rows<S>(const Matrix<S>&, const RowVector<S>&,                 \
                                        const RowVector<S>&, S);                               \
  template S gelu<S>(S);                                                                       \
  template S gelu_derivative<S>(S);                                                            \
  template Matrix<S> gelu<S>(const Matrix<S>&);                                                \
  template S cross_entropy_loss<S>(const Matrix<S>&, std::span<const int>);

EASKIT_INSTANTIATE(float)
EASKIT_INSTANTIATE(double)

#undef EASKIT_INSTANTIATE

}  // namespace easkit
