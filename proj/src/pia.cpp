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

#include "easkit/pia.hpp"

namespace easkit {

std::string to_string(PiaMode mode) {
  return mode == PiaMode::TwoPathSkip ? "two-path-skip" : "single-path-adapt";
}

PiaMode parse_pia_mode(const std::string& text) {
  if (text == "two-path-skip") return PiaMode::TwoPathSkip;
  if (text == "single-path-adapt") return PiaMode::SinglePathAdapt;
  throw ConfigError("unknown PIA mode '" + text + "'");
}

template <typename Scalar>
PiaParams<Scalar> PiaParams<Scalar>::zeros(PiaMode mode, int dim, int rank, Scalar tau) {
  if (rank <= 0 || rank >= dim) {
    throw ConfigError("PIA rank " + std::to_string(rank) + " must be in [1, " +
                      std::to_string(dim) + ")");
  }
  if (!(tau > Scalar(0))) throw ConfigError("PIA temperature must be positive");
  PiaParams p;
  p.mode = mode;
  p.tau = tau;
  p.w_d1 = Matrix<Scalar>::Zero(dim, rank);
  p.b_d1 = RowVector<Scalar>::Zero(rank);
  p.w_u1 = Matrix<Scalar>::Zero(rank, dim);
  p.b_u1 = RowVector<Scalar>::Zero(dim);
  if (mode == PiaMode::TwoPathSkip) {
    p.w_d2 = Matrix<Scalar>::Zero(dim, rank);
    p.b_d2 = RowVector<Scalar>::Zero(rank);
    p.w_u2 = Matrix<Scalar>::Zero(rank, dim);
    p.b_u2 = RowVector<Scalar>::Zero(dim);
    p.w_r = Matrix<Scalar>::Zero(dim, 2);
    p.b_r = RowVector<Scalar>::Zero(2);
  }
  return p;
}

template <typename Scalar>
PiaParams<Scalar> PiaParams<Scalar>::init(PiaMode mode, int dim, int rank, Scalar tau, Rng& rng) {
  PiaParams p = zeros(mode, dim, rank, tau);
  const double stddev = 1.0 / std::sqrt(static_cast<double>(dim));
  auto fill = [&](Matrix<Scalar>& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(rng.normal(0.0, stddev));
  };
  fill(p.w_d1);
  if (mode == PiaMode::TwoPathSkip) fill(p.w_d2);
  return p;
}

template <typename Scalar>
void PiaParams<Scalar>::validate() const {
  const Eigen::Index d = w_d1.rows();
  const Eigen::Index r = w_d1.cols();
  auto expect = [](bool ok, const std::string& what) {
    if (!ok) throw ShapeError("PIA: inconsistent " + what);
  };
  expect(b_d1.size() == r, "b_d1");
  expect(w_u1.rows() == r && w_u1.cols() == d, "w_u1");
  expect(b_u1.size() == d, "b_u1");
  if (mode == PiaMode::TwoPathSkip) {
    expect(w_d2.rows() == d && w_d2.cols() == r, "w_d2");
    expect(b_d2.size() == r, "b_d2");
    expect(w_u2.rows() == r && w_u2.cols() == d, "w_u2");
    expect(b_u2.size() == d, "b_u2");
    expect(w_r.rows() == d && w_r.cols() == 2, "w_r");
    expect(b_r.size() == 2, "b_r");
  }
  if (frozen) {
    expect(frozen->b_d.size() == r, "frozen b_d");
    expect(frozen->alpha.size() == 2, "frozen alpha");
  }
}

template <typename Scalar>
Matrix<Scalar> ffn_forward(const Matrix<Scalar>& x, const FfnWeights<Scalar>& ffn) {
  return matmul_affine<Scalar>(gelu<Scalar>(matmul_affine<Scalar>(x, ffn.w1, ffn.b1)), ffn.w2,
                               ffn.b2);
}

template <typename Scalar>
RowVector<Scalar> route(const RowVector<Scalar>& x_hat, const PiaParams<Scalar>& pia) {
  if (pia.mode != PiaMode::TwoPathSkip) throw ModeError("route: single-path adapter has no router");
  if (x_hat.size() != pia.w_r.rows()) {
    throw ShapeError("route: x_hat " + shape_of(x_hat) + " W_r " + shape_of(pia.w_r));
  }
  return softmax_temp<Scalar>(x_hat * pia.w_r + pia.b_r, pia.tau);
}

template <typename Scalar>
Matrix<Scalar> pia_forward_pooled(const Matrix<Scalar>& x, const Matrix<Scalar>& pooled,
                                  const PiaParams<Scalar>& pia) {
  if (pia.mode != PiaMode::TwoPathSkip) throw ModeError("pia_forward: adapter is single-path");
  if (x.cols() != pia.w_d1.rows()) {
    throw ShapeError("pia_forward: X " + shape_of(x) + " W_d1 " + shape_of(pia.w_d1));
  }
  if (pia.frozen) {
    const auto& fz = *pia.frozen;
    const Matrix<Scalar> h = matmul_affine<Scalar>(x, pia.w_d1, fz.b_d);
    return fz.alpha(0) * matmul_affine<Scalar>(h, pia.w_u1, pia.b_u1) +
           fz.alpha(1) * matmul_affine<Scalar>(h, pia.w_u2, pia.b_u2);
  }
  if (pooled.rows() != x.rows() || pooled.cols() != x.cols()) {
    throw ShapeError("pia_forward: pooled " + shape_of(pooled) + " X " + shape_of(x));
  }
  Matrix<Scalar> h = matmul_affine<Scalar>(x, pia.w_d1, pia.b_d1);
  h += matmul_affine<Scalar>(pooled, pia.w_d2, pia.b_d2);
  const Matrix<Scalar> up1 = matmul_affine<Scalar>(h, pia.w_u1, pia.b_u1);
  const Matrix<Scalar> up2 = matmul_affine<Scalar>(h, pia.w_u2, pia.b_u2);
  const Matrix<Scalar> logits = matmul_affine<Scalar>(pooled, pia.w_r, pia.b_r);
  Matrix<Scalar> out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const RowVector<Scalar> alpha = softmax_temp<Scalar>(logits.row(i), pia.tau);
    out.row(i) = alpha(0) * up1.row(i) + alpha(1) * up2.row(i);
  }
  return out;
}

template <typename Scalar>
Matrix<Scalar> pia_forward(const Matrix<Scalar>& x, const PiaParams<Scalar>& pia) {
  if (pia.frozen) return pia_forward_pooled<Scalar>(x, Matrix<Scalar>(), pia);
  const RowVector<Scalar> mean = average_pool_rows<Scalar>(x);
  return pia_forward_pooled<Scalar>(x, mean.replicate(x.rows(), 1), pia);
}

template <typename Scalar>
Matrix<Scalar> adaptation_forward(const Matrix<Scalar>& x, const PiaParams<Scalar>& pia) {
  if (pia.mode != PiaMode::SinglePathAdapt) {
    throw ModeError("adaptation_forward: adapter is in two-path skip mode");
  }
  return matmul_affine<Scalar>(matmul_affine<Scalar>(x, pia.w_d1, pia.b_d1), pia.w_u1, pia.b_u1);
}

template <typename Scalar>
PiaParams<Scalar> freeze_with_mean(const PiaParams<Scalar>& pia, const RowVector<Scalar>& x_mean) {
  if (pia.mode != PiaMode::TwoPathSkip) throw ModeError("freeze: adapter is single-path");
  if (pia.frozen) throw StateError("freeze: adapter is already frozen");
  PiaParams<Scalar> out = pia;
  FrozenTerms<Scalar> fz;
  fz.b_d = pia.b_d1 + (x_mean * pia.w_d2 + pia.b_d2);
  fz.alpha = route<Scalar>(x_mean, pia);
  out.frozen = std::move(fz);
  return out;
}

template <typename Scalar>
PiaParams<Scalar> freeze_dynamic_terms(const PiaParams<Scalar>& pia, const Matrix<Scalar>& x_ref) {
  if (x_ref.cols() != pia.w_d1.rows()) {
    throw ShapeError("freeze: X_ref " + shape_of(x_ref) + " W_d1 " + shape_of(pia.w_d1));
  }
  return freeze_with_mean<Scalar>(pia, average_pool_rows<Scalar>(x_ref));
}

template <typename Scalar>
FusedLinear<Scalar> fuse_to_linear(const PiaParams<Scalar>& pia) {
  if (pia.mode != PiaMode::TwoPathSkip) throw ModeError("fuse: adapter is single-path");
  if (!pia.frozen) throw StateError("fuse: adapter is live; freeze it first");
  const auto& fz = *pia.frozen;
  const Matrix<Scalar> w_u = fz.alpha(0) * pia.w_u1 + fz.alpha(1) * pia.w_u2;
  const RowVector<Scalar> b_u = fz.alpha(0) * pia.b_u1 + fz.alpha(1) * pia.b_u2;
  FusedLinear<Scalar> out;
  out.w_p = pia.w_d1 * w_u;
  out.b_p = fz.b_d * w_u + b_u;
  return out;
}

template <typename Scalar>
FfnWeights<Scalar> fold_into_ffn(const FusedLinear<Scalar>& fused, const FfnWeights<Scalar>& ffn) {
  if (fused.w_p.rows() != fused.w_p.cols() || fused.w_p.cols() != ffn.w1.rows() ||
      fused.b_p.size() != ffn.w1.rows()) {
    throw ShapeError("fold_into_ffn: W_p " + shape_of(fused.w_p) + " b_p " +
                     shape_of(fused.b_p) + " W1 " + shape_of(ffn.w1));
  }
  FfnWeights<Scalar> out = ffn;
  out.w1 = ffn.w1 + fused.w_p * ffn.w1;
  out.b1 = fused.b_p * ffn.w1 + ffn.b1;
  return out;
}

template <typename Scalar>
FusedLinear<Scalar> sum_fused(const std::vector<FusedLinear<Scalar>>& parts, int dim) {
  FusedLinear<Scalar> out{Matrix<Scalar>::Zero(dim, dim), RowVector<Scalar>::Zero(dim)};
  for (const auto& p : parts) {
    out.w_p += p.w_p;
    out.b_p += p.b_p;
  }
  return out;
}

#define EASKIT_INSTANTIATE(S)                                                                    \
  template struct PiaParams<S>;                                                                  \
  template Matrix<S> ffn_forward<S>(const Matrix<S>&, const FfnWeights<S>&);                     \
  template RowVector<S> route<S>(const RowVector<S>&, const PiaParams<S>&);                      \
  template Matrix<S> pia_forward_pooled<S>(const Matrix<S>&, const Matrix<S>&,                   \
                                           const PiaParams<S>&);                                 \
  template Matrix<S> pia_forward<S>(const Matrix<S>&, const PiaParams<S>&);                      \
  template Matrix<S> adaptation_forward<S>(const Matrix<S>&, const PiaParams<S>&);               \
  template PiaParams<S> freeze_with_mean<S>(const PiaParams<S>&, const RowVector<S>&);           \
  template PiaParams<S> freeze_dynamic_terms<S>(const PiaParams<S>&, const Matrix<S>&);          \
  template FusedLinear<S> fuse_to_linear<S>(const PiaParams<S>&);                                \
  template FfnWeights<S> fold_into_ffn<S>(const FusedLinear<S>&, const FfnWeights<S>&);          \
  template FusedLinear<S> sum_fused<S>(const std::vector<FusedLinear<S>>&, int);

EASKIT_INSTANTIATE(float)
EASKIT_INSTANTIATE(double)

#undef EASKIT_INSTANTIATE

}  // namespace easkit
