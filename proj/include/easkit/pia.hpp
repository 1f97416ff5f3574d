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

#include "easkit/numeric.hpp"
#include "easkit/rng.hpp"

namespace easkit {

enum class PiaMode {
  TwoPathSkip,      // replaces a skipped attention: two down paths, routed up paths
  SinglePathAdapt,  // plain bottleneck adapter: f_d1 then f_u1 only
};

std::string to_string(PiaMode mode);
PiaMode parse_pia_mode(const std::string& text);

/// Example-dependent terms captured at freeze time: the merged down bias
/// b_d = b_d1 + avg(f_d2(X_ref)) and the router weights alpha.
template <typename Scalar>
struct FrozenTerms {
  RowVector<Scalar> b_d;
  RowVector<Scalar> alpha;
};

/// Propagation-of-Information Adapter parameters.
///
/// Down path: H = X W_d1 + b_d1 + avg(X W_d2 + b_d2)   (n x r)
/// Up path:   out = a1 (H W_u1 + b_u1) + a2 (H W_u2 + b_u2)
/// Router:    [a1, a2] = softmax((avg(X) W_r + b_r) / tau)
///
/// In SinglePathAdapt mode the second down/up path and the router are empty.
template <typename Scalar>
struct PiaParams {
  PiaMode mode = PiaMode::TwoPathSkip;
  Scalar tau = Scalar(1);
  Matrix<Scalar> w_d1;
  RowVector<Scalar> b_d1;
  Matrix<Scalar> w_d2;
  RowVector<Scalar> b_d2;
  Matrix<Scalar> w_u1;
  RowVector<Scalar> b_u1;
  Matrix<Scalar> w_u2;
  RowVector<Scalar> b_u2;
  Matrix<Scalar> w_r;
  RowVector<Scalar> b_r;
  std::optional<FrozenTerms<Scalar>> frozen;

  int dim() const { return static_cast<int>(w_d1.rows()); }
  int rank() const { return static_cast<int>(w_d1.cols()); }
  bool is_frozen() const { return frozen.has_value(); }

  /// Zero-valued adapter of the given shape.
  static PiaParams zeros(PiaMode mode, int dim, int rank, Scalar tau = Scalar(1));
  /// Down projections ~ N(0, 1/dim); up projections, biases and router zero,
  /// so a fresh adapter contributes exactly nothing.
  static PiaParams init(PiaMode mode, int dim, int rank, Scalar tau, Rng& rng);

  /// Calls f(name, tensor) for every trainable tensor present in this mode.
  template <typename F>
  void visit(const std::string& prefix, F&& f);
  template <typename F>
  void visit(const std::string& prefix, F&& f) const;

  /// Throws ShapeError/ConfigError if the tensor shapes are inconsistent.
  void validate() const;
};

/// The collapsed adapter, X W_p + b_p.
template <typename Scalar>
struct FusedLinear {
  Matrix<Scalar> w_p;
  RowVector<Scalar> b_p;

  Matrix<Scalar> apply(const Matrix<Scalar>& x) const { return matmul_affine(x, w_p, b_p); }
};

template <typename Scalar>
struct FfnWeights {
  Matrix<Scalar> w1;
  RowVector<Scalar> b1;
  Matrix<Scalar> w2;
  RowVector<Scalar> b2;
};

/// W2 gelu(X W1 + b1) + b2.
template <typename Scalar>
Matrix<Scalar> ffn_forward(const Matrix<Scalar>& x, const FfnWeights<Scalar>& ffn);

/// softmax((x_hat W_r + b_r) / tau). Throws ModeError for single-path adapters.
template <typename Scalar>
RowVector<Scalar> route(const RowVector<Scalar>& x_hat, const PiaParams<Scalar>& pia);

/// Adapter output for each row of `x`, where row t of `pooled` is the pooled
/// input mean that row t may see. Frozen adapters ignore `pooled`.
template <typename Scalar>
Matrix<Scalar> pia_forward_pooled(const Matrix<Scalar>& x, const Matrix<Scalar>& pooled,
                                  const PiaParams<Scalar>& pia);

/// Adapter output with avg(.) taken over all rows of `x`.
template <typename Scalar>
Matrix<Scalar> pia_forward(const Matrix<Scalar>& x, const PiaParams<Scalar>& pia);

/// f_u1(f_d1(X)); single-path adapters only.
template <typename Scalar>
Matrix<Scalar> adaptation_forward(const Matrix<Scalar>& x, const PiaParams<Scalar>& pia);

/// Returns a frozen copy whose b_d and alpha come from the pooled mean x_mean.
template <typename Scalar>
PiaParams<Scalar> freeze_with_mean(const PiaParams<Scalar>& pia, const RowVector<Scalar>& x_mean);

/// Returns a frozen copy capturing b_d and alpha from avg(x_ref).
template <typename Scalar>
PiaParams<Scalar> freeze_dynamic_terms(const PiaParams<Scalar>& pia, const Matrix<Scalar>& x_ref);

/// W_p = W_d1 (a1 W_u1 + a2 W_u2), b_p = b_d W_u + (a1 b_u1 + a2 b_u2).
template <typename Scalar>
FusedLinear<Scalar> fuse_to_linear(const PiaParams<Scalar>& pia);

/// FFN' with W1' = (I + W_p) W1 and b1' = b_p W1 + b1, so that
/// FFN'(Y) = FFN(Y + Y W_p + b_p).
template <typename Scalar>
FfnWeights<Scalar> fold_into_ffn(const FusedLinear<Scalar>& fused, const FfnWeights<Scalar>& ffn);

/// Sum of several fused maps acting on the same input.
template <typename Scalar>
FusedLinear<Scalar> sum_fused(const std::vector<FusedLinear<Scalar>>& parts, int dim);

// ---------------------------------------------------------------------------

template <typename Scalar>
template <typename F>
void PiaParams<Scalar>::visit(const std::string& prefix, F&& f) {
  f(prefix + "w_d1", w_d1);
  f(prefix + "b_d1", b_d1);
  f(prefix + "w_u1", w_u1);
  f(prefix + "b_u1", b_u1);
  if (mode == PiaMode::TwoPathSkip) {
    f(prefix + "w_d2", w_d2);
    f(prefix + "b_d2", b_d2);
    f(prefix + "w_u2", w_u2);
    f(prefix + "b_u2", b_u2);
    f(prefix + "w_r", w_r);
    f(prefix + "b_r", b_r);
  }
}

template <typename Scalar>
template <typename F>
void PiaParams<Scalar>::visit(const std::string& prefix, F&& f) const {
  const_cast<PiaParams*>(this)->visit(prefix, [&](const std::string& name, const auto& t) {
    f(name, t);
  });
}

}  // namespace easkit
