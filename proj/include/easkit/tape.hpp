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
#include <map>
#include <string>
#include <vector>

#include "easkit/numeric.hpp"

namespace easkit {

/// Which rows feed the pooled mean seen by row t of a sequence.
///  - Global: every row sees the mean of the whole sequence.
///  - Causal: row t sees the mean of rows 0..min(t, horizon); a negative
///    horizon means unbounded (plain running mean).
struct PoolingRule {
  enum class Kind { Global, Causal };
  Kind kind = Kind::Causal;
  int horizon = -1;

  static PoolingRule global() { return {Kind::Global, -1}; }
  static PoolingRule causal(int horizon = -1) { return {Kind::Causal, horizon}; }

  int last_row(int t, int seq_len) const {
    if (kind == Kind::Global) return seq_len - 1;
    return horizon < 0 ? t : std::min(t, horizon);
  }
};

/// Row t of each length-`seq_len` segment of `x` replaced by the pooled mean
/// selected by `rule`.
template <typename Scalar>
Matrix<Scalar> pooled_means(const Matrix<Scalar>& x, int seq_len, PoolingRule rule);

/// Matrix-level reverse-mode tape. Nodes are appended in evaluation order and
/// `backward` replays them in reverse. One tape belongs to one thread.
template <typename Scalar>
class GradTape {
 public:
  using Mat = Matrix<Scalar>;

  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  // Backward closures capture `this`.
  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  Var constant(Mat value);
  /// Registers a named trainable tensor. Names must be unique per tape.
  Var parameter(const std::string& name, Mat value);

  const Mat& value(Var v) const { return nodes_.at(static_cast<size_t>(v.id)).value; }
  /// Gradient of the last `backward` target w.r.t. `v`; zeros if none flowed.
  Mat grad(Var v) const;
  Scalar scalar(Var v) const { return value(v)(0, 0); }

  bool has_parameter(const std::string& name) const { return params_.contains(name); }
  const std::map<std::string, Var>& parameters() const { return params_; }
  Mat gradient(const std::string& name) const { return grad(params_.at(name)); }
  size_t size() const { return nodes_.size(); }

  Var matmul(Var a, Var b);
  /// x * w + b (b is 1 x cols, broadcast over rows).
  Var affine(Var x, Var w, Var b);
  Var add(Var a, Var b);
  Var add_row(Var a, Var row);
  Var scale(Var a, Scalar s);
  Var gelu(Var a);
  Var layer_norm_rows(Var x, Var gamma, Var beta, Scalar eps = Scalar(kLayerNormEps));
  /// Causal multi-head scaled dot-product attention over stacked sequences
  /// of length `seq_len`. q, k, v are (B*seq_len) x d; heads split columns.
  Var causal_attention(Var q, Var k, Var v, int seq_len, int n_heads);
  Var gather_rows(Var table, std::vector<int> ids);
  Var pooled_mean(Var x, int seq_len, PoolingRule rule);
  /// Row-wise softmax(x / tau).
  Var softmax_rows(Var x, Scalar tau);
  /// out[i, :] = a[i, :] * weights[i, col].
  Var scale_rows_by(Var a, Var weights, int col);
  /// Mean cross-entropy, 1x1.
  Var cross_entropy(Var logits, std::vector<int> targets);
  /// Sum of squared entries, 1x1.
  Var square_sum(Var a);

  void backward(Var loss);

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    std::function<void()> backward;
  };

  Var push(Mat value, bool needs_grad, std::function<void()> backward = {});
  bool needs(Var v) const { return nodes_[static_cast<size_t>(v.id)].needs_grad; }
  const Mat& g(int id) const { return nodes_[static_cast<size_t>(id)].grad; }
  template <typename Expr>
  void accumulate(Var v, const Expr& delta);

  std::vector<Node> nodes_;
  std::map<std::string, Var> params_;
};

}  // namespace easkit
