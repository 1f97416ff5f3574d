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

#include <string>
#include <vector>

#include "easkit/model.hpp"
#include "easkit/tape.hpp"

namespace easkit {

/// `batch` equal-length sequences stacked row-wise.
struct TokenBatch {
  std::vector<int> tokens;
  int batch = 0;
  int seq_len = 0;
};

/// Binds `tensor` on the tape: a named parameter when trainable, a constant
/// otherwise.
template <typename Scalar, typename Tensor>
typename GradTape<Scalar>::Var bind_tensor(GradTape<Scalar>& tape, const std::string& name,
                                    const Tensor& tensor, bool trainable) {
  Matrix<Scalar> m = tensor;
  return trainable ? tape.parameter(name, std::move(m)) : tape.constant(std::move(m));
}

/// Differentiable adapter forward on stacked sequences of length `seq_len`.
/// Live adapters only (StateError for a frozen one).
template <typename Scalar>
typename GradTape<Scalar>::Var pia_forward_graph(GradTape<Scalar>& tape,
                                                 typename GradTape<Scalar>::Var x,
                                                 const PiaParams<Scalar>& pia,
                                                 const std::string& prefix, bool trainable,
                                                 int seq_len, PoolingRule rule);

/// Differentiable logits ((batch * seq_len) x vocab) for the same wiring as
/// model_forward, with causal adapter pooling up to `pool_horizon`.
template <typename Scalar>
typename GradTape<Scalar>::Var model_forward_graph(GradTape<Scalar>& tape,
                                                   const Model<Scalar>& model,
                                                   const AdapterSet<Scalar>* adapters,
                                                   const SkipMask& mask, const TokenBatch& batch,
                                                   const TrainableSet& trainable,
                                                   int pool_horizon = -1);

}  // namespace easkit
