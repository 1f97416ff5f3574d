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
#include <span>
#include <string>
#include <vector>

#include "easkit/model.hpp"
#include "easkit/tape.hpp"

namespace easkit {

/// Keys and values of one attention layer, preallocated to max_seq rows.
/// Heads occupy contiguous column blocks.
template <typename Scalar>
struct KvLayer {
  Matrix<Scalar> keys;
  Matrix<Scalar> values;
  int length = 0;

  static KvLayer with_capacity(int capacity, int d_model);
  int capacity() const { return static_cast<int>(keys.rows()); }
};

/// One entry per layer; layers whose attention is skipped hold no entry.
template <typename Scalar>
struct KvCache {
  std::vector<std::optional<KvLayer<Scalar>>> layers;

  static KvCache for_mask(const ModelConfig& config, const SkipMask& mask);
};

/// Running sum of the rows an adapter stream has pooled so far.
template <typename Scalar>
struct PoolState {
  RowVector<Scalar> sum;
  int count = 0;

  RowVector<Scalar> mean() const { return sum / Scalar(count); }
};

/// Attention over `x` (n x d), appending its keys/values to `cache` when one
/// is given. With a cache, row i attends to every cached row plus rows 0..i
/// of `x` (all rows of `x` when !causal). Throws CapacityError when the cache
/// would overflow.
template <typename Scalar>
Matrix<Scalar> mha_forward(const Matrix<Scalar>& x, const MhaWeights<Scalar>& mha, int n_heads,
                           KvLayer<Scalar>* cache = nullptr, bool causal = true);

/// Per-layer wiring derived from a skip mask and the installed adapters.
template <typename Scalar>
struct LayerPlan {
  bool attention = true;
  bool ffn = true;
  /// Adapters reading LN2(h). With the FFN present their sum is added to the
  /// FFN input, otherwise it is added to the residual stream.
  std::vector<const PiaParams<Scalar>*> ffn_input;
  const PiaParams<Scalar>* adapt = nullptr;
  /// Folded FFN used instead of the layer's own; ffn_input is then empty.
  const FfnWeights<Scalar>* ffn_override = nullptr;
};

template <typename Scalar>
struct ModelPlan {
  std::vector<LayerPlan<Scalar>> layers;
  /// Adapters of trailing skipped whole layers, applied to the residual
  /// stream right before the final norm.
  std::vector<const PiaParams<Scalar>*> trailing;
};

/// Resolves which adapters run where. `adapters == nullptr` is the explicit
/// no-adapter ablation; otherwise every skipped attention must have a skip
/// adapter of rank r_skip (ConfigError).
template <typename Scalar>
ModelPlan<Scalar> make_plan(const Model<Scalar>& model, const SkipMask& mask,
                            const AdapterSet<Scalar>* adapters);

/// Mutable per-sequence state: KV cache, adapter pooling sums and position.
template <typename Scalar>
struct SequenceState {
  KvCache<Scalar> cache;
  /// One pool per layer (the LN2 stream) plus one for the final stream.
  std::vector<PoolState<Scalar>> pools;
  int position = 0;
  /// Rows at positions > pool_horizon are no longer added to the pools.
  int pool_horizon = -1;

  static SequenceState create(const ModelConfig& config, const SkipMask& mask, int pool_horizon);
};

/// Runs `tokens` (positions state.position ..) through the model and returns
/// their logits. Used for full forwards, prefill and single decode steps.
template <typename Scalar>
Matrix<Scalar> forward_tokens(const Model<Scalar>& model, const ModelPlan<Scalar>& plan,
                              std::span<const int> tokens, SequenceState<Scalar>& state);

/// Full-sequence logits. Adapter pooling is causal: row t pools rows
/// 0..min(t, pool_horizon) (unbounded when negative).
template <typename Scalar>
Matrix<Scalar> model_forward(const Model<Scalar>& model, std::span<const int> tokens,
                             const SkipMask& mask, const AdapterSet<Scalar>* adapters = nullptr,
                             int pool_horizon = -1);

/// Which parts of a block run.
struct BlockSkip {
  bool attention = false;
  bool ffn = false;
};

/// One pre-norm block on a standalone sequence:
///   kept attention:    h = x + MHA(LN1(x))
///   skipped attention: h = x
///   then               h + FFN(LN2(h) + PIA(LN2(h)))   (PIA term only if given)
///   skipped FFN:       h + PIA(LN2(h))                 (or h)
/// Pooling inside the adapter is causal with the given horizon.
template <typename Scalar>
Matrix<Scalar> block_forward(const Matrix<Scalar>& x, const LayerParams<Scalar>& layer,
                             const ModelConfig& config, BlockSkip skip,
                             const PiaParams<Scalar>* pia = nullptr, int pool_horizon = -1);

enum class DecodeMode {
  AlwaysEager,     // adapters frozen after step 1 but evaluated as separate modules
  FuseAfterFirst,  // adapters frozen after step 1 and folded into the FFN
};

enum class Phase { Prefill, DecodeEager, DecodeFused };

std::string to_string(Phase phase);

struct PhaseRecord {
  Phase phase = Phase::Prefill;
  int step = 0;      // 0 for prefill
  int position = 0;  // first position processed
  int tokens_in = 0;
  int token_out = 0;
  bool froze = false;  // freeze (and fuse, if enabled) happened after this record
};

struct DecodeResult {
  std::vector<int> tokens;
  std::vector<PhaseRecord> trace;
};

/// Greedy argmax with lowest-index tie-break.
template <typename Scalar>
int argmax_token(const Eigen::Ref<const RowVector<Scalar>>& logits);

/// Stateful greedy generator. Prefill consumes the prompt and emits the first
/// token; every decode step feeds the previous token and emits the next. After
/// decode step 1 all adapters are frozen from the pooled stream seen so far
/// and, in FuseAfterFirst mode, folded into the FFN weights.
template <typename Scalar>
class Generator {
 public:
  Generator(const Model<Scalar>& model, const SkipMask& mask, const AdapterSet<Scalar>* adapters,
            DecodeMode mode);
  // The plan holds pointers into adapters_.
  Generator(const Generator&) = delete;
  Generator& operator=(const Generator&) = delete;

  /// Returns the logits of the last prompt row.
  RowVector<Scalar> prefill(std::span<const int> prompt);
  RowVector<Scalar> step(int token);
  void freeze_and_fuse();

  int decode_steps() const { return steps_; }
  bool frozen() const { return frozen_; }
  bool fused() const { return fused_; }
  int position() const { return state_.position; }
  const AdapterSet<Scalar>* adapters() const { return adapters_ ? &*adapters_ : nullptr; }

 private:
  void rebuild_plan();

  const Model<Scalar>& model_;
  SkipMask mask_;
  std::optional<AdapterSet<Scalar>> adapters_;
  DecodeMode mode_;
  ModelPlan<Scalar> plan_;
  SequenceState<Scalar> state_;
  std::vector<FfnWeights<Scalar>> folded_;
  int steps_ = 0;
  bool prefilled_ = false;
  bool frozen_ = false;
  bool fused_ = false;
};

/// Greedy generation of `steps + 1` tokens (one from prefill, one per decode
/// step). Throws InputError on an empty prompt and CapacityError when
/// prompt + steps exceeds max_seq.
template <typename Scalar>
DecodeResult decode(const Model<Scalar>& model, std::span<const int> prompt, int steps,
                    const SkipMask& mask, const AdapterSet<Scalar>* adapters, DecodeMode mode);

/// Generates exactly `count` >= 1 tokens (count - 1 decode steps).
template <typename Scalar>
std::vector<int> generate(const Model<Scalar>& model, std::span<const int> prompt, int count,
                          const SkipMask& mask, const AdapterSet<Scalar>* adapters,
                          DecodeMode mode);

}  // namespace easkit
