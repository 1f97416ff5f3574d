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

#include <cstdint>
#include <string>
#include <vector>

#include "easkit/model.hpp"
#include "easkit/transformer.hpp"

namespace easkit {

/// How the skip adapters of a mask are executed.
enum class PiaState { None, Eager, Fused };

std::string to_string(PiaState state);
PiaState parse_pia_state(const std::string& text);

struct PhaseSpec {
  enum class Kind { Prefill, Decode };
  Kind kind = Kind::Decode;
  /// Prompt length n for prefill, cache length L for decode.
  int length = 0;

  static PhaseSpec prefill(int n) { return {Kind::Prefill, n}; }
  static PhaseSpec decode(int cache_len) { return {Kind::Decode, cache_len}; }
  /// "prefill" | "decode"; anything else is a ContractError.
  static PhaseSpec parse(const std::string& kind, int length);
};

std::string to_string(PhaseSpec::Kind kind);

struct LayerFlops {
  std::int64_t mha = 0;
  std::int64_t ffn = 0;
  std::int64_t pia_eager = 0;
  std::int64_t pia_fused = 0;  // cost beyond the FFN it was folded into

  std::int64_t total() const { return mha + ffn + pia_eager + pia_fused; }
  bool operator==(const LayerFlops&) const = default;
};

/// Transformer-block FLOPs only (embeddings, norms, softmax, activations and
/// the output head are excluded). One multiply-accumulate counts as 2.
struct FlopsReport {
  PhaseSpec phase;
  std::vector<LayerFlops> layers;
  LayerFlops totals;

  std::int64_t total() const { return totals.total(); }
};

/// Per decode token with cache length L: MHA 8d^2 + 4Ld, FFN 4 d d_ffn, eager
/// adapter 4dr + 2r + 4d, folded adapter 0. Prefill of n tokens: n times the
/// per-token projections plus 4n^2 d for attention. An adapter counts as
/// eager when there is no FFN downstream to fold it into. Throws
/// CapacityError when length exceeds max_seq.
FlopsReport count_flops(const ModelConfig& config, const SkipMask& mask, PiaState pias,
                        PhaseSpec phase);

std::int64_t mha_flops(const ModelConfig& config, PhaseSpec phase);
std::int64_t ffn_flops(const ModelConfig& config, PhaseSpec phase);
std::int64_t pia_flops(const ModelConfig& config, int rank, PhaseSpec phase);

std::string to_json(const FlopsReport& report);

struct PhaseTiming {
  Phase phase = Phase::Prefill;
  std::vector<double> samples_ms;  // measured reps only
  double median_ms = 0.0;
  double p90_ms = 0.0;
};

struct LatencyReport {
  int warmup = 0;
  int reps = 0;
  int threads = 1;
  int prompt_len = 0;
  int decode_steps = 0;
  std::string clock = "steady_clock";
  std::vector<PhaseTiming> phases;  // prefill, decode-eager, decode-fused

  const PhaseTiming& at(Phase phase) const;
};

struct BenchOptions {
  int prompt_len = 16;
  int decode_steps = 8;
  int reps = 30;
  int warmup = 2;
  std::uint64_t seed = 0;
};

/// Times prefill, then per-token decode after step 1 with frozen adapters run
/// eagerly and with them folded. Each rep samples the mean time of decode
/// steps 2..decode_steps. Throws ConfigError for reps < 5, warmup < 2 or
/// decode_steps < 2. Always single-threaded.
template <typename Scalar>
LatencyReport bench_latency(const Model<Scalar>& model, const SkipMask& mask,
                            const AdapterSet<Scalar>* adapters, const BenchOptions& options);

double median_of(std::vector<double> values);
/// Nearest-rank percentile, q in (0, 1].
double percentile_of(std::vector<double> values, double q);

std::string to_json(const LatencyReport& report);

}  // namespace easkit
