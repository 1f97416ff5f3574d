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

#include "easkit/profiler.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include <json.hpp>

namespace easkit {

std::string to_string(PiaState state) {
  switch (state) {
    case PiaState::None: return "none";
    case PiaState::Eager: return "eager";
    case PiaState::Fused: return "fused";
  }
  return "?";
}

PiaState parse_pia_state(const std::string& text) {
  if (text == "none") return PiaState::None;
  if (text == "eager") return PiaState::Eager;
  if (text == "fused") return PiaState::Fused;
  throw ConfigError("unknown adapter state '" + text + "'");
}

PhaseSpec PhaseSpec::parse(const std::string& kind, int length) {
  if (kind == "prefill") return prefill(length);
  if (kind == "decode") return decode(length);
  throw ContractError("unknown phase '" + kind + "'");
}

std::string to_string(PhaseSpec::Kind kind) {
  return kind == PhaseSpec::Kind::Prefill ? "prefill" : "decode";
}

namespace {

std::int64_t tokens_of(PhaseSpec phase) {
  return phase.kind == PhaseSpec::Kind::Prefill ? phase.length : 1;
}

}  // namespace

std::int64_t mha_flops(const ModelConfig& config, PhaseSpec phase) {
  const std::int64_t d = config.d_model;
  const std::int64_t n = phase.length;
  if (phase.kind == PhaseSpec::Kind::Prefill) return n * 8 * d * d + 4 * n * n * d;
  return 8 * d * d + 4 * n * d;
}

std::int64_t ffn_flops(const ModelConfig& config, PhaseSpec phase) {
  return tokens_of(phase) * 4 * std::int64_t{config.d_model} * config.d_ffn;
}

std::int64_t pia_flops(const ModelConfig& config, int rank, PhaseSpec phase) {
  const std::int64_t d = config.d_model;
  const std::int64_t r = rank;
  return tokens_of(phase) * (4 * d * r + 2 * r + 4 * d);
}

FlopsReport count_flops(const ModelConfig& config, const SkipMask& mask, PiaState pias,
                        PhaseSpec phase) {
  config.validate();
  if (phase.length < 0 || phase.length > config.max_seq) {
    throw CapacityError("count_flops: length " + std::to_string(phase.length) +
                        " outside [0, " + std::to_string(config.max_seq) + "]");
  }
  if (mask.n_layers() != 0 && mask.n_layers() != config.n_layers) {
    throw ContractError("count_flops: mask is for a different depth");
  }
  const int n = config.n_layers;
  FlopsReport rep;
  rep.phase = phase;
  rep.layers.resize(static_cast<size_t>(n));
  for (int l = 0; l < n; ++l) {
    auto& lf = rep.layers[static_cast<size_t>(l)];
    if (!mask.mha_removed(l)) lf.mha = mha_flops(config, phase);
    if (!mask.ffn_removed(l)) lf.ffn = ffn_flops(config, phase);
  }
  if (pias != PiaState::None) {
    const std::int64_t cost = pia_flops(config, config.r_skip, phase);
    for (const Candidate& c : mask.skipped()) {
      // Host FFN the adapter can be folded into, if any.
      int host = -1;
      if (c.kind == ModuleKind::Mha && !mask.ffn_removed(c.layer)) host = c.layer;
      if (c.kind == ModuleKind::Layer) {
        for (int l = c.layer + 1; l < n && host < 0; ++l) {
          if (!mask.ffn_removed(l)) host = l;
        }
      }
      auto& lf = rep.layers[static_cast<size_t>(c.layer)];
      if (pias == PiaState::Eager || host < 0) lf.pia_eager += cost;
    }
  }
  for (const auto& lf : rep.layers) {
    rep.totals.mha += lf.mha;
    rep.totals.ffn += lf.ffn;
    rep.totals.pia_eager += lf.pia_eager;
    rep.totals.pia_fused += lf.pia_fused;
  }
  return rep;
}

std::string to_json(const FlopsReport& report) {
  nlohmann::json j;
  j["phase"] = to_string(report.phase.kind);
  j["length"] = report.phase.length;
  auto row = [](const LayerFlops& f) {
    return nlohmann::json{{"mha", f.mha},
                          {"ffn", f.ffn},
                          {"pia_eager", f.pia_eager},
                          {"pia_fused", f.pia_fused},
                          {"total", f.total()}};
  };
  j["layers"] = nlohmann::json::array();
  for (const auto& lf : report.layers) j["layers"].push_back(row(lf));
  j["totals"] = row(report.totals);
  return j.dump();
}

const PhaseTiming& LatencyReport::at(Phase phase) const {
  for (const auto& p : phases) {
    if (p.phase == phase) return p;
  }
  throw ContractError("latency report has no phase " + to_string(phase));
}

double median_of(std::vector<double> values) {
  if (values.empty()) throw EmptyInputError("median_of: no values");
  std::sort(values.begin(), values.end());
  const size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double percentile_of(std::vector<double> values, double q) {
  if (values.empty()) throw EmptyInputError("percentile_of: no values");
  if (!(q > 0.0 && q <= 1.0)) throw DomainError("percentile_of: q outside (0, 1]");
  std::sort(values.begin(), values.end());
  const size_t rank = static_cast<size_t>(std::ceil(q * static_cast<double>(values.size())));
  return values[std::max<size_t>(rank, 1) - 1];
}

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

}  // namespace

template <typename Scalar>
LatencyReport bench_latency(const Model<Scalar>& model, const SkipMask& mask,
                            const AdapterSet<Scalar>* adapters, const BenchOptions& options) {
  if (options.reps < 5) throw ConfigError("bench_latency: reps must be >= 5");
  if (options.warmup < 2) throw ConfigError("bench_latency: warmup must be >= 2");
  if (options.decode_steps < 2) {
    throw ConfigError("bench_latency: decode_steps < 2 leaves no fused decode step to time");
  }
  if (options.prompt_len < 1) throw ConfigError("bench_latency: prompt_len must be >= 1");
  if (options.prompt_len + options.decode_steps > model.config.max_seq) {
    throw CapacityError("bench_latency: prompt_len + decode_steps exceeds max_seq");
  }
  Rng rng(options.seed);
  std::vector<int> prompt(static_cast<size_t>(options.prompt_len));
  for (auto& t : prompt) {
    t = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(model.config.vocab)));
  }

  LatencyReport rep;
  rep.warmup = options.warmup;
  rep.reps = options.reps;
  rep.prompt_len = options.prompt_len;
  rep.decode_steps = options.decode_steps;
  PhaseTiming prefill{Phase::Prefill, {}, 0, 0};
  PhaseTiming eager{Phase::DecodeEager, {}, 0, 0};
  PhaseTiming fused{Phase::DecodeFused, {}, 0, 0};

  // Each rep decodes the same prompt once per mode; a rep records the
  // prefill time of the fused run and the mean step time past step 1.
  auto run = [&](DecodeMode mode, double* prefill_ms) {
    Generator<Scalar> gen(model, mask, adapters, mode);
    auto t0 = Clock::now();
    int tok = argmax_token<Scalar>(gen.prefill(prompt));
    if (prefill_ms) *prefill_ms = ms_since(t0);
    tok = argmax_token<Scalar>(gen.step(tok));
    t0 = Clock::now();
    for (int s = 2; s <= options.decode_steps; ++s) tok = argmax_token<Scalar>(gen.step(tok));
    return ms_since(t0) / static_cast<double>(options.decode_steps - 1);
  };
  for (int r = 0; r < options.warmup + options.reps; ++r) {
    double pre = 0.0;
    const double e = run(DecodeMode::AlwaysEager, nullptr);
    const double f = run(DecodeMode::FuseAfterFirst, &pre);
    if (r < options.warmup) continue;
    prefill.samples_ms.push_back(pre);
    eager.samples_ms.push_back(e);
    fused.samples_ms.push_back(f);
  }
  for (PhaseTiming* p : {&prefill, &eager, &fused}) {
    p->median_ms = median_of(p->samples_ms);
    p->p90_ms = percentile_of(p->samples_ms, 0.9);
    rep.phases.push_back(std::move(*p));
  }
  return rep;
}

std::string to_json(const LatencyReport& report) {
  nlohmann::json j;
  j["warmup"] = report.warmup;
  j["reps"] = report.reps;
  j["threads"] = report.threads;
  j["clock"] = report.clock;
  j["prompt_len"] = report.prompt_len;
  j["decode_steps"] = report.decode_steps;
  for (const auto& p : report.phases) {
    j["phases"][to_string(p.phase)] = {{"median_ms", p.median_ms}, {"p90_ms", p.p90_ms}};
  }
  return j.dump();
}

template LatencyReport bench_latency<float>(const Model<float>&, const SkipMask&,
                                            const AdapterSet<float>*, const BenchOptions&);
template LatencyReport bench_latency<double>(const Model<double>&, const SkipMask&,
                                             const AdapterSet<double>*, const BenchOptions&);

}  // namespace easkit
