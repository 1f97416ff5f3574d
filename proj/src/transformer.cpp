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

#include "easkit/transformer.hpp"

#include <algorithm>
#include <cmath>

namespace easkit {

template <typename Scalar>
KvLayer<Scalar> KvLayer<Scalar>::with_capacity(int capacity, int d_model) {
  KvLayer kv;
  kv.keys = Matrix<Scalar>::Zero(capacity, d_model);
  kv.values = Matrix<Scalar>::Zero(capacity, d_model);
  return kv;
}

template <typename Scalar>
KvCache<Scalar> KvCache<Scalar>::for_mask(const ModelConfig& config, const SkipMask& mask) {
  KvCache cache;
  cache.layers.resize(static_cast<size_t>(config.n_layers));
  for (int l = 0; l < config.n_layers; ++l) {
    if (!mask.mha_removed(l)) {
      cache.layers[static_cast<size_t>(l)] = KvLayer<Scalar>::with_capacity(config.max_seq, config.d_model);
    }
  }
  return cache;
}

template <typename Scalar>
Matrix<Scalar> mha_forward(const Matrix<Scalar>& x, const MhaWeights<Scalar>& mha, int n_heads,
                           KvLayer<Scalar>* cache, bool causal) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  if (n == 0) throw EmptyInputError("mha_forward: no rows");
  if (n_heads <= 0 || d % n_heads != 0) {
    throw ShapeError("mha_forward: d " + std::to_string(d) + " not divisible by " +
                     std::to_string(n_heads) + " heads");
  }
  const Eigen::Index dh = d / n_heads;
  const Matrix<Scalar> q = matmul_affine<Scalar>(x, mha.wq, mha.bq);
  Matrix<Scalar> k = matmul_affine<Scalar>(x, mha.wk, mha.bk);
  Matrix<Scalar> v = matmul_affine<Scalar>(x, mha.wv, mha.bv);

  Eigen::Index start = 0;
  if (cache) {
    start = cache->length;
    if (start + n > cache->capacity()) {
      throw CapacityError("mha_forward: cache holds " + std::to_string(start) + " rows, adding " +
                          std::to_string(n) + " exceeds capacity " +
                          std::to_string(cache->capacity()));
    }
    cache->keys.middleRows(start, n) = k;
    cache->values.middleRows(start, n) = v;
    cache->length = static_cast<int>(start + n);
  }
  const Eigen::Index total = start + n;
  const auto keys = cache ? cache->keys.topRows(total) : k.topRows(total);
  const auto values = cache ? cache->values.topRows(total) : v.topRows(total);

  const Scalar scale = Scalar(1) / std::sqrt(Scalar(dh));
  Matrix<Scalar> out(n, d);
  Matrix<Scalar> scores(n, total);
  for (Eigen::Index h = 0; h < n_heads; ++h) {
    scores.noalias() = q.middleCols(h * dh, dh) * keys.middleCols(h * dh, dh).transpose();
    scores *= scale;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index visible = causal ? start + i + 1 : total;
      auto row = scores.row(i).head(visible);
      row.array() -= row.maxCoeff();
      row = row.array().exp().matrix();
      row /= row.sum();
      scores.row(i).tail(total - visible).setZero();
    }
    out.middleCols(h * dh, dh).noalias() = scores * values.middleCols(h * dh, dh);
  }
  return matmul_affine<Scalar>(out, mha.wo, mha.bo);
}

template <typename Scalar>
ModelPlan<Scalar> make_plan(const Model<Scalar>& model, const SkipMask& mask,
                            const AdapterSet<Scalar>* adapters) {
  const ModelConfig& cfg = model.config;
  if (mask.n_layers() != 0 && mask.n_layers() != cfg.n_layers) {
    throw ConfigError("skip mask built for " + std::to_string(mask.n_layers()) +
                      " layers, model has " + std::to_string(cfg.n_layers));
  }
  auto checked = [&](const PiaParams<Scalar>* pia, Candidate c) {
    if (pia->mode != PiaMode::TwoPathSkip) {
      throw ConfigError("skip adapter at " + to_string(c.kind) + "." + std::to_string(c.layer) +
                        " is not a two-path adapter");
    }
    if (pia->dim() != cfg.d_model) {
      throw ShapeError("skip adapter dim " + std::to_string(pia->dim()) + " != d_model " +
                       std::to_string(cfg.d_model));
    }
    if (pia->rank() != cfg.r_skip) {
      throw ConfigError("skip adapter hidden dim " + std::to_string(pia->rank()) +
                        " != r_skip " + std::to_string(cfg.r_skip));
    }
    return pia;
  };

  ModelPlan<Scalar> plan;
  plan.layers.resize(static_cast<size_t>(cfg.n_layers));
  std::vector<const PiaParams<Scalar>*> carry;
  for (int l = 0; l < cfg.n_layers; ++l) {
    auto& lp = plan.layers[static_cast<size_t>(l)];
    lp.attention = !mask.mha_removed(l);
    lp.ffn = !mask.ffn_removed(l);
    if (adapters && lp.attention) {
      lp.adapt = adapters->adapt_pia(l);
      if (lp.adapt && lp.adapt->mode != PiaMode::SinglePathAdapt) {
        throw ConfigError("adaptation adapter at layer " + std::to_string(l) +
                          " is not single-path");
      }
    }
    if (mask.skips(l, ModuleKind::Layer)) {
      if (adapters) {
        if (const auto* pia = adapters->skip_pia({l, ModuleKind::Layer})) {
          carry.push_back(checked(pia, {l, ModuleKind::Layer}));
        }
      }
      continue;
    }
    if (mask.skips(l, ModuleKind::Mha) && adapters) {
      const auto* pia = adapters->skip_pia({l, ModuleKind::Mha});
      if (!pia) {
        throw ConfigError("attention " + std::to_string(l) + " is skipped but has no adapter");
      }
      lp.ffn_input.push_back(checked(pia, {l, ModuleKind::Mha}));
    }
    if (mask.skips(l, ModuleKind::Ffn) && adapters) {
      if (const auto* pia = adapters->skip_pia({l, ModuleKind::Ffn})) {
        lp.ffn_input.push_back(checked(pia, {l, ModuleKind::Ffn}));
      }
    }
    lp.ffn_input.insert(lp.ffn_input.end(), carry.begin(), carry.end());
    carry.clear();
  }
  plan.trailing = std::move(carry);
  return plan;
}

template <typename Scalar>
SequenceState<Scalar> SequenceState<Scalar>::create(const ModelConfig& config,
                                                    const SkipMask& mask, int pool_horizon) {
  SequenceState s;
  s.cache = KvCache<Scalar>::for_mask(config, mask);
  s.pools.assign(static_cast<size_t>(config.n_layers + 1),
                 PoolState<Scalar>{RowVector<Scalar>::Zero(config.d_model), 0});
  s.pool_horizon = pool_horizon;
  return s;
}

namespace {

template <typename Scalar>
bool any_live(const std::vector<const PiaParams<Scalar>*>& pias) {
  return std::any_of(pias.begin(), pias.end(), [](const auto* p) { return !p->is_frozen(); });
}

// Adds rows of `y` (absolute positions start..) to `pool` and returns the
// pooled mean visible to each row.
template <typename Scalar>
Matrix<Scalar> advance_pool(const Matrix<Scalar>& y, int start, int horizon,
                            PoolState<Scalar>& pool) {
  Matrix<Scalar> pooled(y.rows(), y.cols());
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    const int pos = start + static_cast<int>(i);
    if (horizon < 0 || pos <= horizon) {
      pool.sum += y.row(i);
      ++pool.count;
    }
    pooled.row(i) = pool.mean();
  }
  return pooled;
}

template <typename Scalar>
Matrix<Scalar> adapter_sum(const Matrix<Scalar>& y, const std::vector<const PiaParams<Scalar>*>& pias,
                           int start, int horizon, PoolState<Scalar>& pool) {
  Matrix<Scalar> pooled;
  if (any_live(pias)) pooled = advance_pool(y, start, horizon, pool);
  Matrix<Scalar> sum = Matrix<Scalar>::Zero(y.rows(), y.cols());
  for (const auto* pia : pias) sum += pia_forward_pooled<Scalar>(y, pooled, *pia);
  return sum;
}

template <typename Scalar>
void run_block(Matrix<Scalar>& h, const LayerParams<Scalar>& layer, const LayerPlan<Scalar>& lp,
               int n_heads, KvLayer<Scalar>* kv, int start, int horizon, PoolState<Scalar>& pool) {
  if (lp.attention) {
    Matrix<Scalar> y = layer_norm_rows<Scalar>(h, layer.ln1.gamma, layer.ln1.beta);
    if (lp.adapt) y += adaptation_forward<Scalar>(y, *lp.adapt);
    h += mha_forward<Scalar>(y, layer.mha, n_heads, kv);
  }
  if (!lp.ffn && lp.ffn_input.empty()) return;
  const Matrix<Scalar> y2 = layer_norm_rows<Scalar>(h, layer.ln2.gamma, layer.ln2.beta);
  if (lp.ffn) {
    const FfnWeights<Scalar>& ffn = lp.ffn_override ? *lp.ffn_override : layer.ffn;
    if (lp.ffn_input.empty()) {
      h += ffn_forward<Scalar>(y2, ffn);
    } else {
      h += ffn_forward<Scalar>(y2 + adapter_sum(y2, lp.ffn_input, start, horizon, pool), ffn);
    }
  } else {
    h += adapter_sum(y2, lp.ffn_input, start, horizon, pool);
  }
}

}  // namespace

template <typename Scalar>
Matrix<Scalar> forward_tokens(const Model<Scalar>& model, const ModelPlan<Scalar>& plan,
                              std::span<const int> tokens, SequenceState<Scalar>& state) {
  const ModelConfig& cfg = model.config;
  const int n = static_cast<int>(tokens.size());
  if (n == 0) throw EmptyInputError("forward: no tokens");
  const int start = state.position;
  if (start + n > cfg.max_seq) {
    throw CapacityError("forward: " + std::to_string(start + n) + " positions exceed max_seq " +
                        std::to_string(cfg.max_seq));
  }
  Matrix<Scalar> h(n, cfg.d_model);
  for (int i = 0; i < n; ++i) {
    const int t = tokens[static_cast<size_t>(i)];
    if (t < 0 || t >= cfg.vocab) {
      throw IndexError("token " + std::to_string(t) + " outside vocab " + std::to_string(cfg.vocab));
    }
    h.row(i) = model.tok_emb.row(t) + model.pos_emb.row(start + i);
  }
  for (int l = 0; l < cfg.n_layers; ++l) {
    auto& kv = state.cache.layers[static_cast<size_t>(l)];
    run_block(h, model.layers[static_cast<size_t>(l)], plan.layers[static_cast<size_t>(l)],
              cfg.n_heads, kv ? &*kv : nullptr, start, state.pool_horizon,
              state.pools[static_cast<size_t>(l)]);
  }
  if (!plan.trailing.empty()) {
    h += adapter_sum(h, plan.trailing, start, state.pool_horizon,
                     state.pools[static_cast<size_t>(cfg.n_layers)]);
  }
  state.position += n;
  return matmul_affine<Scalar>(layer_norm_rows<Scalar>(h, model.ln_f.gamma, model.ln_f.beta),
                               model.head_w, model.head_b);
}

template <typename Scalar>
Matrix<Scalar> model_forward(const Model<Scalar>& model, std::span<const int> tokens,
                             const SkipMask& mask, const AdapterSet<Scalar>* adapters,
                             int pool_horizon) {
  if (static_cast<int>(tokens.size()) > model.config.max_seq) {
    throw CapacityError("model_forward: sequence of " + std::to_string(tokens.size()) +
                        " exceeds max_seq " + std::to_string(model.config.max_seq));
  }
  const ModelPlan<Scalar> plan = make_plan(model, mask, adapters);
  auto state = SequenceState<Scalar>::create(model.config, mask, pool_horizon);
  return forward_tokens(model, plan, tokens, state);
}

template <typename Scalar>
Matrix<Scalar> block_forward(const Matrix<Scalar>& x, const LayerParams<Scalar>& layer,
                             const ModelConfig& config, BlockSkip skip,
                             const PiaParams<Scalar>* pia, int pool_horizon) {
  LayerPlan<Scalar> lp;
  lp.attention = !skip.attention;
  lp.ffn = !skip.ffn;
  if (pia) {
    if (pia->rank() != config.r_skip) {
      throw ConfigError("block_forward: adapter hidden dim " + std::to_string(pia->rank()) +
                        " != r_skip " + std::to_string(config.r_skip));
    }
    lp.ffn_input.push_back(pia);
  }
  PoolState<Scalar> pool{RowVector<Scalar>::Zero(x.cols()), 0};
  Matrix<Scalar> h = x;
  run_block(h, layer, lp, config.n_heads, static_cast<KvLayer<Scalar>*>(nullptr), 0,
            pool_horizon, pool);
  return h;
}

std::string to_string(Phase phase) {
  switch (phase) {
    case Phase::Prefill: return "prefill";
    case Phase::DecodeEager: return "decode-eager";
    case Phase::DecodeFused: return "decode-fused";
  }
  return "?";
}

template <typename Scalar>
int argmax_token(const Eigen::Ref<const RowVector<Scalar>>& logits) {
  int best = 0;
  for (Eigen::Index i = 1; i < logits.size(); ++i) {
    if (logits(i) > logits(best)) best = static_cast<int>(i);
  }
  return best;
}

template <typename Scalar>
Generator<Scalar>::Generator(const Model<Scalar>& model, const SkipMask& mask,
                             const AdapterSet<Scalar>* adapters, DecodeMode mode)
    : model_(model), mask_(mask), mode_(mode) {
  if (adapters) adapters_ = *adapters;
  state_ = SequenceState<Scalar>::create(model.config, mask_, -1);
  folded_.resize(static_cast<size_t>(model.config.n_layers));
  rebuild_plan();
}

template <typename Scalar>
void Generator<Scalar>::rebuild_plan() {
  plan_ = make_plan(model_, mask_, adapters());
}

template <typename Scalar>
RowVector<Scalar> Generator<Scalar>::prefill(std::span<const int> prompt) {
  if (prompt.empty()) throw InputError("prefill: empty prompt");
  if (prefilled_) throw StateError("prefill: already prefilled");
  const Matrix<Scalar> logits = forward_tokens(model_, plan_, prompt, state_);
  prefilled_ = true;
  return logits.row(logits.rows() - 1);
}

template <typename Scalar>
RowVector<Scalar> Generator<Scalar>::step(int token) {
  if (!prefilled_) throw StateError("decode step before prefill");
  const int one[1] = {token};
  const Matrix<Scalar> logits = forward_tokens(model_, plan_, std::span<const int>(one), state_);
  ++steps_;
  if (steps_ == 1) freeze_and_fuse();
  return logits.row(0);
}

template <typename Scalar>
void Generator<Scalar>::freeze_and_fuse() {
  if (frozen_) return;
  frozen_ = true;
  if (!adapters_) return;
  const int n_layers = model_.config.n_layers;
  // Freeze each skip adapter from the pooled mean of the stream it reads.
  for (auto& [cand, pia] : adapters_->skip) {
    int stream = -1;
    for (int l = 0; l < n_layers && stream < 0; ++l) {
      const auto& in = plan_.layers[static_cast<size_t>(l)].ffn_input;
      if (std::find(in.begin(), in.end(), &pia) != in.end()) stream = l;
    }
    if (stream < 0 &&
        std::find(plan_.trailing.begin(), plan_.trailing.end(), &pia) != plan_.trailing.end()) {
      stream = n_layers;
    }
    if (stream < 0 || pia.is_frozen()) continue;
    const auto& pool = state_.pools[static_cast<size_t>(stream)];
    if (pool.count == 0) continue;
    pia = freeze_with_mean<Scalar>(pia, pool.mean());
  }
  if (mode_ != DecodeMode::FuseAfterFirst) return;
  for (int l = 0; l < n_layers; ++l) {
    auto& lp = plan_.layers[static_cast<size_t>(l)];
    if (!lp.ffn || lp.ffn_input.empty()) continue;
    std::vector<FusedLinear<Scalar>> parts;
    for (const auto* pia : lp.ffn_input) parts.push_back(fuse_to_linear<Scalar>(*pia));
    folded_[static_cast<size_t>(l)] =
        fold_into_ffn<Scalar>(sum_fused<Scalar>(parts, model_.config.d_model),
                              model_.layers[static_cast<size_t>(l)].ffn);
    lp.ffn_override = &folded_[static_cast<size_t>(l)];
    lp.ffn_input.clear();
  }
  fused_ = true;
}

template <typename Scalar>
DecodeResult decode(const Model<Scalar>& model, std::span<const int> prompt, int steps,
                    const SkipMask& mask, const AdapterSet<Scalar>* adapters, DecodeMode mode) {
  if (prompt.empty()) throw InputError("decode: empty prompt");
  if (steps < 1) throw InputError("decode: steps must be >= 1");
  const int needed = static_cast<int>(prompt.size()) + steps;
  if (needed > model.config.max_seq) {
    throw CapacityError("decode: prompt " + std::to_string(prompt.size()) + " + " +
                        std::to_string(steps) + " steps exceeds max_seq " +
                        std::to_string(model.config.max_seq));
  }
  Generator<Scalar> gen(model, mask, adapters, mode);
  DecodeResult result;
  int token = argmax_token<Scalar>(gen.prefill(prompt));
  result.tokens.push_back(token);
  result.trace.push_back({Phase::Prefill, 0, 0, static_cast<int>(prompt.size()), token, false});
  for (int s = 1; s <= steps; ++s) {
    const bool fused_before = gen.fused();
    const int pos = gen.position();
    const int fed = token;
    token = argmax_token<Scalar>(gen.step(fed));
    result.tokens.push_back(token);
    result.trace.push_back({fused_before ? Phase::DecodeFused : Phase::DecodeEager, s, pos, 1,
                            token, s == 1});
  }
  return result;
}

template <typename Scalar>
std::vector<int> generate(const Model<Scalar>& model, std::span<const int> prompt, int count,
                          const SkipMask& mask, const AdapterSet<Scalar>* adapters,
                          DecodeMode mode) {
  if (count < 1) throw InputError("generate: count must be >= 1");
  if (count == 1) {
    if (prompt.empty()) throw InputError("generate: empty prompt");
    Generator<Scalar> gen(model, mask, adapters, mode);
    return {argmax_token<Scalar>(gen.prefill(prompt))};
  }
  return decode(model, prompt, count - 1, mask, adapters, mode).tokens;
}

#define EASKIT_INSTANTIATE(S)                                                                    \
  template struct KvLayer<S>;                                                                    \
  template struct KvCache<S>;                                                                    \
  template struct SequenceState<S>;                                                              \
  template class Generator<S>;                                                                   \
  template Matrix<S> mha_forward<S>(const Matrix<S>&, const MhaWeights<S>&, int, KvLayer<S>*,    \
                                    bool);                                                       \
  template ModelPlan<S> make_plan<S>(const Model<S>&, const SkipMask&, const AdapterSet<S>*);    \
  template Matrix<S> forward_tokens<S>(const Model<S>&, const ModelPlan<S>&,                     \
                                       std::span<const int>, SequenceState<S>&);                 \
  template Matrix<S> model_forward<S>(const Model<S>&, std::span<const int>, const SkipMask&,    \
                                      const AdapterSet<S>*, int);                                \
  template Matrix<S> block_forward<S>(const Matrix<S>&, const LayerParams<S>&,                   \
                                      const ModelConfig&, BlockSkip, const PiaParams<S>*, int);  \
  template int argmax_token<S>(const Eigen::Ref<const RowVector<S>>&);                           \
  template DecodeResult decode<S>(const Model<S>&, std::span<const int>, int, const SkipMask&,   \
                                  const AdapterSet<S>*, DecodeMode);                             \
  template std::vector<int> generate<S>(const Model<S>&, std::span<const int>, int,              \
                                        const SkipMask&, const AdapterSet<S>*, DecodeMode);

EASKIT_INSTANTIATE(float)
EASKIT_INSTANTIATE(double)

#undef EASKIT_INSTANTIATE

}  // namespace easkit
