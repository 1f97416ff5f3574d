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

#include "easkit/graph.hpp"

#include <map>

#include "easkit/transformer.hpp"

namespace easkit {

template <typename Scalar>
typename GradTape<Scalar>::Var pia_forward_graph(GradTape<Scalar>& tape,
                                                 typename GradTape<Scalar>::Var x,
                                                 const PiaParams<Scalar>& pia,
                                                 const std::string& prefix, bool trainable,
                                                 int seq_len, PoolingRule rule) {
  if (pia.is_frozen()) throw StateError("pia_forward_graph: adapter is frozen");
  auto p = [&](const char* field, const auto& t) {
    return bind_tensor<Scalar>(tape, prefix + field, t, trainable);
  };
  if (pia.mode == PiaMode::SinglePathAdapt) {
    auto h = tape.affine(x, p("w_d1", pia.w_d1), p("b_d1", pia.b_d1));
    return tape.affine(h, p("w_u1", pia.w_u1), p("b_u1", pia.b_u1));
  }
  const auto pooled = tape.pooled_mean(x, seq_len, rule);
  const auto h = tape.add(tape.affine(x, p("w_d1", pia.w_d1), p("b_d1", pia.b_d1)),
                          tape.affine(pooled, p("w_d2", pia.w_d2), p("b_d2", pia.b_d2)));
  const auto alpha =
      tape.softmax_rows(tape.affine(pooled, p("w_r", pia.w_r), p("b_r", pia.b_r)), pia.tau);
  const auto up1 = tape.affine(h, p("w_u1", pia.w_u1), p("b_u1", pia.b_u1));
  const auto up2 = tape.affine(h, p("w_u2", pia.w_u2), p("b_u2", pia.b_u2));
  return tape.add(tape.scale_rows_by(up1, alpha, 0), tape.scale_rows_by(up2, alpha, 1));
}

template <typename Scalar>
typename GradTape<Scalar>::Var model_forward_graph(GradTape<Scalar>& tape,
                                                   const Model<Scalar>& model,
                                                   const AdapterSet<Scalar>* adapters,
                                                   const SkipMask& mask, const TokenBatch& batch,
                                                   const TrainableSet& trainable,
                                                   int pool_horizon) {
  using Var = typename GradTape<Scalar>::Var;
  const ModelConfig& cfg = model.config;
  if (batch.batch <= 0 || batch.seq_len <= 0 ||
      batch.tokens.size() != static_cast<size_t>(batch.batch) * static_cast<size_t>(batch.seq_len)) {
    throw ShapeError("model_forward_graph: token batch is not batch x seq_len");
  }
  if (batch.seq_len > cfg.max_seq) {
    throw CapacityError("model_forward_graph: seq_len " + std::to_string(batch.seq_len) +
                        " exceeds max_seq " + std::to_string(cfg.max_seq));
  }
  const ModelPlan<Scalar> plan = make_plan(model, mask, adapters);
  std::map<const PiaParams<Scalar>*, std::string> names;
  if (adapters) {
    for (const auto& [c, pia] : adapters->skip) names[&pia] = AdapterSet<Scalar>::skip_prefix(c);
    for (const auto& [l, pia] : adapters->adapt) names[&pia] = AdapterSet<Scalar>::adapt_prefix(l);
  }
  const bool train_pia = trainable.adapters;
  const PoolingRule rule = PoolingRule::causal(pool_horizon);
  const int seq_len = batch.seq_len;

  auto m = [&](const std::string& name, const auto& t) {
    return bind_tensor<Scalar>(tape, name, t, trainable.allows(name));
  };
  auto adapter_sum = [&](Var y, const std::vector<const PiaParams<Scalar>*>& pias) {
    Var sum{};
    for (const auto* pia : pias) {
      Var out = pia_forward_graph<Scalar>(tape, y, *pia, names.at(pia), train_pia, seq_len, rule);
      sum = sum.valid() ? tape.add(sum, out) : out;
    }
    return sum;
  };

  std::vector<int> positions(batch.tokens.size());
  for (size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i % static_cast<size_t>(seq_len));
  Var h = tape.add(tape.gather_rows(m("tok_emb", model.tok_emb), batch.tokens),
                   tape.gather_rows(m("pos_emb", model.pos_emb), std::move(positions)));

  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& lp = plan.layers[static_cast<size_t>(l)];
    const auto& layer = model.layers[static_cast<size_t>(l)];
    const std::string pre = "layers." + std::to_string(l) + ".";
    if (lp.attention) {
      Var y = tape.layer_norm_rows(h, m(pre + "ln1.gamma", layer.ln1.gamma),
                                   m(pre + "ln1.beta", layer.ln1.beta));
      if (lp.adapt) {
        y = tape.add(y, pia_forward_graph<Scalar>(tape, y, *lp.adapt, names.at(lp.adapt),
                                                  train_pia, seq_len, rule));
      }
      const Var q = tape.affine(y, m(pre + "mha.wq", layer.mha.wq), m(pre + "mha.bq", layer.mha.bq));
      const Var k = tape.affine(y, m(pre + "mha.wk", layer.mha.wk), m(pre + "mha.bk", layer.mha.bk));
      const Var v = tape.affine(y, m(pre + "mha.wv", layer.mha.wv), m(pre + "mha.bv", layer.mha.bv));
      const Var att = tape.causal_attention(q, k, v, seq_len, cfg.n_heads);
      h = tape.add(h, tape.affine(att, m(pre + "mha.wo", layer.mha.wo),
                                  m(pre + "mha.bo", layer.mha.bo)));
    }
    if (!lp.ffn && lp.ffn_input.empty()) continue;
    const Var y2 = tape.layer_norm_rows(h, m(pre + "ln2.gamma", layer.ln2.gamma),
                                        m(pre + "ln2.beta", layer.ln2.beta));
    if (lp.ffn) {
      Var in = y2;
      if (!lp.ffn_input.empty()) in = tape.add(y2, adapter_sum(y2, lp.ffn_input));
      const Var hidden = tape.gelu(
          tape.affine(in, m(pre + "ffn.w1", layer.ffn.w1), m(pre + "ffn.b1", layer.ffn.b1)));
      h = tape.add(h, tape.affine(hidden, m(pre + "ffn.w2", layer.ffn.w2),
                                  m(pre + "ffn.b2", layer.ffn.b2)));
    } else {
      h = tape.add(h, adapter_sum(y2, lp.ffn_input));
    }
  }
  if (!plan.trailing.empty()) h = tape.add(h, adapter_sum(h, plan.trailing));
  const Var normed =
      tape.layer_norm_rows(h, m("ln_f.gamma", model.ln_f.gamma), m("ln_f.beta", model.ln_f.beta));
  return tape.affine(normed, m("head.w", model.head_w), m("head.b", model.head_b));
}

#define EASKIT_INSTANTIATE(S)                                                                  \
  template GradTape<S>::Var pia_forward_graph<S>(GradTape<S>&, GradTape<S>::Var,               \
                                                 const PiaParams<S>&, const std::string&,      \
                                                 bool, int, PoolingRule);                      \
  template GradTape<S>::Var model_forward_graph<S>(GradTape<S>&, const Model<S>&,              \
                                                   const AdapterSet<S>*, const SkipMask&,      \
                                                   const TokenBatch&, const TrainableSet&, int);

EASKIT_INSTANTIATE(float)
EASKIT_INSTANTIATE(double)

#undef EASKIT_INSTANTIATE

}  // namespace easkit
