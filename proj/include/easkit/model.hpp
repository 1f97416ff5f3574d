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

#include <compare>
#include <map>
#include <string>
#include <vector>

#include "easkit/numeric.hpp"
#include "easkit/pia.hpp"
#include "easkit/rng.hpp"

namespace easkit {

struct ModelConfig {
  int n_layers = 8;
  int d_model = 128;
  int n_heads = 4;
  int d_ffn = 512;
  int vocab = 64;
  int max_seq = 64;
  int r_skip = 32;
  int r_adapt = 8;
  double tau = 1.0;

  /// Throws ConfigError on any violated invariant.
  void validate() const;
  int head_dim() const { return d_model / n_heads; }
};

enum class ModuleKind { Mha, Ffn, Layer };

/// Which modules the redundancy search may skip.
enum class CandidateSet { Mha, Ffn, Either, Layer };

std::string to_string(ModuleKind kind);
std::string to_string(CandidateSet set);
ModuleKind parse_module_kind(const std::string& text);
/// Accepts mha | ffn | either | layer.
CandidateSet parse_candidate_set(const std::string& text);

struct Candidate {
  int layer = 0;
  ModuleKind kind = ModuleKind::Mha;
  auto operator<=>(const Candidate&) const = default;
};

/// Candidate indices run over layers in order; for Either the n MHAs come
/// first, then the n FFNs.
int candidate_count(CandidateSet set, int n_layers);
Candidate candidate_at(CandidateSet set, int n_layers, int index);
int candidate_index(CandidateSet set, int n_layers, Candidate c);

/// The set of skipped modules, drawn from one candidate set.
class SkipMask {
 public:
  SkipMask() = default;
  SkipMask(CandidateSet set, int n_layers) : set_(set), n_layers_(n_layers) {}

  static SkipMask from_indices(CandidateSet set, int n_layers, const std::vector<int>& indices);

  /// Throws ContractError on out-of-range layer, a kind outside the candidate
  /// set, or a duplicate.
  void add(Candidate c);
  bool contains(Candidate c) const;
  bool skips(int layer, ModuleKind kind) const { return contains({layer, kind}); }
  bool mha_removed(int layer) const {
    return skips(layer, ModuleKind::Mha) || skips(layer, ModuleKind::Layer);
  }
  bool ffn_removed(int layer) const {
    return skips(layer, ModuleKind::Ffn) || skips(layer, ModuleKind::Layer);
  }

  const std::vector<Candidate>& skipped() const { return skipped_; }
  std::vector<int> indices() const;
  size_t size() const { return skipped_.size(); }
  bool empty() const { return skipped_.empty(); }
  CandidateSet candidate_set() const { return set_; }
  int n_layers() const { return n_layers_; }

  bool operator==(const SkipMask&) const = default;

 private:
  CandidateSet set_ = CandidateSet::Mha;
  int n_layers_ = 0;
  std::vector<Candidate> skipped_;  // kept sorted
};

template <typename Scalar>
struct MhaWeights {
  Matrix<Scalar> wq, wk, wv, wo;
  RowVector<Scalar> bq, bk, bv, bo;
};

template <typename Scalar>
struct NormParams {
  RowVector<Scalar> gamma;
  RowVector<Scalar> beta;
};

template <typename Scalar>
struct LayerParams {
  MhaWeights<Scalar> mha;
  FfnWeights<Scalar> ffn;
  NormParams<Scalar> ln1;
  NormParams<Scalar> ln2;

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + "mha.wq", mha.wq);
    f(prefix + "mha.bq", mha.bq);
    f(prefix + "mha.wk", mha.wk);
    f(prefix + "mha.bk", mha.bk);
    f(prefix + "mha.wv", mha.wv);
    f(prefix + "mha.bv", mha.bv);
    f(prefix + "mha.wo", mha.wo);
    f(prefix + "mha.bo", mha.bo);
    f(prefix + "ffn.w1", ffn.w1);
    f(prefix + "ffn.b1", ffn.b1);
    f(prefix + "ffn.w2", ffn.w2);
    f(prefix + "ffn.b2", ffn.b2);
    f(prefix + "ln1.gamma", ln1.gamma);
    f(prefix + "ln1.beta", ln1.beta);
    f(prefix + "ln2.gamma", ln2.gamma);
    f(prefix + "ln2.beta", ln2.beta);
  }
};

/// Tiny pre-norm decoder-only transformer with learned absolute positions and
/// a separate output projection.
template <typename Scalar>
struct Model {
  ModelConfig config;
  Matrix<Scalar> tok_emb;  // vocab x d
  Matrix<Scalar> pos_emb;  // max_seq x d
  std::vector<LayerParams<Scalar>> layers;
  NormParams<Scalar> ln_f;
  Matrix<Scalar> head_w;  // d x vocab
  RowVector<Scalar> head_b;

  /// Zero weights, unit norms.
  static Model zeros(const ModelConfig& config);
  static Model init(const ModelConfig& config, Rng& rng);

  template <typename F>
  void visit(F&& f) {
    f(std::string("tok_emb"), tok_emb);
    f(std::string("pos_emb"), pos_emb);
    for (size_t i = 0; i < layers.size(); ++i) {
      layers[i].visit("layers." + std::to_string(i) + ".", f);
    }
    f(std::string("ln_f.gamma"), ln_f.gamma);
    f(std::string("ln_f.beta"), ln_f.beta);
    f(std::string("head.w"), head_w);
    f(std::string("head.b"), head_b);
  }
  template <typename F>
  void visit(F&& f) const {
    const_cast<Model*>(this)->visit([&](const std::string& n, const auto& t) { f(n, t); });
  }
};

/// Adapters attached to a model: two-path skip adapters keyed by the
/// candidate slot they stand in for, and optional single-path adapters that
/// sit in front of kept attentions.
template <typename Scalar>
struct AdapterSet {
  std::map<Candidate, PiaParams<Scalar>> skip;
  std::map<int, PiaParams<Scalar>> adapt;

  const PiaParams<Scalar>* skip_pia(Candidate c) const {
    auto it = skip.find(c);
    return it == skip.end() ? nullptr : &it->second;
  }
  const PiaParams<Scalar>* adapt_pia(int layer) const {
    auto it = adapt.find(layer);
    return it == adapt.end() ? nullptr : &it->second;
  }

  /// A freshly initialized skip adapter at every candidate position.
  static AdapterSet for_candidates(const ModelConfig& config, CandidateSet set, Rng& rng);
  /// A freshly initialized skip adapter at every skipped slot of `mask`.
  static AdapterSet for_mask(const ModelConfig& config, const SkipMask& mask, Rng& rng);
  /// Adds single-path adapters in front of every layer's attention.
  void add_adaptation(const ModelConfig& config, Rng& rng);

  static std::string skip_prefix(Candidate c);
  static std::string adapt_prefix(int layer);

  template <typename F>
  void visit(F&& f) {
    for (auto& [c, p] : skip) p.visit(skip_prefix(c), f);
    for (auto& [l, p] : adapt) p.visit(adapt_prefix(l), f);
  }
  template <typename F>
  void visit(F&& f) const {
    const_cast<AdapterSet*>(this)->visit([&](const std::string& n, const auto& t) { f(n, t); });
  }
};

/// Which tensor groups a training run may update.
struct TrainableSet {
  bool backbone = false;    // every layers.* tensor (attention, FFN, norms)
  bool embeddings = false;  // tok_emb, pos_emb
  bool head = false;        // ln_f.*, head.*
  bool adapters = true;     // pia.*

  static TrainableSet everything() { return {true, true, true, true}; }
  static TrainableSet adapters_only() { return {false, false, false, true}; }
  bool allows(const std::string& tensor_name) const;
};

/// Deep-copies all tensors of a model into another scalar type.
template <typename To, typename From>
Model<To> cast_model(const Model<From>& model);
template <typename To, typename From>
AdapterSet<To> cast_adapters(const AdapterSet<From>& adapters);

/// FNV-1a over the raw bytes of every model tensor in `groups`.
template <typename Scalar>
std::uint64_t tensor_hash(const Model<Scalar>& model, const TrainableSet& groups);

}  // namespace easkit
