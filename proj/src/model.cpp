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

#include "easkit/model.hpp"

#include <algorithm>
#include <cstring>

namespace easkit {

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("model config: " + msg);
  };
  require(n_layers >= 1, "n_layers must be >= 1");
  require(d_model >= 2, "d_model must be >= 2");
  require(n_heads >= 1 && d_model % n_heads == 0, "d_model must be divisible by n_heads");
  require(d_ffn >= 1, "d_ffn must be >= 1");
  require(vocab >= 2, "vocab must be >= 2");
  require(max_seq >= 1, "max_seq must be >= 1");
  require(r_skip >= 1 && r_skip < d_model, "r_skip must be in [1, d_model)");
  require(r_adapt >= 1 && r_adapt < d_model, "r_adapt must be in [1, d_model)");
  require(tau > 0.0, "tau must be positive");
}

std::string to_string(ModuleKind kind) {
  switch (kind) {
    case ModuleKind::Mha: return "mha";
    case ModuleKind::Ffn: return "ffn";
    case ModuleKind::Layer: return "layer";
  }
  return "?";
}

std::string to_string(CandidateSet set) {
  switch (set) {
    case CandidateSet::Mha: return "mha";
    case CandidateSet::Ffn: return "ffn";
    case CandidateSet::Either: return "either";
    case CandidateSet::Layer: return "layer";
  }
  return "?";
}

ModuleKind parse_module_kind(const std::string& text) {
  if (text == "mha") return ModuleKind::Mha;
  if (text == "ffn") return ModuleKind::Ffn;
  if (text == "layer") return ModuleKind::Layer;
  throw ConfigError("unknown module kind '" + text + "'");
}

CandidateSet parse_candidate_set(const std::string& text) {
  if (text == "mha") return CandidateSet::Mha;
  if (text == "ffn") return CandidateSet::Ffn;
  if (text == "either") return CandidateSet::Either;
  if (text == "layer") return CandidateSet::Layer;
  throw ConfigError("unknown candidate set '" + text + "' (expected mha|ffn|either|layer)");
}

int candidate_count(CandidateSet set, int n_layers) {
  return set == CandidateSet::Either ? 2 * n_layers : n_layers;
}

Candidate candidate_at(CandidateSet set, int n_layers, int index) {
  if (index < 0 || index >= candidate_count(set, n_layers)) {
    throw IndexError("candidate index " + std::to_string(index) + " out of range");
  }
  switch (set) {
    case CandidateSet::Mha: return {index, ModuleKind::Mha};
    case CandidateSet::Ffn: return {index, ModuleKind::Ffn};
    case CandidateSet::Layer: return {index, ModuleKind::Layer};
    case CandidateSet::Either:
      return index < n_layers ? Candidate{index, ModuleKind::Mha}
                              : Candidate{index - n_layers, ModuleKind::Ffn};
  }
  return {};
}

namespace {

bool kind_allowed(CandidateSet set, ModuleKind kind) {
  switch (set) {
    case CandidateSet::Mha: return kind == ModuleKind::Mha;
    case CandidateSet::Ffn: return kind == ModuleKind::Ffn;
    case CandidateSet::Layer: return kind == ModuleKind::Layer;
    case CandidateSet::Either: return kind == ModuleKind::Mha || kind == ModuleKind::Ffn;
  }
  return false;
}

}  // namespace

int candidate_index(CandidateSet set, int n_layers, Candidate c) {
  if (!kind_allowed(set, c.kind) || c.layer < 0 || c.layer >= n_layers) {
    throw ContractError("candidate " + to_string(c.kind) + "." + std::to_string(c.layer) +
                        " is not in candidate set " + to_string(set));
  }
  if (set == CandidateSet::Either && c.kind == ModuleKind::Ffn) return n_layers + c.layer;
  return c.layer;
}

SkipMask SkipMask::from_indices(CandidateSet set, int n_layers, const std::vector<int>& indices) {
  SkipMask mask(set, n_layers);
  for (int i : indices) mask.add(candidate_at(set, n_layers, i));
  return mask;
}

void SkipMask::add(Candidate c) {
  candidate_index(set_, n_layers_, c);  // range and kind check
  auto it = std::lower_bound(skipped_.begin(), skipped_.end(), c);
  if (it != skipped_.end() && *it == c) {
    throw ContractError("skip mask: duplicate " + to_string(c.kind) + "." +
                        std::to_string(c.layer));
  }
  skipped_.insert(it, c);
}

bool SkipMask::contains(Candidate c) const {
  return std::binary_search(skipped_.begin(), skipped_.end(), c);
}

std::vector<int> SkipMask::indices() const {
  std::vector<int> out;
  out.reserve(skipped_.size());
  for (const auto& c : skipped_) out.push_back(candidate_index(set_, n_layers_, c));
  std::sort(out.begin(), out.end());
  return out;
}

template <typename Scalar>
Model<Scalar> Model<Scalar>::zeros(const ModelConfig& config) {
  config.validate();
  const int d = config.d_model;
  Model m;
  m.config = config;
  m.tok_emb = Matrix<Scalar>::Zero(config.vocab, d);
  m.pos_emb = Matrix<Scalar>::Zero(config.max_seq, d);
  m.layers.resize(static_cast<size_t>(config.n_layers));
  for (auto& l : m.layers) {
    l.mha.wq = l.mha.wk = l.mha.wv = l.mha.wo = Matrix<Scalar>::Zero(d, d);
    l.mha.bq = l.mha.bk = l.mha.bv = l.mha.bo = RowVector<Scalar>::Zero(d);
    l.ffn.w1 = Matrix<Scalar>::Zero(d, config.d_ffn);
    l.ffn.b1 = RowVector<Scalar>::Zero(config.d_ffn);
    l.ffn.w2 = Matrix<Scalar>::Zero(config.d_ffn, d);
    l.ffn.b2 = RowVector<Scalar>::Zero(d);
    l.ln1 = l.ln2 = NormParams<Scalar>{RowVector<Scalar>::Ones(d), RowVector<Scalar>::Zero(d)};
  }
  m.ln_f = NormParams<Scalar>{RowVector<Scalar>::Ones(d), RowVector<Scalar>::Zero(d)};
  m.head_w = Matrix<Scalar>::Zero(d, config.vocab);
  m.head_b = RowVector<Scalar>::Zero(config.vocab);
  return m;
}

template <typename Scalar>
Model<Scalar> Model<Scalar>::init(const ModelConfig& config, Rng& rng) {
  Model m = zeros(config);
  auto fill = [&](Matrix<Scalar>& w, double stddev) {
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<Scalar>(rng.normal(0.0, stddev));
  };
  const double d = config.d_model;
  const double depth = 1.0 / std::sqrt(2.0 * config.n_layers);
  fill(m.tok_emb, 1.0);
  fill(m.pos_emb, 1.0);
  for (auto& l : m.layers) {
    fill(l.mha.wq, 1.0 / std::sqrt(d));
    fill(l.mha.wk, 1.0 / std::sqrt(d));
    fill(l.mha.wv, 1.0 / std::sqrt(d));
    fill(l.mha.wo, depth / std::sqrt(d));
    fill(l.ffn.w1, 1.0 / std::sqrt(d));
    fill(l.ffn.w2, depth / std::sqrt(static_cast<double>(config.d_ffn)));
  }
  fill(m.head_w, 1.0 / std::sqrt(d));
  return m;
}

template <typename Scalar>
AdapterSet<Scalar> AdapterSet<Scalar>::for_candidates(const ModelConfig& config, CandidateSet set,
                                                      Rng& rng) {
  AdapterSet a;
  for (int i = 0; i < candidate_count(set, config.n_layers); ++i) {
    a.skip.emplace(candidate_at(set, config.n_layers, i),
                   PiaParams<Scalar>::init(PiaMode::TwoPathSkip, config.d_model, config.r_skip,
                                           static_cast<Scalar>(config.tau), rng));
  }
  return a;
}

template <typename Scalar>
AdapterSet<Scalar> AdapterSet<Scalar>::for_mask(const ModelConfig& config, const SkipMask& mask,
                                                Rng& rng) {
  AdapterSet a;
  for (const auto& c : mask.skipped()) {
    a.skip.emplace(c, PiaParams<Scalar>::init(PiaMode::TwoPathSkip, config.d_model, config.r_skip,
                                              static_cast<Scalar>(config.tau), rng));
  }
  return a;
}

template <typename Scalar>
void AdapterSet<Scalar>::add_adaptation(const ModelConfig& config, Rng& rng) {
  for (int l = 0; l < config.n_layers; ++l) {
    adapt.insert_or_assign(l, PiaParams<Scalar>::init(PiaMode::SinglePathAdapt, config.d_model,
                                                      config.r_adapt,
                                                      static_cast<Scalar>(config.tau), rng));
  }
}

template <typename Scalar>
std::string AdapterSet<Scalar>::skip_prefix(Candidate c) {
  return "pia.skip." + to_string(c.kind) + "." + std::to_string(c.layer) + ".";
}

template <typename Scalar>
std::string AdapterSet<Scalar>::adapt_prefix(int layer) {
  return "pia.adapt." + std::to_string(layer) + ".";
}

bool TrainableSet::allows(const std::string& name) const {
  auto starts = [&](const char* p) { return name.rfind(p, 0) == 0; };
  if (starts("pia.")) return adapters;
  if (starts("layers.")) return backbone;
  if (starts("tok_emb") || starts("pos_emb")) return embeddings;
  if (starts("ln_f.") || starts("head.")) return head;
  return false;
}

template <typename To, typename From>
Model<To> cast_model(const Model<From>& model) {
  Model<To> out = Model<To>::zeros(model.config);
  std::map<std::string, Matrix<To>> values;
  model.visit([&](const std::string& name, const auto& t) {
    values.emplace(name, t.template cast<To>());
  });
  out.visit([&](const std::string& name, auto& t) { t = values.at(name); });
  return out;
}

template <typename To, typename From>
AdapterSet<To> cast_adapters(const AdapterSet<From>& adapters) {
  auto cast_pia = [](const PiaParams<From>& p) {
    PiaParams<To> q;
    q.mode = p.mode;
    q.tau = static_cast<To>(p.tau);
    q.w_d1 = p.w_d1.template cast<To>();
    q.b_d1 = p.b_d1.template cast<To>();
    q.w_d2 = p.w_d2.template cast<To>();
    q.b_d2 = p.b_d2.template cast<To>();
    q.w_u1 = p.w_u1.template cast<To>();
    q.b_u1 = p.b_u1.template cast<To>();
    q.w_u2 = p.w_u2.template cast<To>();
    q.b_u2 = p.b_u2.template cast<To>();
    q.w_r = p.w_r.template cast<To>();
    q.b_r = p.b_r.template cast<To>();
    if (p.frozen) {
      q.frozen = FrozenTerms<To>{p.frozen->b_d.template cast<To>(),
                                 p.frozen->alpha.template cast<To>()};
    }
    return q;
  };
  AdapterSet<To> out;
  for (const auto& [c, p] : adapters.skip) out.skip.emplace(c, cast_pia(p));
  for (const auto& [l, p] : adapters.adapt) out.adapt.emplace(l, cast_pia(p));
  return out;
}

template <typename Scalar>
std::uint64_t tensor_hash(const Model<Scalar>& model, const TrainableSet& groups) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  model.visit([&](const std::string& name, const auto& t) {
    if (!groups.allows(name)) return;
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
    for (size_t i = 0; i < static_cast<size_t>(t.size()) * sizeof(Scalar); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  });
  return h;
}

template struct Model<float>;
template struct Model<double>;
template struct AdapterSet<float>;
template struct AdapterSet<double>;
template Model<float> cast_model<float, double>(const Model<double>&);
template Model<double> cast_model<double, float>(const Model<float>&);
template Model<double> cast_model<double, double>(const Model<double>&);
template Model<float> cast_model<float, float>(const Model<float>&);
template AdapterSet<float> cast_adapters<float, double>(const AdapterSet<double>&);
template AdapterSet<double> cast_adapters<double, float>(const AdapterSet<float>&);
template AdapterSet<double> cast_adapters<double, double>(const AdapterSet<double>&);
template AdapterSet<float> cast_adapters<float, float>(const AdapterSet<float>&);
template std::uint64_t tensor_hash<float>(const Model<float>&, const TrainableSet&);
template std::uint64_t tensor_hash<double>(const Model<double>&, const TrainableSet&);

}  // namespace easkit
