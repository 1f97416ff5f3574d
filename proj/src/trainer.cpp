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

#include "easkit/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <thread>

namespace easkit {

void OptimizerConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("optimizer: lr must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("optimizer: betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("optimizer: eps must be > 0");
  if (steps < 0) throw ConfigError("optimizer: steps must be >= 0");
  if (batch_size < 1) throw ConfigError("optimizer: batch_size must be >= 1");
}

TrainBatch make_batch(std::span<const Example> data, std::span<const int> indices, int separator) {
  TrainBatch b;
  if (indices.empty()) throw EmptyInputError("make_batch: no examples");
  const int seq = static_cast<int>(data[static_cast<size_t>(indices[0])].prompt.size());
  b.tokens.batch = static_cast<int>(indices.size());
  b.tokens.seq_len = 2 * seq;
  b.examples = b.tokens.batch;
  for (size_t e = 0; e < indices.size(); ++e) {
    const Example& ex = data[static_cast<size_t>(indices[e])];
    if (static_cast<int>(ex.prompt.size()) != seq || ex.target.size() != ex.prompt.size()) {
      throw ShapeError("make_batch: examples of unequal length");
    }
    const auto tokens = training_sequence(ex, separator);
    b.tokens.tokens.insert(b.tokens.tokens.end(), tokens.begin(), tokens.end());
    const int base = static_cast<int>(e) * b.tokens.seq_len + seq;  // separator row
    for (int i = 0; i < seq; ++i) {
      b.rows.push_back(base + i);
      b.targets.push_back(ex.target[static_cast<size_t>(i)]);
    }
  }
  return b;
}

BatchSampler::BatchSampler(int n_examples, int batch_size, std::uint64_t seed)
    : order_(static_cast<size_t>(n_examples)), batch_size_(batch_size), rng_(seed) {
  if (n_examples < 1) throw EmptyInputError("BatchSampler: empty dataset");
  if (batch_size < 1) throw ConfigError("BatchSampler: batch_size must be >= 1");
  std::iota(order_.begin(), order_.end(), 0);
  rng_.shuffle(order_);
}

std::vector<int> BatchSampler::next() {
  std::vector<int> out;
  const size_t want = std::min(order_.size(), static_cast<size_t>(batch_size_));
  while (out.size() < want) {
    if (cursor_ == order_.size()) {
      rng_.shuffle(order_);
      cursor_ = 0;
    }
    out.push_back(order_[cursor_++]);
  }
  return out;
}

int BatchSampler::steps_per_epoch() const {
  const int n = static_cast<int>(order_.size());
  return std::max(1, (n + batch_size_ - 1) / batch_size_);
}

int thread_budget() {
  const char* env = std::getenv("EASKIT_THREADS");
  if (!env) return 1;
  const int n = std::atoi(env);
  return std::max(1, n);
}

template <typename Scalar>
void Adam<Scalar>::update(const std::string& name, Scalar* param, const Scalar* grad,
                          Eigen::Index size) {
  using Arr = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  Moments& mo = moments_[name];
  if (mo.t == 0) {
    mo.m = Arr::Zero(size);
    mo.v = Arr::Zero(size);
  }
  ++mo.t;
  Eigen::Map<Arr> p(param, size);
  Eigen::Map<const Arr> g(grad, size);
  const Scalar b1 = Scalar(config_.beta1);
  const Scalar b2 = Scalar(config_.beta2);
  mo.m = b1 * mo.m + (Scalar(1) - b1) * g;
  mo.v = b2 * mo.v + (Scalar(1) - b2) * g.square();
  const Scalar c1 = Scalar(1) - Scalar(std::pow(config_.beta1, mo.t));
  const Scalar c2 = Scalar(1) - Scalar(std::pow(config_.beta2, mo.t));
  p -= Scalar(config_.lr) * (mo.m / c1) / ((mo.v / c2).sqrt() + Scalar(config_.eps));
}

template <typename Scalar>
int Adam<Scalar>::step_count(const std::string& name) const {
  auto it = moments_.find(name);
  return it == moments_.end() ? 0 : it->second.t;
}

template <typename Scalar>
TrainingSession<Scalar>::TrainingSession(Model<Scalar>& model, AdapterSet<Scalar>& adapters,
                                         TrainableSet trainable, const OptimizerConfig& config,
                                         int pool_horizon, int threads)
    : model_(model),
      adapters_(adapters),
      trainable_(trainable),
      config_(config),
      pool_horizon_(pool_horizon),
      threads_(std::max(1, threads)),
      adam_(config) {
  config_.validate();
}

namespace {

TrainBatch slice_batch(const TrainBatch& b, int first, int count) {
  TrainBatch out;
  const int seq = b.tokens.seq_len;
  const int per = static_cast<int>(b.rows.size()) / b.examples;
  out.tokens.batch = count;
  out.tokens.seq_len = seq;
  out.examples = count;
  out.tokens.tokens.assign(b.tokens.tokens.begin() + first * seq,
                           b.tokens.tokens.begin() + (first + count) * seq);
  for (int i = first * per; i < (first + count) * per; ++i) {
    out.rows.push_back(b.rows[static_cast<size_t>(i)] - first * seq);
    out.targets.push_back(b.targets[static_cast<size_t>(i)]);
  }
  return out;
}

template <typename Scalar>
Scalar batch_loss_on_tape(GradTape<Scalar>& tape, const Model<Scalar>& model,
                          const AdapterSet<Scalar>& adapters, const SkipMask& mask,
                          const TrainBatch& batch, const TrainableSet& trainable, int horizon,
                          bool backward) {
  const auto logits = model_forward_graph<Scalar>(tape, model, &adapters, mask, batch.tokens,
                                                  trainable, horizon);
  const auto loss = tape.cross_entropy(tape.gather_rows(logits, batch.rows), batch.targets);
  if (backward) tape.backward(loss);
  return tape.scalar(loss);
}

}  // namespace

template <typename Scalar>
double TrainingSession<Scalar>::gradients(const TrainBatch& batch, const SkipMask& mask,
                                          Grads& grads) const {
  const int chunks = std::min(threads_, batch.examples);
  if (chunks <= 1) {
    GradTape<Scalar> tape;
    const Scalar l = batch_loss_on_tape(tape, model_, adapters_, mask, batch, trainable_,
                                        pool_horizon_, true);
    for (const auto& [name, var] : tape.parameters()) grads[name] = tape.grad(var);
    return static_cast<double>(l);
  }
  // Contiguous example chunks, reduced in chunk order so the sum does not
  // depend on thread timing.
  std::vector<Grads> parts(static_cast<size_t>(chunks));
  std::vector<Scalar> losses(static_cast<size_t>(chunks));
  std::vector<int> first(static_cast<size_t>(chunks) + 1, 0);
  for (int c = 0; c < chunks; ++c) {
    first[static_cast<size_t>(c) + 1] =
        first[static_cast<size_t>(c)] + batch.examples / chunks + (c < batch.examples % chunks);
  }
  std::vector<std::exception_ptr> errors(static_cast<size_t>(chunks));
  std::vector<std::thread> workers;
  for (int c = 0; c < chunks; ++c) {
    workers.emplace_back([&, c] {
      try {
        const size_t ci = static_cast<size_t>(c);
        const TrainBatch sub = slice_batch(batch, first[ci], first[ci + 1] - first[ci]);
        GradTape<Scalar> tape;
        losses[ci] = batch_loss_on_tape(tape, model_, adapters_, mask, sub, trainable_,
                                        pool_horizon_, true);
        for (const auto& [name, var] : tape.parameters()) parts[ci][name] = tape.grad(var);
      } catch (...) {
        errors[static_cast<size_t>(c)] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  Scalar total = 0;
  for (int c = 0; c < chunks; ++c) {
    const size_t ci = static_cast<size_t>(c);
    const Scalar w = Scalar(first[ci + 1] - first[ci]) / Scalar(batch.examples);
    total += w * losses[ci];
    for (auto& [name, g] : parts[ci]) {
      auto it = grads.find(name);
      if (it == grads.end()) {
        grads.emplace(name, w * g);
      } else {
        it->second += w * g;
      }
    }
  }
  return static_cast<double>(total);
}

template <typename Scalar>
double TrainingSession<Scalar>::step(const TrainBatch& batch, const SkipMask& mask) {
  Grads grads;
  const double l = gradients(batch, mask, grads);
  if (!std::isfinite(l)) throw DiagnosticError("training loss is not finite");
  if (config_.grad_clip > 0) {
    double sq = 0.0;
    for (const auto& [name, g] : grads) sq += static_cast<double>(g.squaredNorm());
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw DiagnosticError("gradient norm is not finite");
    if (norm > config_.grad_clip) {
      const Scalar f = Scalar(config_.grad_clip / norm);
      for (auto& [name, g] : grads) g *= f;
    }
  }
  auto apply = [&](const std::string& name, auto& tensor) {
    auto it = grads.find(name);
    if (it == grads.end()) return;
    if (it->second.size() != tensor.size()) {
      throw ShapeError("gradient of " + name + " has the wrong size");
    }
    adam_.update(name, tensor.data(), it->second.data(), tensor.size());
  };
  model_.visit(apply);
  adapters_.visit(apply);
  return l;
}

template <typename Scalar>
double TrainingSession<Scalar>::loss(const TrainBatch& batch, const SkipMask& mask) const {
  GradTape<Scalar> tape;
  return static_cast<double>(batch_loss_on_tape(tape, model_, adapters_, mask, batch,
                                                TrainableSet{false, false, false, false},
                                                pool_horizon_, false));
}

template <typename Scalar>
TrainResult train(Model<Scalar>& model, AdapterSet<Scalar>& adapters, const Dataset& data,
                  const OptimizerConfig& opt, const TrainOptions& options) {
  opt.validate();
  data.spec.validate_for(model.config);
  TrainingSession<Scalar> session(model, adapters, options.trainable, opt,
                                  data.spec.freeze_position(), options.threads);
  BatchSampler sampler(static_cast<int>(data.train.size()), opt.batch_size, options.seed);
  TrainResult result;
  for (int s = 0; s < opt.steps; ++s) {
    const auto idx = sampler.next();
    const double l = session.step(make_batch(data.train, idx, data.spec.separator()), options.mask);
    result.loss_curve.push_back(l);
    if (options.on_step) options.on_step(s, l);
  }
  return result;
}

template <typename Scalar>
EvalReport evaluate(const Model<Scalar>& model, const AdapterSet<Scalar>* adapters,
                    const SkipMask& mask, std::span<const Example> examples, const TaskSpec& spec,
                    DecodeMode mode) {
  EvalReport rep;
  rep.examples = static_cast<int>(examples.size());
  if (examples.empty()) return rep;
  const int seq = spec.seq_len;
  const int sep = spec.separator();
  Matrix<Scalar> stacked(static_cast<Eigen::Index>(examples.size()) * seq, model.config.vocab);
  std::vector<int> targets;
  int correct = 0;
  for (size_t e = 0; e < examples.size(); ++e) {
    const Example& ex = examples[e];
    const auto tokens = training_sequence(ex, sep);
    const Matrix<Scalar> logits =
        model_forward<Scalar>(model, tokens, mask, adapters, spec.freeze_position());
    stacked.middleRows(static_cast<Eigen::Index>(e) * seq, seq) = logits.middleRows(seq, seq);
    targets.insert(targets.end(), ex.target.begin(), ex.target.end());
    const auto prompt = model_prompt(ex, sep);
    auto out = generate<Scalar>(model, prompt, seq, mask, adapters, mode);
    for (int i = 0; i < seq; ++i) {
      correct += out[static_cast<size_t>(i)] == ex.target[static_cast<size_t>(i)];
    }
    rep.predictions.push_back(std::move(out));
  }
  rep.positions = static_cast<int>(targets.size());
  rep.loss = static_cast<double>(cross_entropy_loss<Scalar>(stacked, targets));
  rep.accuracy = static_cast<double>(correct) / static_cast<double>(rep.positions);
  return rep;
}

template <typename Scalar>
ModelSearchEnvironment<Scalar>::ModelSearchEnvironment(TrainingSession<Scalar>& session,
                                                       const Dataset& data,
                                                       CandidateSet candidates, int n_layers,
                                                       std::uint64_t seed)
    : session_(session),
      data_(data),
      candidates_(candidates),
      n_layers_(n_layers),
      sampler_(static_cast<int>(data.train.size()), session.config().batch_size, seed) {}

template <typename Scalar>
int ModelSearchEnvironment<Scalar>::candidate_count() const {
  return easkit::candidate_count(candidates_, n_layers_);
}

template <typename Scalar>
TrainBatch ModelSearchEnvironment<Scalar>::next_batch() {
  return make_batch(data_.train, sampler_.next(), data_.spec.separator());
}

template <typename Scalar>
double ModelSearchEnvironment<Scalar>::train_step(const std::vector<int>& skip) {
  return session_.step(next_batch(), SkipMask::from_indices(candidates_, n_layers_, skip));
}

template <typename Scalar>
std::vector<double> ModelSearchEnvironment<Scalar>::evaluate(
    const std::vector<std::vector<int>>& skips) {
  const TrainBatch batch = next_batch();
  std::vector<double> out(skips.size());
  auto score = [&](size_t j) {
    out[j] = session_.loss(batch, SkipMask::from_indices(candidates_, n_layers_, skips[j]));
  };
  const size_t workers = std::min(static_cast<size_t>(session_.threads()), skips.size());
  if (workers <= 1) {
    for (size_t j = 0; j < skips.size(); ++j) score(j);
    return out;
  }
  std::vector<std::exception_ptr> errors(skips.size());
  std::vector<std::thread> pool;
  for (size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (size_t j = w; j < skips.size(); j += workers) {
        try {
          score(j);
        } catch (...) {
          errors[j] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

#define EASKIT_INSTANTIATE(S)                                                                  \
  template class Adam<S>;                                                                      \
  template class TrainingSession<S>;                                                           \
  template class ModelSearchEnvironment<S>;                                                    \
  template TrainResult train<S>(Model<S>&, AdapterSet<S>&, const Dataset&,                     \
                                const OptimizerConfig&, const TrainOptions&);                  \
  template EvalReport evaluate<S>(const Model<S>&, const AdapterSet<S>*, const SkipMask&,      \
                                  std::span<const Example>, const TaskSpec&, DecodeMode);

EASKIT_INSTANTIATE(float)
EASKIT_INSTANTIATE(double)

#undef EASKIT_INSTANTIATE

}  // namespace easkit
