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
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "easkit/bandit.hpp"
#include "easkit/graph.hpp"
#include "easkit/model.hpp"
#include "easkit/task.hpp"
#include "easkit/transformer.hpp"

namespace easkit {

struct OptimizerConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int steps = 500;
  int batch_size = 16;
  double grad_clip = 1.0;  // global norm; <= 0 disables

  /// lr = 0 is accepted as a no-op probe; negative values are not.
  void validate() const;
};

/// Teacher-forced batch: answer logits sit at `rows` of the stacked logits.
struct TrainBatch {
  TokenBatch tokens;
  std::vector<int> rows;
  std::vector<int> targets;
  int examples = 0;
};

TrainBatch make_batch(std::span<const Example> data, std::span<const int> indices, int separator);

/// Epoch-wise shuffled mini-batch indices.
class BatchSampler {
 public:
  BatchSampler(int n_examples, int batch_size, std::uint64_t seed);
  std::vector<int> next();
  int steps_per_epoch() const;

 private:
  std::vector<int> order_;
  size_t cursor_ = 0;
  int batch_size_;
  Rng rng_;
};

/// Reads EASKIT_THREADS (default 1, minimum 1).
int thread_budget();

template <typename Scalar>
class Adam {
 public:
  explicit Adam(const OptimizerConfig& config) : config_(config) {}
  /// One update of `param` (flat view) for gradient `grad`.
  void update(const std::string& name, Scalar* param, const Scalar* grad, Eigen::Index size);
  int step_count(const std::string& name) const;

 private:
  struct Moments {
    Eigen::Array<Scalar, Eigen::Dynamic, 1> m, v;
    int t = 0;
  };
  OptimizerConfig config_;
  std::map<std::string, Moments> moments_;
};

/// Model, adapters and optimizer state for repeated steps under varying
/// skip masks. Only tensors allowed by `trainable` ever change.
template <typename Scalar>
class TrainingSession {
 public:
  TrainingSession(Model<Scalar>& model, AdapterSet<Scalar>& adapters, TrainableSet trainable,
                  const OptimizerConfig& config, int pool_horizon, int threads = 1);

  /// Forward, backward, clip and Adam update. Returns the batch loss taken
  /// before the update. NaN or Inf loss throws DiagnosticError.
  double step(const TrainBatch& batch, const SkipMask& mask);
  /// Batch loss without touching any state.
  double loss(const TrainBatch& batch, const SkipMask& mask) const;

  int threads() const { return threads_; }
  const OptimizerConfig& config() const { return config_; }
  const TrainableSet& trainable() const { return trainable_; }

 private:
  using Grads = std::map<std::string, Matrix<Scalar>>;
  double gradients(const TrainBatch& batch, const SkipMask& mask, Grads& grads) const;

  Model<Scalar>& model_;
  AdapterSet<Scalar>& adapters_;
  TrainableSet trainable_;
  OptimizerConfig config_;
  int pool_horizon_;
  int threads_;
  Adam<Scalar> adam_;
};

struct TrainOptions {
  TrainableSet trainable = TrainableSet::adapters_only();
  SkipMask mask;
  std::uint64_t seed = 0;
  int threads = 1;
  std::function<void(int step, double loss)> on_step;
};

struct TrainResult {
  std::vector<double> loss_curve;
};

template <typename Scalar>
TrainResult train(Model<Scalar>& model, AdapterSet<Scalar>& adapters, const Dataset& data,
                  const OptimizerConfig& opt, const TrainOptions& options);

struct EvalReport {
  double loss = 0.0;
  double accuracy = 0.0;
  int examples = 0;
  int positions = 0;
  std::vector<std::vector<int>> predictions;  // greedy answer per example
};

/// Teacher-forced mean cross-entropy over every answer position, and the
/// fraction of answer positions matched by greedy decoding.
template <typename Scalar>
EvalReport evaluate(const Model<Scalar>& model, const AdapterSet<Scalar>* adapters,
                    const SkipMask& mask, std::span<const Example> examples, const TaskSpec& spec,
                    DecodeMode mode = DecodeMode::FuseAfterFirst);

/// Supernet search over a model with one skip adapter per candidate slot.
/// Training steps draw batches from the train split; each comparison scores
/// every skip set on the next batch.
template <typename Scalar>
class ModelSearchEnvironment : public SearchEnvironment {
 public:
  ModelSearchEnvironment(TrainingSession<Scalar>& session, const Dataset& data,
                         CandidateSet candidates, int n_layers, std::uint64_t seed);

  int candidate_count() const override;
  int steps_per_epoch() const override { return sampler_.steps_per_epoch(); }
  double train_step(const std::vector<int>& skip) override;
  std::vector<double> evaluate(const std::vector<std::vector<int>>& skips) override;

 private:
  TrainBatch next_batch();

  TrainingSession<Scalar>& session_;
  const Dataset& data_;
  CandidateSet candidates_;
  int n_layers_;
  BatchSampler sampler_;
};

}  // namespace easkit
