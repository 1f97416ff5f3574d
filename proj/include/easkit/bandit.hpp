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

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "easkit/rng.hpp"

namespace easkit {

/// advantage:     ds_i += (r_j - mean r) * pi(1 - pi)
/// paper-literal: ds_i += (mean r - r_j) * pi(1 - pi)
enum class RewardSign { Advantage, PaperLiteral };

std::string to_string(RewardSign sign);
RewardSign parse_reward_sign(const std::string& text);

struct SearchSchedule {
  int warmup_epochs = 5;
  int search_epochs = 5;
  int compare_every = 10;
  int m = 3;
  int k = 1;
  RewardSign reward_sign = RewardSign::Advantage;

  /// ConfigError unless m >= 2, 1 <= k < n_candidates and the counts are sane.
  void validate(int n_candidates) const;
};

/// One comparison: the m sampled policies, their skip sets and outcomes.
struct PreferenceUpdate {
  int step = 0;
  std::vector<std::vector<double>> policies;
  std::vector<std::vector<int>> skip_sets;
  std::vector<double> losses;
  std::vector<double> rewards;
};

struct PreferenceState {
  std::vector<double> s;
  int step = 0;
  std::vector<PreferenceUpdate> history;

  static PreferenceState zeros(int n_candidates);
};

std::vector<double> softmax_bounds(std::span<const double> s);

/// pi_i ~ U(0, softmax(s)_i), drawn independently in index order.
std::vector<double> sample_policy(std::span<const double> s, Rng& rng);

/// Indices of the k smallest entries, ascending; ties go to the lower index.
/// Throws DomainError when k > n or k < 0.
std::vector<int> select_skip_set(std::span<const double> pi, int k);

/// exp(-loss). Throws DiagnosticError on a non-finite loss.
double compute_reward(double loss);

/// Accumulates the preference update of every subnetwork in index order.
/// Throws ContractError when policies, skip_sets and rewards disagree in
/// length or a policy does not match |s|.
void update_preferences(PreferenceState& state, const std::vector<std::vector<double>>& policies,
                        const std::vector<std::vector<int>>& skip_sets,
                        std::span<const double> rewards, RewardSign sign);

/// What run_search drives: a trainable supernet with one adapter per
/// candidate, or any stand-in producing losses for skip sets.
class SearchEnvironment {
 public:
  virtual ~SearchEnvironment() = default;
  virtual int candidate_count() const = 0;
  virtual int steps_per_epoch() const = 0;
  /// One optimizer step with `skip` removed; returns the batch loss.
  virtual double train_step(const std::vector<int>& skip) = 0;
  /// Loss of each skip set on one shared mini-batch, in input order.
  virtual std::vector<double> evaluate(const std::vector<std::vector<int>>& skips) = 0;
};

struct SearchEvent {
  int step = 0;
  std::string phase;  // "warmup" | "search" | "compare"
  std::vector<int> skip;
  double loss = 0.0;
  const PreferenceUpdate* update = nullptr;  // compare events only
  std::span<const double> s;
};

std::string to_json_line(const SearchEvent& event);

using SearchSink = std::function<void(const SearchEvent&)>;

struct SearchResult {
  PreferenceState state;
  std::vector<int> skip_set;
  std::vector<double> train_losses;
};

/// Warmup epochs train under uniformly random k-subsets. Search epochs train
/// under policy-sampled skip sets and, every compare_every steps, score m
/// policy-sampled subnetworks on one batch and update the preferences. The
/// result skips the k candidates of lowest preference.
SearchResult run_search(SearchEnvironment& env, const SearchSchedule& schedule, Rng& rng,
                        const SearchSink& sink = {});

}  // namespace easkit
