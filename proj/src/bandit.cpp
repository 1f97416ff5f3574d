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

#include "easkit/bandit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "easkit/errors.hpp"

namespace easkit {

std::string to_string(RewardSign sign) {
  return sign == RewardSign::Advantage ? "advantage" : "paper-literal";
}

RewardSign parse_reward_sign(const std::string& text) {
  if (text == "advantage") return RewardSign::Advantage;
  if (text == "paper-literal") return RewardSign::PaperLiteral;
  throw ConfigError("unknown reward sign '" + text + "'");
}

void SearchSchedule::validate(int n_candidates) const {
  if (m < 2) throw ConfigError("schedule: m must be >= 2");
  if (k < 1 || k >= n_candidates) {
    throw ConfigError("schedule: k = " + std::to_string(k) + " outside [1, " +
                      std::to_string(n_candidates) + ")");
  }
  if (warmup_epochs < 0 || search_epochs < 0) throw ConfigError("schedule: negative epochs");
  if (compare_every < 1) throw ConfigError("schedule: compare_every must be >= 1");
}

PreferenceState PreferenceState::zeros(int n_candidates) {
  PreferenceState st;
  st.s.assign(static_cast<size_t>(n_candidates), 0.0);
  return st;
}

std::vector<double> softmax_bounds(std::span<const double> s) {
  if (s.empty()) return {};
  const double mx = *std::max_element(s.begin(), s.end());
  std::vector<double> out(s.size());
  double total = 0.0;
  for (size_t i = 0; i < s.size(); ++i) {
    out[i] = std::exp(s[i] - mx);
    total += out[i];
  }
  for (auto& v : out) v /= total;
  return out;
}

std::vector<double> sample_policy(std::span<const double> s, Rng& rng) {
  std::vector<double> pi = softmax_bounds(s);
  for (auto& p : pi) p *= rng.uniform();
  return pi;
}

std::vector<int> select_skip_set(std::span<const double> pi, int k) {
  const int n = static_cast<int>(pi.size());
  if (k < 0 || k > n) {
    throw DomainError("select_skip_set: k = " + std::to_string(k) + " with " + std::to_string(n) +
                      " candidates");
  }
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return pi[static_cast<size_t>(a)] < pi[static_cast<size_t>(b)];
  });
  order.resize(static_cast<size_t>(k));
  std::sort(order.begin(), order.end());
  return order;
}

double compute_reward(double loss) {
  if (!std::isfinite(loss)) throw DiagnosticError("compute_reward: non-finite loss");
  return std::exp(-loss);
}

void update_preferences(PreferenceState& state, const std::vector<std::vector<double>>& policies,
                        const std::vector<std::vector<int>>& skip_sets,
                        std::span<const double> rewards, RewardSign sign) {
  const size_t m = rewards.size();
  if (policies.size() != m || skip_sets.size() != m || m == 0) {
    throw ContractError("update_preferences: " + std::to_string(policies.size()) + " policies, " +
                        std::to_string(skip_sets.size()) + " skip sets, " + std::to_string(m) +
                        " rewards");
  }
  const size_t n = state.s.size();
  for (const auto& p : policies) {
    if (p.size() != n) throw ContractError("update_preferences: policy length differs from |s|");
  }
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / static_cast<double>(m);
  std::vector<char> skipped(n);
  for (size_t j = 0; j < m; ++j) {
    std::fill(skipped.begin(), skipped.end(), 0);
    for (int i : skip_sets[j]) {
      if (i < 0 || static_cast<size_t>(i) >= n) {
        throw ContractError("update_preferences: skip index out of range");
      }
      skipped[static_cast<size_t>(i)] = 1;
    }
    const double adv = sign == RewardSign::Advantage ? rewards[j] - mean : mean - rewards[j];
    for (size_t i = 0; i < n; ++i) {
      if (skipped[i]) continue;
      const double p = policies[j][i];
      state.s[i] += adv * p * (1.0 - p);
    }
  }
}

std::string to_json_line(const SearchEvent& event) {
  nlohmann::json j;
  j["step"] = event.step;
  j["phase"] = event.phase;
  j["s"] = std::vector<double>(event.s.begin(), event.s.end());
  if (event.update) {
    j["skip_sets"] = event.update->skip_sets;
    j["losses"] = event.update->losses;
    j["rewards"] = event.update->rewards;
  } else {
    j["skip"] = event.skip;
    j["loss"] = event.loss;
  }
  return j.dump();
}

SearchResult run_search(SearchEnvironment& env, const SearchSchedule& schedule, Rng& rng,
                        const SearchSink& sink) {
  const int n = env.candidate_count();
  schedule.validate(n);
  SearchResult result;
  result.state = PreferenceState::zeros(n);
  PreferenceState& st = result.state;
  const int per_epoch = env.steps_per_epoch();
  if (per_epoch < 1) throw ConfigError("run_search: environment has no steps per epoch");

  auto emit = [&](const char* phase, const std::vector<int>& skip, double loss,
                  const PreferenceUpdate* update) {
    if (!sink) return;
    SearchEvent ev;
    ev.step = st.step;
    ev.phase = phase;
    ev.skip = skip;
    ev.loss = loss;
    ev.update = update;
    ev.s = st.s;
    sink(ev);
  };

  for (int step = 0; step < schedule.warmup_epochs * per_epoch; ++step) {
    const std::vector<int> skip = rng.sample_subset(n, schedule.k);
    const double loss = env.train_step(skip);
    result.train_losses.push_back(loss);
    ++st.step;
    emit("warmup", skip, loss, nullptr);
  }

  for (int step = 0; step < schedule.search_epochs * per_epoch; ++step) {
    if (step % schedule.compare_every == 0) {
      PreferenceUpdate up;
      up.step = st.step;
      for (int j = 0; j < schedule.m; ++j) {
        up.policies.push_back(sample_policy(st.s, rng));
        up.skip_sets.push_back(select_skip_set(up.policies.back(), schedule.k));
      }
      up.losses = env.evaluate(up.skip_sets);
      if (up.losses.size() != up.skip_sets.size()) {
        throw ContractError("run_search: environment returned the wrong number of losses");
      }
      for (double l : up.losses) up.rewards.push_back(compute_reward(l));
      update_preferences(st, up.policies, up.skip_sets, up.rewards, schedule.reward_sign);
      st.history.push_back(std::move(up));
      emit("compare", {}, 0.0, &st.history.back());
    }
    const std::vector<int> skip = select_skip_set(sample_policy(st.s, rng), schedule.k);
    const double loss = env.train_step(skip);
    result.train_losses.push_back(loss);
    ++st.step;
    emit("search", skip, loss, nullptr);
  }

  result.skip_set = select_skip_set(st.s, schedule.k);
  return result;
}

}  // namespace easkit
