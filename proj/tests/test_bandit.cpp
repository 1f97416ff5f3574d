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

#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>

#include "easkit/errors.hpp"
#include "easkit/trainer.hpp"
#include "planted.hpp"
#include "support.hpp"

using namespace easkit;
using namespace easkit::testing;

namespace {

std::vector<double> random_prefs(Rng& rng, int n, double scale = 2.0) {
  std::vector<double> s(static_cast<size_t>(n));
  for (auto& v : s) v = rng.normal(0.0, scale);
  return s;
}

}  // namespace

TEST_CASE("sample_policy") {
  Rng rng(42);
  const std::vector<double> flat{0, 0, 0};
  for (int i = 0; i < 1000; ++i) {
    for (double p : sample_policy(flat, rng)) {
      CHECK(p >= 0.0);
      CHECK(p <= 1.0 / 3.0);
    }
  }

  const std::vector<double> sunk{0, 0, -30, 0};
  int chosen = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto pi = sample_policy(sunk, rng);
    CHECK(pi[2] <= softmax_bounds(sunk)[2]);
    chosen += select_skip_set(pi, 1) == std::vector<int>{2};
  }
  CHECK(chosen == 1000);

  Rng a(42), b(42);
  const std::vector<double> s{0.3, -1.0, 2.0, 0.0};
  CHECK(sample_policy(s, a) == sample_policy(s, b));
}

TEST_CASE("sample_policy respects its bounds for random preferences") {
  Rng rng(1);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 1 + static_cast<int>(rng.uniform_index(12));
    const auto s = random_prefs(rng, n, 5.0);
    const auto bound = softmax_bounds(s);
    const auto pi = sample_policy(s, rng);
    REQUIRE(pi.size() == s.size());
    for (size_t i = 0; i < pi.size(); ++i) {
      CHECK(pi[i] >= 0.0);
      CHECK(pi[i] <= bound[i]);
    }
  }
}

TEST_CASE("select_skip_set") {
  const std::vector<double> pi{0.1, 0.3, 0.2};
  CHECK(select_skip_set(pi, 1) == std::vector<int>{0});
  CHECK(select_skip_set(pi, 2) == std::vector<int>{0, 2});
  CHECK(select_skip_set(std::vector<double>{0.2, 0.2, 0.5}, 1) == std::vector<int>{0});
  CHECK(select_skip_set(pi, 0).empty());
  CHECK(select_skip_set(pi, 3) == std::vector<int>{0, 1, 2});
  CHECK_THROWS_AS(select_skip_set(pi, 4), DomainError);
}

TEST_CASE("select_skip_set is the subset-sum argmin") {
  Rng rng(2);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 1 + static_cast<int>(rng.uniform_index(8));
    const int k = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(n + 1)));
    std::vector<double> pi(static_cast<size_t>(n));
    // Coarse values force ties.
    for (auto& v : pi) v = static_cast<double>(rng.uniform_index(4)) / 4.0;
    const auto rho = select_skip_set(pi, k);
    REQUIRE(static_cast<int>(rho.size()) == k);
    CHECK(std::is_sorted(rho.begin(), rho.end()));
    double best = std::numeric_limits<double>::infinity();
    std::vector<int> best_set;
    for (unsigned bits = 0; bits < (1u << n); ++bits) {
      if (std::popcount(bits) != k) continue;
      double sum = 0.0;
      std::vector<int> set;
      for (int i = 0; i < n; ++i) {
        if (bits & (1u << i)) {
          sum += pi[static_cast<size_t>(i)];
          set.push_back(i);
        }
      }
      // Among equal sums prefer the lexicographically smallest set.
      if (sum < best || (sum == best && set < best_set)) {
        best = sum;
        best_set = set;
      }
    }
    CHECK(rho == best_set);
    for (int i : rho) {
      for (int j = 0; j < n; ++j) {
        if (std::find(rho.begin(), rho.end(), j) == rho.end()) CHECK(pi[i] <= pi[j]);
      }
    }
  }
}

TEST_CASE("compute_reward") {
  CHECK(compute_reward(0.0) == 1.0);
  CHECK(compute_reward(std::log(2.0)) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(std::abs(compute_reward(1.0) - 0.3679) <= 1e-4);
  CHECK(compute_reward(2.0) < compute_reward(1.0));
  CHECK_THROWS_AS(compute_reward(std::nan("")), DiagnosticError);
  CHECK_THROWS_AS(compute_reward(INFINITY), DiagnosticError);
}

TEST_CASE("update_preferences") {
  auto st = PreferenceState::zeros(3);
  st.s = {0.5, -0.2, 1.0};
  const auto before = st.s;
  update_preferences(st, {{0.1, 0.2, 0.3}, {0.3, 0.1, 0.2}}, {{0}, {1}}, std::vector<double>{0.4, 0.4},
                     RewardSign::Advantage);
  CHECK(st.s == before);

  // Two subnetworks with rewards e^-1 and e^-2; the second keeps arm 0 active.
  auto two = PreferenceState::zeros(2);
  const std::vector<double> r{0.3679, 0.1353};
  update_preferences(two, {{0.9, 0.5}, {0.2, 0.5}}, {{0}, {1}}, r, RewardSign::Advantage);
  const double mean = (0.3679 + 0.1353) / 2;
  CHECK(std::abs((0.1353 - mean) * 0.2 * 0.8 - -0.0186) <= 1e-4);
  CHECK(std::abs(two.s[0] - -0.0186) <= 1e-4);
  CHECK(std::abs(two.s[1] - (0.3679 - mean) * 0.25) <= 1e-12);

  auto literal = PreferenceState::zeros(2);
  update_preferences(literal, {{0.9, 0.5}, {0.2, 0.5}}, {{0}, {1}}, r, RewardSign::PaperLiteral);
  CHECK(literal.s[0] == -two.s[0]);
  CHECK(literal.s[1] == -two.s[1]);

  auto edge = PreferenceState::zeros(3);
  update_preferences(edge, {{0.0, 1.0, 0.0}, {1.0, 0.0, 1.0}}, {{}, {}}, std::vector<double>{0.9, 0.1},
                     RewardSign::Advantage);
  CHECK(edge.s == std::vector<double>{0, 0, 0});

  auto bad = PreferenceState::zeros(3);
  CHECK_THROWS_AS(update_preferences(bad, {{0.1, 0.2, 0.3}}, {{0}, {1}}, std::vector<double>{0.1},
                                     RewardSign::Advantage),
                  ContractError);
  CHECK_THROWS_AS(update_preferences(bad, {{0.1, 0.2}}, {{0}}, std::vector<double>{0.1},
                                     RewardSign::Advantage),
                  ContractError);
}

TEST_CASE("softmax bounds are shift invariant") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng.uniform_index(10));
    const auto s = random_prefs(rng, n);
    auto shifted = s;
    const double c = rng.normal(0.0, 50.0);
    for (auto& v : shifted) v += c;
    const auto a = softmax_bounds(s);
    const auto b = softmax_bounds(shifted);
    for (size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-12);
    Rng r1(trial), r2(trial);
    const int k = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(n)));
    CHECK(select_skip_set(sample_policy(s, r1), k) == select_skip_set(sample_policy(shifted, r2), k));
  }
}

TEST_CASE("preference steps are bounded and skipped arms untouched") {
  Rng rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_index(8));
    const int m = 2 + static_cast<int>(rng.uniform_index(4));
    const int k = 1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(n - 1)));
    PreferenceState st;
    st.s = random_prefs(rng, n);
    std::vector<std::vector<double>> pols;
    std::vector<std::vector<int>> sets;
    std::vector<double> rewards;
    for (int j = 0; j < m; ++j) {
      pols.push_back(sample_policy(st.s, rng));
      sets.push_back(select_skip_set(pols.back(), k));
      rewards.push_back(compute_reward(rng.uniform(0.0, 5.0)));
    }
    const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / m;
    for (int j = 0; j < m; ++j) {
      PreferenceState one = st;
      // Single-subnetwork contribution with the mean of the whole comparison.
      const double adv = rewards[j] - mean;
      auto before = one.s;
      for (int i = 0; i < n; ++i) {
        const bool skipped = std::find(sets[j].begin(), sets[j].end(), i) != sets[j].end();
        const double p = pols[j][i];
        if (!skipped) one.s[i] += adv * p * (1 - p);
      }
      for (int i = 0; i < n; ++i) {
        CHECK(std::abs(one.s[i] - before[i]) <= std::abs(adv) / 4 + 1e-15);
        CHECK(std::abs(one.s[i] - before[i]) < 0.25);
      }
    }
    // The engine's accumulated update equals the hand sum and leaves arms
    // skipped by every subnetwork bit-identical.
    PreferenceState engine = st;
    update_preferences(engine, pols, sets, rewards, RewardSign::Advantage);
    for (int i = 0; i < n; ++i) {
      double expect = st.s[i];
      bool always_skipped = true;
      for (int j = 0; j < m; ++j) {
        if (std::find(sets[j].begin(), sets[j].end(), i) != sets[j].end()) continue;
        always_skipped = false;
        expect += (rewards[j] - mean) * pols[j][i] * (1 - pols[j][i]);
      }
      CHECK(engine.s[i] == expect);
      if (always_skipped) CHECK(std::memcmp(&engine.s[i], &st.s[i], sizeof(double)) == 0);
    }
  }
}

TEST_CASE("schedule validation") {
  SearchSchedule s;
  s.k = 0;
  CHECK_THROWS_AS(s.validate(4), ConfigError);
  s.k = 4;
  CHECK_THROWS_AS(s.validate(4), ConfigError);
  s.k = 2;
  s.m = 1;
  CHECK_THROWS_AS(s.validate(4), ConfigError);
  s.m = 3;
  CHECK_NOTHROW(s.validate(4));

  PlantedEnvironment env(4, {0}, 1.0, 0.0, 1);
  SearchSchedule zero;
  zero.k = 0;
  Rng rng(1);
  CHECK_THROWS_AS(run_search(env, zero, rng), ConfigError);
  CHECK(parse_reward_sign(to_string(RewardSign::PaperLiteral)) == RewardSign::PaperLiteral);
}

TEST_CASE("run_search follows the schedule") {
  PlantedEnvironment env(5, {0}, 1.0, 0.05, 3);
  SearchSchedule s;
  s.warmup_epochs = 2;
  s.search_epochs = 3;
  s.compare_every = 10;
  s.k = 2;
  Rng rng(9);
  int warm = 0, search = 0, compare = 0;
  const auto r = run_search(env, s, rng, [&](const SearchEvent& e) {
    if (e.phase == "warmup") ++warm;
    if (e.phase == "search") ++search;
    if (e.phase == "compare") {
      ++compare;
      CHECK(e.update != nullptr);
      CHECK(e.update->skip_sets.size() == 3);
    }
    CHECK(!to_json_line(e).empty());
  });
  CHECK(warm == 200);
  CHECK(search == 300);
  CHECK(compare == 30);
  CHECK(r.state.history.size() == 30);
  CHECK(r.train_losses.size() == 500);
  CHECK(r.skip_set.size() == 2);
  CHECK(r.state.step == 500);

  PlantedEnvironment env2(5, {0}, 1.0, 0.05, 3);
  Rng rng2(9);
  const auto again = run_search(env2, s, rng2);
  CHECK(again.state.s == r.state.s);
}

TEST_CASE("planted important arms are kept") {
  int hits = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) hits += planted_run_excludes_important(seed);
  CHECK(hits >= 9);
}

TEST_CASE("the search engine runs over every candidate set") {
  Rng rng(5);
  TaskSpec spec;
  spec.kind = TaskKind::Copy;
  spec.seq_len = 3;
  spec.vocab = 8;
  spec.train_size = 32;
  spec.eval_size = 8;
  spec.seed = 5;
  const Dataset data = make_task(spec);
  const auto cfg = tiny_config(3, 8, 9, 8);
  for (CandidateSet set : {CandidateSet::Mha, CandidateSet::Ffn, CandidateSet::Either, CandidateSet::Layer}) {
    auto model = Model<double>::init(cfg, rng);
    auto adapters = AdapterSet<double>::for_candidates(cfg, set, rng);
    OptimizerConfig opt;
    opt.batch_size = 8;
    TrainingSession<double> session(model, adapters, TrainableSet::adapters_only(), opt,
                                    spec.freeze_position());
    ModelSearchEnvironment<double> env(session, data, set, 3, 11);
    SearchSchedule s;
    s.warmup_epochs = 1;
    s.search_epochs = 2;
    s.compare_every = 2;
    s.k = 1;
    const auto r = run_search(env, s, rng);
    CHECK(static_cast<int>(r.state.s.size()) == candidate_count(set, 3));
    CHECK(r.skip_set.size() == 1);
    for (double v : r.state.s) CHECK(std::isfinite(v));
  }
}

TEST_CASE("copy-task search with six layers skipping two") {
  Rng rng(6);
  TaskSpec spec;
  spec.kind = TaskKind::Copy;
  spec.seq_len = 4;
  spec.vocab = 16;
  spec.train_size = 256;
  spec.seed = 6;
  const Dataset data = make_task(spec);
  ModelConfig cfg = tiny_config(6, 16, 17, 12);
  cfg.r_skip = 4;
  auto model = Model<double>::init(cfg, rng);
  auto adapters = AdapterSet<double>::for_candidates(cfg, CandidateSet::Mha, rng);
  OptimizerConfig opt;
  opt.lr = 3e-3;
  TrainingSession<double> session(model, adapters, TrainableSet::adapters_only(), opt,
                                  spec.freeze_position());
  ModelSearchEnvironment<double> env(session, data, CandidateSet::Mha, 6, 12);
  SearchSchedule s;
  s.warmup_epochs = 3;
  s.search_epochs = 3;
  s.compare_every = 4;
  s.k = 2;
  const auto r = run_search(env, s, rng);
  CHECK(r.skip_set.size() == 2);
  const auto& l = r.train_losses;
  REQUIRE(l.size() == 96);
  for (double v : l) CHECK(std::isfinite(v));
  const double head = std::accumulate(l.begin(), l.begin() + 16, 0.0) / 16;
  const double tail = std::accumulate(l.end() - 16, l.end(), 0.0) / 16;
  MESSAGE("smoothed loss " << head << " -> " << tail);
  CHECK(tail < head);
}
