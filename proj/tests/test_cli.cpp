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

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "easkit/checkpoint.hpp"
#include "easkit/cli.hpp"
#include "easkit/errors.hpp"
#include "support.hpp"

using namespace easkit;
using namespace easkit::testing;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code;
  json line;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out;
  const int code = run_command(args, out);
  json line;
  try {
    line = json::parse(out.str());
  } catch (const json::exception&) {
    line = out.str();
  }
  return {code, line};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("easkit_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Small enough for a full pipeline in a few seconds.
std::string tiny_run_config(const fs::path& out) {
  json j = {
      {"model",
       {{"n_layers", 3}, {"d_model", 16}, {"n_heads", 2}, {"d_ffn", 32}, {"vocab", 9}, {"max_seq", 16},
        {"r_skip", 4}, {"r_adapt", 2}}},
      {"task", {{"kind", "copy"}, {"seq_len", 3}, {"vocab", 8}, {"train_size", 64}, {"eval_size", 16}, {"seed", 2}}},
      {"schedule", {{"warmup_epochs", 1}, {"search_epochs", 1}, {"compare_every", 2}, {"m", 3}, {"k", 1}}},
      {"optimizer", {{"lr", 0.003}, {"steps", 20}, {"batch_size", 16}}},
      {"pretrain", {{"lr", 0.003}, {"steps", 60}, {"batch_size", 16}}},
      {"bench", {{"prompt_len", 4}, {"decode_steps", 3}, {"reps", 5}, {"warmup", 2}}},
      {"candidates", "mha"},
      {"seed", 5},
      {"out", out.string()},
  };
  return j.dump(2);
}

Checkpoint random_checkpoint(Rng& rng) {
  Checkpoint c;
  c.stage = "test";
  c.config.model = tiny_config(3, 8, 11, 16);
  c.config.seed = 9;
  c.model = Model<double>::init(c.config.model, rng);
  c.model.visit([&](const std::string&, auto& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = rng.normal() * std::exp(rng.normal(0.0, 8.0));
  });
  c.mask = SkipMask::from_indices(CandidateSet::Mha, 3, {0, 2});
  c.adapters = AdapterSet<double>::for_mask(c.config.model, c.mask, rng);
  c.adapters.add_adaptation(c.config.model, rng);
  randomize(c.adapters, rng);
  return c;
}

template <typename T>
std::vector<T> flat(const auto& holder) {
  std::vector<T> out;
  holder.visit([&](const std::string&, const auto& t) { out.insert(out.end(), t.data(), t.data() + t.size()); });
  return out;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("checkpoints round-trip bitwise") {
  Rng rng(1);
  for (int trial = 0; trial < 5; ++trial) {
    Checkpoint c = random_checkpoint(rng);
    c.preferences = PreferenceState::zeros(3);
    c.preferences->s = {0.1, -1.0 / 3.0, 1e-300};
    c.preferences->history.push_back({4, {{0.1, 0.2, 0.3}}, {{0}}, {1.5}, {std::exp(-1.5)}});
    c.eval = EvalReport{1.0 / 7.0, 0.75, 16, 48, {}};
    const fs::path dir = scratch("roundtrip");
    save_checkpoint(c, (dir / "nested" / "c.json").string());
    const Checkpoint back = load_checkpoint((dir / "nested" / "c.json").string());
    CHECK(same_bits(flat<double>(c.model), flat<double>(back.model)));
    CHECK(same_bits(flat<double>(c.adapters), flat<double>(back.adapters)));
    CHECK(back.mask == c.mask);
    CHECK(back.preferences->s == c.preferences->s);
    CHECK(back.preferences->history[0].rewards == c.preferences->history[0].rewards);
    CHECK(back.eval->loss == c.eval->loss);
    CHECK(checkpoint_to_json(back) == checkpoint_to_json(c));
  }
}

TEST_CASE("frozen adapter state survives a reload") {
  Rng rng(2);
  Checkpoint c = random_checkpoint(rng);
  auto& pia = c.adapters.skip.begin()->second;
  pia = freeze_dynamic_terms<double>(pia, random_matrix(rng, 5, c.config.model.d_model));
  const auto b_d = pia.frozen->b_d;
  const auto alpha = pia.frozen->alpha;
  const Checkpoint back = checkpoint_from_json(checkpoint_to_json(c));
  const auto& got = back.adapters.skip.begin()->second;
  REQUIRE(got.is_frozen());
  CHECK(bit_equal(got.frozen->b_d, b_d));
  CHECK(bit_equal(got.frozen->alpha, alpha));
  CHECK_FALSE(back.adapters.skip.rbegin()->second.is_frozen());
}

TEST_CASE("damaged checkpoints are rejected") {
  Rng rng(3);
  const Checkpoint c = random_checkpoint(rng);
  const std::string text = checkpoint_to_json(c);
  CHECK_THROWS_AS(checkpoint_from_json(text.substr(0, text.size() / 2)), CorruptCheckpointError);
  CHECK_THROWS_AS(checkpoint_from_json(""), CorruptCheckpointError);

  json j = json::parse(text);
  j["format_version"] = 2;
  CHECK_THROWS_AS(checkpoint_from_json(j.dump()), VersionError);

  j = json::parse(text);
  j["tensors"][0]["values"].erase(0);
  CHECK_THROWS_AS(checkpoint_from_json(j.dump()), CorruptCheckpointError);

  j = json::parse(text);
  j["tensors"][1]["shape"] = {3, 3};
  CHECK_THROWS_AS(checkpoint_from_json(j.dump()), CorruptCheckpointError);

  j = json::parse(text);
  j["tensors"].erase(2);
  CHECK_THROWS_AS(checkpoint_from_json(j.dump()), CorruptCheckpointError);

  j = json::parse(text);
  j["mask"]["indices"] = {7};
  CHECK_THROWS_AS(checkpoint_from_json(j.dump()), CorruptCheckpointError);

  CHECK_THROWS_AS(load_checkpoint("/nonexistent/easkit.ckpt.json"), MissingCheckpointError);
}

TEST_CASE("exit codes") {
  const fs::path dir = scratch("exit");
  CHECK(run({"frobnicate"}).code == kExitUsage);
  CHECK(run({}).code == kExitUsage);
  CHECK(run({"eval", "--bogus"}).code == kExitUsage);

  const Run missing = run({"eval", "--checkpoint", (dir / "none.json").string(), "--seed", "1"});
  CHECK(missing.code == kExitMissingCheckpoint);
  CHECK(missing.line["ok"] == false);
  CHECK(missing.line["exit_code"] == kExitMissingCheckpoint);

  write_file(dir / "bad.json", "{\"model\": ");
  CHECK(run({"pretrain", "--config", (dir / "bad.json").string()}).code == kExitBadConfig);
  write_file(dir / "unknown.json", "{\"seed\": 1, \"modle\": {}}");
  CHECK(run({"pretrain", "--config", (dir / "unknown.json").string()}).code == kExitBadConfig);
  write_file(dir / "noseed.json", "{}");
  CHECK(run({"pretrain", "--config", (dir / "noseed.json").string()}).code == kExitBadConfig);

  write_file(dir / "trunc.json", "{\"format_version\": 1, \"stage\":");
  CHECK(run({"eval", "--checkpoint", (dir / "trunc.json").string()}).code == kExitCorruptCheckpoint);
  write_file(dir / "future.json", "{\"format_version\": 99}");
  CHECK(run({"eval", "--checkpoint", (dir / "future.json").string()}).code == kExitVersion);

  write_file(dir / "cfg.json", tiny_run_config(dir));
  CHECK(run({"search", "--config", (dir / "cfg.json").string()}).code == kExitMissingCheckpoint);
  CHECK(run({"pretrain", "--config", (dir / "cfg.json").string(), "--candidates", "heads"}).code ==
        kExitBadConfig);
}

TEST_CASE("pipeline: pretrain, search, skip, tune, fuse, eval") {
  const fs::path dir = scratch("pipeline");
  write_file(dir / "cfg.json", tiny_run_config(dir));
  const std::string cfg = (dir / "cfg.json").string();

  const Run pre = run({"pretrain", "--config", cfg});
  REQUIRE(pre.code == kExitOk);
  CHECK(pre.line["ok"] == true);
  CHECK(fs::exists(dir / "pretrain_loss.jsonl"));
  const std::string pre_ckpt = pre.line["checkpoint"];

  const Run again = run({"eval", "--checkpoint", pre_ckpt});
  REQUIRE(again.code == kExitOk);
  CHECK(again.line["accuracy"] == pre.line["accuracy"]);
  CHECK(again.line["matches_saved"] == true);

  const Run search = run({"search", "--checkpoint", pre_ckpt});
  REQUIRE(search.code == kExitOk);
  CHECK(search.line["skip_set"].size() == 1);
  CHECK(search.line["preferences"].size() == 3);
  CHECK(fs::exists(dir / "search_trace.jsonl"));

  const Run skip = run({"skip", "--checkpoint", search.line["checkpoint"]});
  REQUIRE(skip.code == kExitOk);
  CHECK(skip.line["skip_set"] == search.line["skip_set"]);

  const Run tune = run({"tune", "--checkpoint", skip.line["checkpoint"]});
  REQUIRE(tune.code == kExitOk);
  const std::string tuned = tune.line["checkpoint"];

  const Run eval = run({"eval", "--checkpoint", tuned});
  REQUIRE(eval.code == kExitOk);
  CHECK(eval.line["matches_saved"] == true);
  CHECK(eval.line["accuracy"] == tune.line["accuracy"]);

  const Run fuse = run({"fuse", "--checkpoint", tuned});
  REQUIRE(fuse.code == kExitOk);
  CHECK(fuse.line["decode_flops_fused"].get<std::int64_t>() < fuse.line["decode_flops_eager"].get<std::int64_t>());
  const Run fused_eval = run({"eval", "--checkpoint", fuse.line["checkpoint"]});
  REQUIRE(fused_eval.code == kExitOk);
  CHECK(fused_eval.line["decode_mode"] == "fuse-after-first");
  CHECK(fused_eval.line["tokens_hash"] == eval.line["tokens_hash"]);
  CHECK(fused_eval.line["accuracy"] == eval.line["accuracy"]);

  const Run bench = run({"bench", "--checkpoint", fuse.line["checkpoint"]});
  REQUIRE(bench.code == kExitOk);
  CHECK(fs::exists(dir / "latency.json"));

  const Run sweep = run({"sweep", "--checkpoint", search.line["checkpoint"], "--k", "2"});
  REQUIRE(sweep.code == kExitOk);
  CHECK(sweep.line["points"].size() == 3);

  const Run f32 = run({"eval", "--checkpoint", tuned, "--precision", "f32"});
  REQUIRE(f32.code == kExitOk);
  CHECK(f32.line["precision"] == "f32");
}

TEST_CASE("a fixed seed reproduces the pipeline") {
  std::vector<json> lines;
  for (int rep = 0; rep < 2; ++rep) {
    const fs::path dir = scratch("repro" + std::to_string(rep));
    write_file(dir / "cfg.json", tiny_run_config(dir));
    const Run pre = run({"pretrain", "--config", (dir / "cfg.json").string(), "--seed", "11"});
    REQUIRE(pre.code == kExitOk);
    const Run search = run({"search", "--checkpoint", pre.line["checkpoint"]});
    REQUIRE(search.code == kExitOk);
    lines.push_back({pre.line["final_loss"], search.line["preferences"]});
  }
  CHECK(lines[0] == lines[1]);
}

TEST_CASE("oracle enumerates every mask") {
  const fs::path dir = scratch("oracle");
  write_file(dir / "cfg.json", tiny_run_config(dir));
  const Run r = run({"oracle", "--config", (dir / "cfg.json").string(), "--layers", "6", "--k", "2",
                     "--steps", "2"});
  REQUIRE(r.code == kExitOk);
  CHECK(r.line["masks"] == 15);
  std::istringstream csv(read_file(dir / "oracle.csv"));
  std::string row;
  std::getline(csv, row);
  CHECK(row == "rank,skip_set,eval_loss,accuracy");
  int rows = 0;
  double prev = -1.0;
  while (std::getline(csv, row)) {
    ++rows;
    const auto last = row.rfind(',');
    const auto loss_at = row.rfind(',', last - 1);
    const double loss = std::stod(row.substr(loss_at + 1, last - loss_at - 1));
    CHECK(loss >= prev);
    prev = loss;
  }
  CHECK(rows == 15);
}

TEST_CASE("config parsing") {
  const RunConfig c = parse_run_config(tiny_run_config("x"));
  CHECK(c.model.n_layers == 3);
  CHECK(c.optimizer.steps == 20);
  CHECK(*c.seed == 5);
  CHECK(parse_run_config(to_json(c)).model.d_model == 16);
  CHECK_THROWS_AS(parse_run_config("{\"seed\": 1, \"model\": {\"d_model\": \"wide\"}}"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("{\"seed\": 1, \"model\": {\"d_model\": 10, \"n_heads\": 4}}").validate(),
                  ConfigError);
  CHECK_THROWS_AS(parse_run_config("{}").validate(), ConfigError);
}
