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

#include "easkit/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace easkit {

using nlohmann::json;

std::string to_string(Precision p) { return p == Precision::F32 ? "f32" : "f64"; }

Precision parse_precision(const std::string& text) {
  if (text == "f32") return Precision::F32;
  if (text == "f64") return Precision::F64;
  throw ConfigError("unknown precision '" + text + "'");
}

void RunConfig::validate() const {
  model.validate();
  task.validate_for(model);
  optimizer.validate();
  pretrain.validate();
  schedule.validate(candidate_count(candidates, model.n_layers));
  if (!seed) throw ConfigError("a seed is required (config \"seed\" or --seed)");
}

namespace {

/// Reads the keys of one object section and rejects anything unexpected.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("config section '" + name_ + "' must be an object");
  }
  void done() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.contains(key)) throw ConfigError("unknown config key '" + name_ + "." + key + "'");
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config key '" + name_ + "." + key + "': " + e.what());
    }
  }
  template <typename T, typename Parse>
  void get_enum(const char* key, T& out, Parse parse) {
    std::string s;
    get(key, s);
    if (j_.contains(key)) out = parse(s);
  }
  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

void read_optimizer(const json& j, const std::string& name, OptimizerConfig& o) {
  Section s(j, name);
  s.get("lr", o.lr);
  s.get("beta1", o.beta1);
  s.get("beta2", o.beta2);
  s.get("eps", o.eps);
  s.get("steps", o.steps);
  s.get("batch_size", o.batch_size);
  s.get("grad_clip", o.grad_clip);
  s.done();
}

json write_optimizer(const OptimizerConfig& o) {
  return {{"lr", o.lr},       {"beta1", o.beta1}, {"beta2", o.beta2},        {"eps", o.eps},
          {"steps", o.steps}, {"batch_size", o.batch_size}, {"grad_clip", o.grad_clip}};
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  RunConfig c;
  Section top(root, "config");
  if (const json* m = top.child("model")) {
    Section s(*m, "model");
    s.get("n_layers", c.model.n_layers);
    s.get("d_model", c.model.d_model);
    s.get("n_heads", c.model.n_heads);
    s.get("d_ffn", c.model.d_ffn);
    s.get("vocab", c.model.vocab);
    s.get("max_seq", c.model.max_seq);
    s.get("r_skip", c.model.r_skip);
    s.get("r_adapt", c.model.r_adapt);
    s.get("tau", c.model.tau);
    s.done();
  }
  if (const json* t = top.child("task")) {
    Section s(*t, "task");
    s.get_enum("kind", c.task.kind, parse_task_kind);
    s.get("seq_len", c.task.seq_len);
    s.get("vocab", c.task.vocab);
    s.get("train_size", c.task.train_size);
    s.get("eval_size", c.task.eval_size);
    s.get("seed", c.task.seed);
    s.done();
  }
  if (const json* t = top.child("schedule")) {
    Section s(*t, "schedule");
    s.get("warmup_epochs", c.schedule.warmup_epochs);
    s.get("search_epochs", c.schedule.search_epochs);
    s.get("compare_every", c.schedule.compare_every);
    s.get("m", c.schedule.m);
    s.get("k", c.schedule.k);
    s.get_enum("reward_sign", c.schedule.reward_sign, parse_reward_sign);
    s.done();
  }
  if (const json* t = top.child("optimizer")) read_optimizer(*t, "optimizer", c.optimizer);
  if (const json* t = top.child("pretrain")) read_optimizer(*t, "pretrain", c.pretrain);
  if (const json* t = top.child("bench")) {
    Section s(*t, "bench");
    s.get("prompt_len", c.bench.prompt_len);
    s.get("decode_steps", c.bench.decode_steps);
    s.get("reps", c.bench.reps);
    s.get("warmup", c.bench.warmup);
    s.done();
  }
  top.get_enum("candidates", c.candidates, parse_candidate_set);
  top.get_enum("precision", c.precision, parse_precision);
  if (const json* seed = top.child("seed")) {
    if (!seed->is_number_unsigned()) throw ConfigError("config key 'seed' must be an unsigned integer");
    c.seed = seed->get<std::uint64_t>();
  }
  top.get("out", c.out_dir);
  top.done();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string to_json(const RunConfig& c) {
  json j;
  j["model"] = {{"n_layers", c.model.n_layers}, {"d_model", c.model.d_model},
                {"n_heads", c.model.n_heads},   {"d_ffn", c.model.d_ffn},
                {"vocab", c.model.vocab},       {"max_seq", c.model.max_seq},
                {"r_skip", c.model.r_skip},     {"r_adapt", c.model.r_adapt},
                {"tau", c.model.tau}};
  j["task"] = {{"kind", to_string(c.task.kind)},     {"seq_len", c.task.seq_len},
               {"vocab", c.task.vocab},              {"train_size", c.task.train_size},
               {"eval_size", c.task.eval_size},      {"seed", c.task.seed}};
  j["schedule"] = {{"warmup_epochs", c.schedule.warmup_epochs},
                   {"search_epochs", c.schedule.search_epochs},
                   {"compare_every", c.schedule.compare_every},
                   {"m", c.schedule.m},
                   {"k", c.schedule.k},
                   {"reward_sign", to_string(c.schedule.reward_sign)}};
  j["optimizer"] = write_optimizer(c.optimizer);
  j["pretrain"] = write_optimizer(c.pretrain);
  j["bench"] = {{"prompt_len", c.bench.prompt_len}, {"decode_steps", c.bench.decode_steps},
                {"reps", c.bench.reps},             {"warmup", c.bench.warmup}};
  j["candidates"] = to_string(c.candidates);
  j["precision"] = to_string(c.precision);
  if (c.seed) j["seed"] = *c.seed;
  j["out"] = c.out_dir;
  return j.dump();
}

}  // namespace easkit
