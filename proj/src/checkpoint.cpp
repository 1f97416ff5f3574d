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

#include "easkit/checkpoint.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace easkit {

using nlohmann::json;

std::string to_string(DecodeMode mode) {
  return mode == DecodeMode::AlwaysEager ? "always-eager" : "fuse-after-first";
}

DecodeMode parse_decode_mode(const std::string& text) {
  if (text == "always-eager") return DecodeMode::AlwaysEager;
  if (text == "fuse-after-first") return DecodeMode::FuseAfterFirst;
  throw ConfigError("unknown decode mode '" + text + "'");
}

namespace {

template <typename Tensor>
json tensor_json(const std::string& name, const Tensor& t) {
  std::vector<double> values(t.data(), t.data() + t.size());
  return {{"name", name}, {"shape", {t.rows(), t.cols()}}, {"values", std::move(values)}};
}

template <typename Tensor>
void fill_tensor(const std::string& name, Tensor& t, const std::map<std::string, const json*>& pool) {
  auto it = pool.find(name);
  if (it == pool.end()) throw CorruptCheckpointError("checkpoint lacks tensor '" + name + "'");
  const json& j = *it->second;
  const auto shape = j.at("shape").get<std::vector<long>>();
  const auto& values = j.at("values");
  if (shape.size() != 2 || shape[0] < 0 || shape[1] < 0) {
    throw CorruptCheckpointError("tensor '" + name + "' has a malformed shape");
  }
  if (values.size() != static_cast<size_t>(shape[0] * shape[1])) {
    throw CorruptCheckpointError("tensor '" + name + "' holds " + std::to_string(values.size()) +
                                 " values for shape " + std::to_string(shape[0]) + "x" +
                                 std::to_string(shape[1]));
  }
  if (shape[0] != t.rows() || shape[1] != t.cols()) {
    throw CorruptCheckpointError("tensor '" + name + "' shape " + std::to_string(shape[0]) + "x" +
                                 std::to_string(shape[1]) + " does not match the config");
  }
  for (size_t i = 0; i < values.size(); ++i) t.data()[i] = values[i].get<double>();
}

json row_json(const RowVector<double>& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

RowVector<double> row_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  RowVector<double> out(static_cast<Eigen::Index>(v.size()));
  for (size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = v[i];
  return out;
}

json candidate_json(Candidate c) { return {{"layer", c.layer}, {"kind", to_string(c.kind)}}; }

Candidate candidate_from(const json& j) {
  return {j.at("layer").get<int>(), parse_module_kind(j.at("kind").get<std::string>())};
}

json pia_meta(const PiaParams<double>& p) {
  json j = {{"mode", to_string(p.mode)}, {"tau", p.tau}, {"rank", p.rank()}, {"dim", p.dim()}};
  if (p.frozen) {
    j["frozen"] = {{"b_d", row_json(p.frozen->b_d)}, {"alpha", row_json(p.frozen->alpha)}};
  }
  return j;
}

PiaParams<double> pia_from(const json& j, const std::string& prefix,
                           const std::map<std::string, const json*>& pool) {
  auto p = PiaParams<double>::zeros(parse_pia_mode(j.at("mode").get<std::string>()),
                                    j.at("dim").get<int>(), j.at("rank").get<int>(),
                                    j.at("tau").get<double>());
  p.visit(prefix, [&](const std::string& name, auto& t) { fill_tensor(name, t, pool); });
  if (j.contains("frozen")) {
    p.frozen = FrozenTerms<double>{row_from(j.at("frozen").at("b_d")),
                                   row_from(j.at("frozen").at("alpha"))};
  }
  return p;
}

}  // namespace

std::string checkpoint_to_json(const Checkpoint& c) {
  json j;
  j["format_version"] = c.format_version;
  j["stage"] = c.stage;
  j["config"] = json::parse(to_json(c.config));
  json tensors = json::array();
  c.model.visit([&](const std::string& name, const auto& t) { tensors.push_back(tensor_json(name, t)); });
  c.adapters.visit([&](const std::string& name, const auto& t) { tensors.push_back(tensor_json(name, t)); });
  j["tensors"] = std::move(tensors);
  json skip = json::array();
  for (const auto& [cand, pia] : c.adapters.skip) {
    json e = pia_meta(pia);
    e["slot"] = candidate_json(cand);
    skip.push_back(std::move(e));
  }
  json adapt = json::array();
  for (const auto& [layer, pia] : c.adapters.adapt) {
    json e = pia_meta(pia);
    e["layer"] = layer;
    adapt.push_back(std::move(e));
  }
  j["adapters"] = {{"skip", std::move(skip)}, {"adapt", std::move(adapt)}};
  j["mask"] = {{"candidates", to_string(c.mask.candidate_set())},
               {"n_layers", c.mask.n_layers()},
               {"indices", c.mask.indices()}};
  if (c.preferences) {
    json hist = json::array();
    for (const auto& u : c.preferences->history) {
      hist.push_back({{"step", u.step},
                      {"policies", u.policies},
                      {"skip_sets", u.skip_sets},
                      {"losses", u.losses},
                      {"rewards", u.rewards}});
    }
    j["preferences"] = {{"s", c.preferences->s}, {"step", c.preferences->step}, {"history", hist}};
  }
  j["decode_mode"] = to_string(c.decode_mode);
  if (c.eval) {
    j["eval"] = {{"loss", c.eval->loss},
                 {"accuracy", c.eval->accuracy},
                 {"examples", c.eval->examples},
                 {"positions", c.eval->positions}};
  }
  return j.dump();
}

Checkpoint checkpoint_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw CorruptCheckpointError(std::string("unreadable checkpoint: ") + e.what());
  }
  try {
    if (!j.is_object() || !j.contains("format_version")) {
      throw CorruptCheckpointError("checkpoint has no format_version");
    }
    const int version = j.at("format_version").get<int>();
    if (version != kCheckpointVersion) {
      throw VersionError("checkpoint format_version " + std::to_string(version) +
                         " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
    }
    Checkpoint c;
    c.format_version = version;
    c.stage = j.at("stage").get<std::string>();
    c.config = parse_run_config(j.at("config").dump());
    std::map<std::string, const json*> pool;
    for (const auto& t : j.at("tensors")) {
      const std::string name = t.at("name").get<std::string>();
      if (!pool.emplace(name, &t).second) {
        throw CorruptCheckpointError("duplicate tensor '" + name + "'");
      }
    }
    c.model = Model<double>::zeros(c.config.model);
    c.model.visit([&](const std::string& name, auto& t) { fill_tensor(name, t, pool); });
    for (const auto& e : j.at("adapters").at("skip")) {
      const Candidate cand = candidate_from(e.at("slot"));
      c.adapters.skip.emplace(cand, pia_from(e, AdapterSet<double>::skip_prefix(cand), pool));
    }
    for (const auto& e : j.at("adapters").at("adapt")) {
      const int layer = e.at("layer").get<int>();
      c.adapters.adapt.emplace(layer, pia_from(e, AdapterSet<double>::adapt_prefix(layer), pool));
    }
    size_t used = 0;
    c.model.visit([&](const std::string&, const auto&) { ++used; });
    c.adapters.visit([&](const std::string&, const auto&) { ++used; });
    if (used != pool.size()) throw CorruptCheckpointError("checkpoint holds unclaimed tensors");
    const json& m = j.at("mask");
    c.mask = SkipMask::from_indices(parse_candidate_set(m.at("candidates").get<std::string>()),
                                    m.at("n_layers").get<int>(),
                                    m.at("indices").get<std::vector<int>>());
    if (j.contains("preferences")) {
      const json& p = j.at("preferences");
      PreferenceState st;
      st.s = p.at("s").get<std::vector<double>>();
      st.step = p.at("step").get<int>();
      for (const auto& u : p.at("history")) {
        PreferenceUpdate up;
        up.step = u.at("step").get<int>();
        up.policies = u.at("policies").get<std::vector<std::vector<double>>>();
        up.skip_sets = u.at("skip_sets").get<std::vector<std::vector<int>>>();
        up.losses = u.at("losses").get<std::vector<double>>();
        up.rewards = u.at("rewards").get<std::vector<double>>();
        st.history.push_back(std::move(up));
      }
      c.preferences = std::move(st);
    }
    c.decode_mode = parse_decode_mode(j.at("decode_mode").get<std::string>());
    if (j.contains("eval")) {
      const json& e = j.at("eval");
      c.eval = EvalReport{e.at("loss").get<double>(), e.at("accuracy").get<double>(),
                          e.at("examples").get<int>(), e.at("positions").get<int>(), {}};
    }
    for (auto& [cand, pia] : c.adapters.skip) pia.validate();
    for (auto& [layer, pia] : c.adapters.adapt) pia.validate();
    return c;
  } catch (const json::exception& e) {
    throw CorruptCheckpointError(std::string("malformed checkpoint: ") + e.what());
  } catch (const ConfigError& e) {
    throw CorruptCheckpointError(std::string("checkpoint config: ") + e.what());
  } catch (const ContractError& e) {
    throw CorruptCheckpointError(std::string("checkpoint mask: ") + e.what());
  } catch (const IndexError& e) {
    throw CorruptCheckpointError(std::string("checkpoint mask: ") + e.what());
  } catch (const ShapeError& e) {
    throw CorruptCheckpointError(std::string("checkpoint adapter: ") + e.what());
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot write checkpoint '" + path + "'");
  out << checkpoint_to_json(ckpt) << '\n';
  if (!out) throw InputError("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  if (!std::filesystem::exists(path)) {
    throw MissingCheckpointError("checkpoint '" + path + "' does not exist");
  }
  std::ifstream in(path);
  if (!in) throw MissingCheckpointError("cannot open checkpoint '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_json(ss.str());
}

}  // namespace easkit
