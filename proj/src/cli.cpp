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

#include "easkit/cli.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "easkit/bandit.hpp"
#include "easkit/checkpoint.hpp"
#include "easkit/config.hpp"
#include "easkit/profiler.hpp"
#include "easkit/trainer.hpp"

namespace easkit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliOptions {
  std::string command;
  std::string config_path;
  std::string checkpoint;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::string candidates;
  std::string reward_sign;
  std::string precision;
  std::optional<int> k;
  std::optional<int> layers;
  std::optional<int> steps;
  std::string skip;
};

class JsonLines {
 public:
  explicit JsonLines(const fs::path& path) : out_(path, std::ios::trunc) {
    if (!out_) throw InputError("cannot write '" + path.string() + "'");
  }
  void write(const json& j) { out_ << j.dump() << '\n'; }
  void write(const std::string& line) { out_ << line << '\n'; }

 private:
  std::ofstream out_;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  out << text << '\n';
}

std::vector<int> parse_index_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("--skip expects comma-separated candidate indices, got '" + text + "'");
    }
  }
  return out;
}

/// Config precedence: --config file, else the checkpoint's config, else
/// defaults; flags override either. The model section always follows the
/// checkpoint when one is given.
RunConfig resolve_config(const CliOptions& o, const Checkpoint* ckpt) {
  RunConfig cfg;
  if (!o.config_path.empty()) {
    cfg = load_run_config(o.config_path);
  } else if (ckpt) {
    cfg = ckpt->config;
  }
  if (ckpt) cfg.model = ckpt->config.model;
  if (o.seed) cfg.seed = o.seed;
  if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
  if (!o.candidates.empty()) cfg.candidates = parse_candidate_set(o.candidates);
  if (!o.reward_sign.empty()) cfg.schedule.reward_sign = parse_reward_sign(o.reward_sign);
  if (!o.precision.empty()) cfg.precision = parse_precision(o.precision);
  if (o.k) cfg.schedule.k = *o.k;
  if (o.steps) cfg.optimizer.steps = *o.steps;
  if (o.layers) {
    if (ckpt && ckpt->config.model.n_layers != *o.layers) {
      throw ConfigError("--layers " + std::to_string(*o.layers) + " disagrees with the checkpoint");
    }
    cfg.model.n_layers = *o.layers;
  }
  cfg.validate();
  return cfg;
}

template <typename S>
struct Loaded {
  Model<S> model;
  AdapterSet<S> adapters;
};

template <typename S>
Loaded<S> narrow(const Checkpoint& c) {
  return {cast_model<S>(c.model), cast_adapters<S>(c.adapters)};
}

template <typename S>
Checkpoint make_checkpoint(const std::string& stage, const RunConfig& cfg, const Model<S>& model,
                           const AdapterSet<S>& adapters, const SkipMask& mask) {
  Checkpoint c;
  c.stage = stage;
  c.config = cfg;
  c.model = cast_model<double>(model);
  c.adapters = cast_adapters<double>(adapters);
  c.mask = mask;
  return c;
}

json eval_json(const EvalReport& r) {
  return {{"eval_loss", r.loss}, {"accuracy", r.accuracy}, {"examples", r.examples}};
}

std::uint64_t token_hash(const std::vector<std::vector<int>>& seqs) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& s : seqs) {
    for (int t : s) {
      h ^= static_cast<std::uint64_t>(t) + 1;
      h *= 1099511628211ULL;
    }
    h ^= 0xff;
    h *= 1099511628211ULL;
  }
  return h;
}

const Checkpoint& need(const std::optional<Checkpoint>& c, const std::string& command) {
  if (!c) throw MissingCheckpointError(command + " requires --checkpoint");
  return *c;
}

fs::path out_path(const RunConfig& cfg, const std::string& file) {
  fs::create_directories(cfg.out_dir);
  return fs::path(cfg.out_dir) / file;
}

/// Skip adapters exactly for the slots of `mask`, reusing trained ones.
template <typename S>
AdapterSet<S> adapters_for(const AdapterSet<S>& have, const ModelConfig& mc, const SkipMask& mask,
                           Rng& rng) {
  AdapterSet<S> out;
  out.adapt = have.adapt;
  const AdapterSet<S> fresh = AdapterSet<S>::for_mask(mc, mask, rng);
  for (const Candidate& c : mask.skipped()) {
    const auto* p = have.skip_pia(c);
    out.skip.emplace(c, p ? *p : *fresh.skip_pia(c));
  }
  return out;
}

template <typename S>
EvalReport tune_and_eval(Model<S>& model, AdapterSet<S>& adapters, const SkipMask& mask,
                         const Dataset& data, const RunConfig& cfg, JsonLines* trace) {
  TrainOptions opts;
  opts.trainable = TrainableSet::adapters_only();
  opts.mask = mask;
  opts.seed = *cfg.seed;
  opts.threads = thread_budget();
  if (trace) opts.on_step = [&](int s, double l) { trace->write(json{{"step", s}, {"loss", l}}); };
  train(model, adapters, data, cfg.optimizer, opts);
  return evaluate<S>(model, &adapters, mask, data.eval, data.spec, DecodeMode::AlwaysEager);
}

template <typename S>
json cmd_pretrain(const RunConfig& cfg) {
  Rng rng(*cfg.seed);
  Model<S> model = Model<S>::init(cfg.model, rng);
  AdapterSet<S> none;
  const Dataset data = make_task(cfg.task);
  JsonLines trace(out_path(cfg, "pretrain_loss.jsonl"));
  TrainOptions opts;
  opts.trainable = TrainableSet::everything();
  opts.mask = SkipMask(cfg.candidates, cfg.model.n_layers);
  opts.seed = *cfg.seed;
  opts.threads = thread_budget();
  opts.on_step = [&](int s, double l) { trace.write(json{{"step", s}, {"loss", l}}); };
  const TrainResult tr = train(model, none, data, cfg.pretrain, opts);
  const EvalReport ev = evaluate<S>(model, nullptr, opts.mask, data.eval, data.spec);
  Checkpoint c = make_checkpoint("pretrain", cfg, model, none, opts.mask);
  c.eval = ev;
  const fs::path path = out_path(cfg, "pretrain.ckpt.json");
  save_checkpoint(c, path.string());
  json j = eval_json(ev);
  j["steps"] = tr.loss_curve.size();
  j["first_loss"] = tr.loss_curve.empty() ? 0.0 : tr.loss_curve.front();
  j["final_loss"] = tr.loss_curve.empty() ? 0.0 : tr.loss_curve.back();
  j["checkpoint"] = path.string();
  return j;
}

template <typename S>
json cmd_search(const RunConfig& cfg, const Checkpoint& in) {
  auto [model, adapters] = narrow<S>(in);
  Rng rng(*cfg.seed);
  adapters.skip = AdapterSet<S>::for_candidates(cfg.model, cfg.candidates, rng).skip;
  const Dataset data = make_task(cfg.task);
  TrainingSession<S> session(model, adapters, TrainableSet::adapters_only(), cfg.optimizer,
                             data.spec.freeze_position(), thread_budget());
  ModelSearchEnvironment<S> env(session, data, cfg.candidates, cfg.model.n_layers,
                                rng.fork_seed());
  JsonLines trace(out_path(cfg, "search_trace.jsonl"));
  const SearchResult res = run_search(env, cfg.schedule, rng,
                                      [&](const SearchEvent& e) { trace.write(to_json_line(e)); });
  const SkipMask mask = SkipMask::from_indices(cfg.candidates, cfg.model.n_layers, res.skip_set);
  Checkpoint c = make_checkpoint("search", cfg, model, adapters, mask);
  c.preferences = res.state;
  const fs::path path = out_path(cfg, "search.ckpt.json");
  save_checkpoint(c, path.string());
  return {{"skip_set", res.skip_set},
          {"preferences", res.state.s},
          {"comparisons", res.state.history.size()},
          {"checkpoint", path.string()}};
}

template <typename S>
json cmd_skip(const RunConfig& cfg, const Checkpoint& in, const CliOptions& o) {
  auto [model, adapters] = narrow<S>(in);
  std::vector<int> idx;
  if (!o.skip.empty()) {
    idx = parse_index_list(o.skip);
  } else if (in.preferences) {
    if (static_cast<int>(in.preferences->s.size()) !=
        candidate_count(cfg.candidates, cfg.model.n_layers)) {
      throw ConfigError("stored preferences do not match the candidate set");
    }
    idx = select_skip_set(in.preferences->s, cfg.schedule.k);
  } else {
    throw ConfigError("skip needs --skip or a checkpoint with preferences");
  }
  const SkipMask mask = SkipMask::from_indices(cfg.candidates, cfg.model.n_layers, idx);
  Rng rng(*cfg.seed);
  const AdapterSet<S> kept = adapters_for(adapters, cfg.model, mask, rng);
  Checkpoint c = make_checkpoint("skip", cfg, model, kept, mask);
  c.preferences = in.preferences;
  const fs::path path = out_path(cfg, "skip.ckpt.json");
  save_checkpoint(c, path.string());
  return {{"skip_set", mask.indices()}, {"checkpoint", path.string()}};
}

template <typename S>
json cmd_tune(const RunConfig& cfg, const Checkpoint& in) {
  auto [model, adapters] = narrow<S>(in);
  Rng rng(*cfg.seed);
  adapters = adapters_for(adapters, cfg.model, in.mask, rng);
  const Dataset data = make_task(cfg.task);
  JsonLines trace(out_path(cfg, "tune_loss.jsonl"));
  const EvalReport ev = tune_and_eval(model, adapters, in.mask, data, cfg, &trace);
  Checkpoint c = make_checkpoint("tune", cfg, model, adapters, in.mask);
  c.preferences = in.preferences;
  c.eval = ev;
  const fs::path path = out_path(cfg, "tune.ckpt.json");
  save_checkpoint(c, path.string());
  json j = eval_json(ev);
  j["skip_set"] = in.mask.indices();
  j["checkpoint"] = path.string();
  return j;
}

template <typename S>
json cmd_fuse(const RunConfig& cfg, const Checkpoint& in) {
  const PhaseSpec phase = PhaseSpec::decode(cfg.task.prompt_len());
  const FlopsReport eager = count_flops(cfg.model, in.mask, PiaState::Eager, phase);
  const FlopsReport fused = count_flops(cfg.model, in.mask, PiaState::Fused, phase);
  write_text(out_path(cfg, "flops.json"),
             json{{"eager", json::parse(to_json(eager))}, {"fused", json::parse(to_json(fused))}}.dump());
  Checkpoint c = in;
  c.stage = "fuse";
  c.config = cfg;
  c.decode_mode = DecodeMode::FuseAfterFirst;
  const fs::path path = out_path(cfg, "fuse.ckpt.json");
  save_checkpoint(c, path.string());
  return {{"decode_mode", to_string(c.decode_mode)},
          {"decode_flops_eager", eager.total()},
          {"decode_flops_fused", fused.total()},
          {"checkpoint", path.string()}};
}

template <typename S>
json cmd_eval(const RunConfig& cfg, const Checkpoint& in) {
  const auto [model, adapters] = narrow<S>(in);
  const Dataset data = make_task(cfg.task);
  const EvalReport ev = evaluate<S>(model, &adapters, in.mask, data.eval, data.spec, in.decode_mode);
  JsonLines preds(out_path(cfg, "eval_predictions.jsonl"));
  for (const auto& p : ev.predictions) preds.write(json(p));
  json j = eval_json(ev);
  write_text(out_path(cfg, "eval.json"), j.dump());
  j["decode_mode"] = to_string(in.decode_mode);
  j["tokens_hash"] = token_hash(ev.predictions);
  if (in.eval) j["matches_saved"] = in.eval->accuracy == ev.accuracy && in.eval->loss == ev.loss;
  return j;
}

template <typename S>
json cmd_bench(const RunConfig& cfg, const std::optional<Checkpoint>& in, const CliOptions& o) {
  Rng rng(*cfg.seed);
  Loaded<S> l;
  SkipMask mask(cfg.candidates, cfg.model.n_layers);
  if (in) {
    l = narrow<S>(*in);
    mask = in->mask;
  } else {
    l.model = Model<S>::init(cfg.model, rng);
  }
  if (!o.skip.empty()) {
    mask = SkipMask::from_indices(cfg.candidates, cfg.model.n_layers, parse_index_list(o.skip));
  }
  const AdapterSet<S> adapters = adapters_for(l.adapters, cfg.model, mask, rng);
  const LatencyReport lat = bench_latency<S>(l.model, mask, &adapters, cfg.bench);
  const PhaseSpec phase = PhaseSpec::decode(cfg.bench.prompt_len + cfg.bench.decode_steps);
  write_text(out_path(cfg, "latency.json"), to_json(lat));
  write_text(out_path(cfg, "flops.json"),
             to_json(count_flops(cfg.model, mask, PiaState::Fused, phase)));
  return {{"skip_set", mask.indices()},
          {"prefill_median_ms", lat.at(Phase::Prefill).median_ms},
          {"decode_eager_median_ms", lat.at(Phase::DecodeEager).median_ms},
          {"decode_fused_median_ms", lat.at(Phase::DecodeFused).median_ms},
          {"reps", lat.reps}};
}

bool next_combination(std::vector<int>& c, int n) {
  const int k = static_cast<int>(c.size());
  for (int i = k - 1; i >= 0; --i) {
    if (c[static_cast<size_t>(i)] < n - k + i) {
      ++c[static_cast<size_t>(i)];
      for (int j = i + 1; j < k; ++j) c[static_cast<size_t>(j)] = c[static_cast<size_t>(j) - 1] + 1;
      return true;
    }
  }
  return false;
}

std::string join(const std::vector<int>& v, char sep) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += sep;
    s += std::to_string(v[i]);
  }
  return s;
}

template <typename S>
json cmd_oracle(const RunConfig& cfg, const std::optional<Checkpoint>& in) {
  Rng rng(*cfg.seed);
  const Model<S> base = in ? cast_model<S>(in->model) : Model<S>::init(cfg.model, rng);
  const Dataset data = make_task(cfg.task);
  const int n = candidate_count(cfg.candidates, cfg.model.n_layers);
  const int k = cfg.schedule.k;
  struct Row {
    std::vector<int> mask;
    EvalReport ev;
  };
  std::vector<Row> rows;
  std::vector<int> comb(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) comb[static_cast<size_t>(i)] = i;
  const std::uint64_t adapter_seed = rng.fork_seed();
  do {
    Model<S> model = base;
    const SkipMask mask = SkipMask::from_indices(cfg.candidates, cfg.model.n_layers, comb);
    Rng arng(adapter_seed);
    AdapterSet<S> adapters = AdapterSet<S>::for_mask(cfg.model, mask, arng);
    rows.push_back({comb, tune_and_eval(model, adapters, mask, data, cfg, nullptr)});
  } while (next_combination(comb, n));
  std::stable_sort(rows.begin(), rows.end(),
                   [](const Row& a, const Row& b) { return a.ev.loss < b.ev.loss; });
  std::ofstream csv(out_path(cfg, "oracle.csv"), std::ios::trunc);
  csv << "rank,skip_set,eval_loss,accuracy\n";
  csv.precision(17);
  for (size_t r = 0; r < rows.size(); ++r) {
    csv << r + 1 << ",\"" << join(rows[r].mask, ' ') << "\"," << rows[r].ev.loss << ","
        << rows[r].ev.accuracy << "\n";
  }
  return {{"masks", rows.size()},
          {"best", rows.front().mask},
          {"best_eval_loss", rows.front().ev.loss},
          {"csv", out_path(cfg, "oracle.csv").string()}};
}

template <typename S>
json cmd_sweep(const RunConfig& cfg, const Checkpoint& in) {
  if (!in.preferences) throw ConfigError("sweep needs a checkpoint with search preferences");
  const Dataset data = make_task(cfg.task);
  const int max_k = cfg.schedule.k;
  std::ofstream csv(out_path(cfg, "sweep.csv"), std::ios::trunc);
  csv << "k,skip_set,accuracy,eval_loss,decode_flops,decode_fused_median_ms\n";
  csv.precision(17);
  json points = json::array();
  for (int k = 0; k <= max_k; ++k) {
    auto [model, have] = narrow<S>(in);
    const std::vector<int> idx = select_skip_set(in.preferences->s, k);
    const SkipMask mask = SkipMask::from_indices(cfg.candidates, cfg.model.n_layers, idx);
    Rng rng(*cfg.seed);
    AdapterSet<S> adapters = adapters_for(have, cfg.model, mask, rng);
    const EvalReport ev = tune_and_eval(model, adapters, mask, data, cfg, nullptr);
    const auto flops =
        count_flops(cfg.model, mask, PiaState::Fused, PhaseSpec::decode(cfg.task.prompt_len()));
    const LatencyReport lat = bench_latency<S>(model, mask, &adapters, cfg.bench);
    const double ms = lat.at(Phase::DecodeFused).median_ms;
    csv << k << ",\"" << join(idx, ' ') << "\"," << ev.accuracy << "," << ev.loss << ","
        << flops.total() << "," << ms << "\n";
    points.push_back({{"k", k}, {"accuracy", ev.accuracy}, {"decode_fused_median_ms", ms}});
  }
  return {{"points", points}, {"csv", out_path(cfg, "sweep.csv").string()}};
}

template <typename S>
json dispatch(const CliOptions& o, const RunConfig& cfg, const std::optional<Checkpoint>& ckpt) {
  const std::string& c = o.command;
  if (c == "pretrain") return cmd_pretrain<S>(cfg);
  if (c == "search") return cmd_search<S>(cfg, need(ckpt, c));
  if (c == "skip") return cmd_skip<S>(cfg, need(ckpt, c), o);
  if (c == "tune") return cmd_tune<S>(cfg, need(ckpt, c));
  if (c == "fuse") return cmd_fuse<S>(cfg, need(ckpt, c));
  if (c == "eval") return cmd_eval<S>(cfg, need(ckpt, c));
  if (c == "bench") return cmd_bench<S>(cfg, ckpt, o);
  if (c == "oracle") return cmd_oracle<S>(cfg, ckpt);
  if (c == "sweep") return cmd_sweep<S>(cfg, need(ckpt, c));
  throw ContractError("unhandled subcommand " + c);
}

int exit_code_for(const Error& e) {
  const std::string k = e.kind();
  if (k == "config" || k == "input") return kExitBadConfig;
  if (k == "missing_checkpoint") return kExitMissingCheckpoint;
  if (k == "corrupt_checkpoint") return kExitCorruptCheckpoint;
  if (k == "version") return kExitVersion;
  return kExitFailure;
}

void print_error(std::ostream& out, const std::string& kind, const std::string& message, int code) {
  out << json{{"ok", false}, {"error", kind}, {"message", message}, {"exit_code", code}}.dump()
      << std::endl;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out) {
  CliOptions o;
  CLI::App app{"Attention skipping toolkit", "easkit"};
  app.require_subcommand(1, 1);
  const std::vector<std::pair<const char*, const char*>> commands = {
      {"pretrain", "train a backbone on the configured task"},
      {"search", "bandit redundancy search over the candidate set"},
      {"skip", "fix a skip set from --skip or the stored preferences"},
      {"tune", "train the adapters of the checkpoint's skip set"},
      {"fuse", "switch decoding to fold frozen adapters into the FFN"},
      {"eval", "evaluate a checkpoint on the eval split"},
      {"bench", "time prefill and decode phases"},
      {"oracle", "tune and rank every k-subset of candidates"},
      {"sweep", "accuracy and decode time against the number of skips"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", o.config_path, "run configuration (JSON)");
    sub->add_option("--checkpoint", o.checkpoint, "input checkpoint");
    sub->add_option("--seed", o.seed, "random seed");
    sub->add_option("--out", o.out_dir, "output directory");
    sub->add_option("--candidates", o.candidates, "mha | ffn | either | layer");
    sub->add_option("--k", o.k, "number of modules to skip");
    sub->add_option("--reward-sign", o.reward_sign, "advantage | paper-literal");
    sub->add_option("--precision", o.precision, "f32 | f64");
    sub->add_option("--layers", o.layers, "number of layers (oracle without checkpoint)");
    sub->add_option("--steps", o.steps, "adapter tuning steps");
    sub->add_option("--skip", o.skip, "comma-separated candidate indices");
    sub->callback([&o, sub] { o.command = sub->get_name(); });
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help() << std::flush;
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    print_error(out, "usage", e.what(), kExitUsage);
    return kExitUsage;
  }

  try {
    std::optional<Checkpoint> ckpt;
    if (!o.checkpoint.empty()) ckpt = load_checkpoint(o.checkpoint);
    const RunConfig cfg = resolve_config(o, ckpt ? &*ckpt : nullptr);
    json summary = cfg.precision == Precision::F32 ? dispatch<float>(o, cfg, ckpt)
                                                   : dispatch<double>(o, cfg, ckpt);
    json line = {{"ok", true}, {"command", o.command}, {"precision", to_string(cfg.precision)}};
    line.update(summary);
    out << line.dump() << std::endl;
    return kExitOk;
  } catch (const Error& e) {
    const int code = exit_code_for(e);
    print_error(out, e.kind(), e.what(), code);
    return code;
  } catch (const std::exception& e) {
    print_error(out, "internal", e.what(), kExitFailure);
    return kExitFailure;
  }
}

}  // namespace easkit
