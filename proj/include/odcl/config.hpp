#pragma once

// Experiment configuration: a flat text file of `section.key = value` lines.
// '#' starts a comment. Unknown keys are errors. Any key can be overridden by
// the environment variable ODCL_<KEY> with dots replaced by underscores and
// letters upper-cased (buffer.capacity -> ODCL_BUFFER_CAPACITY).
// Random seeds are not configured per component: each entry of
// experiment.seeds seeds the stream, the initial parameters and the buffer.

#include <algorithm>
#include <charconv>
#include <cctype>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "odcl/error.hpp"
#include "odcl/metrics.hpp"
#include "odcl/pipeline.hpp"

namespace odcl {

// One (f_U, f_S, R) combination. Written as "update-select-reg", e.g.
// "fifo-all-none" (baseline) or "uniform-mir-rwalk"; "memoryless" is
// shorthand for "none-none-none".
struct MethodSpec {
  UpdatePolicy update = UpdatePolicy::fifo;
  SelectPolicy select = SelectPolicy::all;
  RegMethod reg = RegMethod::none;

  std::string name() const {
    return std::string(to_string(update)) + "-" + std::string(to_string(select)) + "-" + std::string(to_string(reg));
  }
  bool memoryless() const { return update == UpdatePolicy::none; }
  bool operator==(const MethodSpec&) const = default;
};

inline std::optional<MethodSpec> parse_method(std::string_view s) {
  if (s == "memoryless") return MethodSpec{UpdatePolicy::none, SelectPolicy::none, RegMethod::none};
  const auto a = s.find('-');
  const auto b = a == std::string_view::npos ? a : s.find('-', a + 1);
  if (b == std::string_view::npos) return std::nullopt;
  auto u = parse_update_policy(s.substr(0, a));
  auto sel = parse_select_policy(s.substr(a + 1, b - a - 1));
  auto r = parse_reg_method(s.substr(b + 1));
  if (!u || !sel || !r) return std::nullopt;
  return MethodSpec{*u, *sel, *r};
}

struct ExperimentConfig {
  PipelineConfig base;
  std::vector<MethodSpec> methods{MethodSpec{}};
  std::vector<std::uint64_t> seeds{1};
  std::string output_dir = "out";
  MetricConfig metric = MetricConfig::for_stream(StreamConfig{}, 10);
};

// Pipeline config of one run. The seed drives the stream, the initial
// parameters and the buffer RNG. With the `all` selector the buffer holds
// exactly N pairs, as in the original framework.
inline PipelineConfig configure_run(const ExperimentConfig& cfg, const MethodSpec& method, std::uint64_t seed) {
  PipelineConfig p = cfg.base;
  p.buffer.update_policy = method.update;
  p.buffer.select_policy = method.select;
  p.reg.method = method.reg;
  if (method.select == SelectPolicy::all) p.buffer.capacity = p.buffer.batch_select;
  p.stream.seed = seed;
  p.model.init_seed = seed;
  p.buffer.rng_seed = seed;
  p.model.feat_dim = p.stream.feat_dim;
  p.model.num_classes = p.stream.num_classes;
  return p;
}

inline std::string run_id(const MethodSpec& method, std::uint64_t seed) {
  return method.name() + "_" + std::to_string(seed);
}

struct ValidationResult {
  std::optional<ExperimentConfig> config;
  std::vector<ConfigIssue> errors;

  bool ok() const { return config.has_value(); }
};

// Returns the value of an environment variable, if set.
using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

inline std::optional<std::string> process_env(const std::string& name) {
  if (const char* v = std::getenv(name.c_str())) return std::string(v);
  return std::nullopt;
}

inline std::string env_name(std::string_view key) {
  std::string out = "ODCL_";
  for (char c : key) out += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto end = std::min(s.find(',', start), s.size());
    const auto item = trim(s.substr(start, end - start));
    if (!item.empty()) out.emplace_back(item);
    start = end + 1;
  }
  return out;
}

template <typename T>
std::optional<T> parse_number(std::string_view s) {
  T v{};
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return v;
}

using Setter = std::function<std::optional<std::string>(ExperimentConfig&, std::string_view)>;

template <typename Field>
Setter set_size(Field field) {
  return [field](ExperimentConfig& c, std::string_view v) -> std::optional<std::string> {
    auto n = parse_number<std::size_t>(v);
    if (!n) return "expected a non-negative integer, got '" + std::string(v) + "'";
    field(c) = *n;
    return std::nullopt;
  };
}

template <typename Field>
Setter set_real(Field field) {
  return [field](ExperimentConfig& c, std::string_view v) -> std::optional<std::string> {
    auto n = parse_number<double>(v);
    if (!n) return "expected a number, got '" + std::string(v) + "'";
    field(c) = *n;
    return std::nullopt;
  };
}

template <typename Enum, typename Parse, typename Field>
Setter set_enum(Parse parse, std::string valid, Field field) {
  return [parse, valid, field](ExperimentConfig& c, std::string_view v) -> std::optional<std::string> {
    std::optional<Enum> e = parse(v);
    if (!e) return "unknown value '" + std::string(v) + "' (valid: " + valid + ")";
    field(c) = *e;
    return std::nullopt;
  };
}

}  // namespace detail

// Parses and validates a configuration. All problems are collected, each
// tagged with the key it concerns.
inline ValidationResult validate_config(std::string_view text, const EnvLookup& env = process_env) {
  using namespace detail;
  ValidationResult result;
  ExperimentConfig cfg;
  bool shift_set = false, halfwidth_set = false;

  std::map<std::string, Setter> keys;
  auto& S = keys;
#define ODCL_FIELD(expr) [](ExperimentConfig& c) -> auto& { return c.expr; }
  S["stream.grid_h"] = set_size(ODCL_FIELD(base.stream.grid_h));
  S["stream.grid_w"] = set_size(ODCL_FIELD(base.stream.grid_w));
  S["stream.feat_dim"] = set_size(ODCL_FIELD(base.stream.feat_dim));
  S["stream.num_classes"] = set_size(ODCL_FIELD(base.stream.num_classes));
  S["stream.cycle_len"] = set_size(ODCL_FIELD(base.stream.cycle_len));
  S["stream.num_cycles"] = set_size(ODCL_FIELD(base.stream.num_cycles));
  S["stream.r_v"] = set_real(ODCL_FIELD(base.stream.r_v));
  S["stream.r_t"] = set_real(ODCL_FIELD(base.stream.r_t));
  S["stream.r_sc"] = set_real(ODCL_FIELD(base.stream.r_sc));
  S["stream.noise_sigma"] = set_real(ODCL_FIELD(base.stream.noise_sigma));
  S["stream.offset_jitter"] = set_real(ODCL_FIELD(base.stream.offset_jitter));
  S["stream.phase_jitter"] = set_real(ODCL_FIELD(base.stream.phase_jitter));
  S["stream.texture_amplitude"] = set_real(ODCL_FIELD(base.stream.texture_amplitude));
  S["stream.domain_separation"] = set_real(ODCL_FIELD(base.stream.domain_separation));
  S["stream.prior_strength"] = set_real(ODCL_FIELD(base.stream.prior_strength));
  S["model.arch"] = set_enum<Arch>(
      [](std::string_view v) -> std::optional<Arch> {
        if (v == "linear") return Arch::linear;
        if (v == "mlp") return Arch::mlp;
        return std::nullopt;
      },
      "linear|mlp", ODCL_FIELD(base.model.arch));
  S["model.hidden_dim"] = set_size(ODCL_FIELD(base.model.hidden_dim));
  S["model.init_scale"] = set_real(ODCL_FIELD(base.model.init_scale));
  S["buffer.capacity"] = set_size(ODCL_FIELD(base.buffer.capacity));
  S["buffer.batch_select"] = set_size(ODCL_FIELD(base.buffer.batch_select));
  S["buffer.update_policy"] = set_enum<UpdatePolicy>(parse_update_policy, "none|fifo|uniform|prioritized",
                                                     ODCL_FIELD(base.buffer.update_policy));
  S["buffer.select_policy"] = set_enum<SelectPolicy>(parse_select_policy, "none|all|uniform|prioritized|mir",
                                                     ODCL_FIELD(base.buffer.select_policy));
  S["buffer.mir_candidates"] = set_size(ODCL_FIELD(base.buffer.mir_candidates));
  S["buffer.mir_virtual_lr"] = [](ExperimentConfig& c, std::string_view v) -> std::optional<std::string> {
    auto n = parse_number<double>(v);
    if (!n) return "expected a number, got '" + std::string(v) + "'";
    c.base.buffer.mir_virtual_lr = *n;
    return std::nullopt;
  };
  S["buffer.prioritized_select"] = set_enum<PriorityDirection>(
      [](std::string_view v) -> std::optional<PriorityDirection> {
        if (v == "loss") return PriorityDirection::loss;
        if (v == "inverse") return PriorityDirection::inverse;
        return std::nullopt;
      },
      "loss|inverse", ODCL_FIELD(base.buffer.prioritized_select));
  S["reg.method"] = set_enum<RegMethod>(parse_reg_method, "none|ace|lwf|mas|rwalk", ODCL_FIELD(base.reg.method));
  S["reg.lambda"] = set_real(ODCL_FIELD(base.reg.lambda));
  S["reg.warmup_epochs"] = set_size(ODCL_FIELD(base.reg.warmup_epochs));
  S["reg.boundary_every_k"] = set_size(ODCL_FIELD(base.reg.boundary_every_k));
  S["reg.lwf_temperature"] = set_real(ODCL_FIELD(base.reg.lwf_temperature));
  S["reg.rwalk_fisher_alpha"] = set_real(ODCL_FIELD(base.reg.rwalk_fisher_alpha));
  S["reg.epsilon"] = set_real(ODCL_FIELD(base.reg.epsilon));
  S["train.lr"] = set_real(ODCL_FIELD(base.lr));
  S["train.optimizer"] = set_enum<OptimizerKind>(
      [](std::string_view v) -> std::optional<OptimizerKind> {
        if (v == "sgd") return OptimizerKind::sgd;
        if (v == "adam") return OptimizerKind::adam;
        return std::nullopt;
      },
      "sgd|adam", ODCL_FIELD(base.optimizer));
  S["pipeline.mode"] = set_enum<ExecutionMode>(
      [](std::string_view v) -> std::optional<ExecutionMode> {
        if (v == "virtual") return ExecutionMode::virtual_clock;
        if (v == "threaded") return ExecutionMode::threaded;
        return std::nullopt;
      },
      "virtual|threaded", ODCL_FIELD(base.mode));
  S["pipeline.lockstep"] = [](ExperimentConfig& c, std::string_view v) -> std::optional<std::string> {
    if (v == "true") c.base.lockstep = true;
    else if (v == "false") c.base.lockstep = false;
    else return "expected true|false, got '" + std::string(v) + "'";
    return std::nullopt;
  };
  S["metric.window"] = set_size(ODCL_FIELD(metric.window));
  S["metric.shift"] = [&shift_set](ExperimentConfig& c, std::string_view v) -> std::optional<std::string> {
    shift_set = true;
    return set_size(ODCL_FIELD(metric.shift))(c, v);
  };
  S["metric.nds_halfwidth"] = [&halfwidth_set](ExperimentConfig& c, std::string_view v) -> std::optional<std::string> {
    halfwidth_set = true;
    return set_size(ODCL_FIELD(metric.nds_halfwidth))(c, v);
  };
  S["experiment.output_dir"] = [](ExperimentConfig& c, std::string_view v) -> std::optional<std::string> {
    c.output_dir = std::string(v);
    return std::nullopt;
  };
  S["experiment.seeds"] = [](ExperimentConfig& c, std::string_view v) -> std::optional<std::string> {
    c.seeds.clear();
    for (const auto& item : split_list(v)) {
      auto n = parse_number<std::uint64_t>(item);
      if (!n) return "bad seed '" + item + "'";
      c.seeds.push_back(*n);
    }
    if (c.seeds.empty()) return "at least one seed is required";
    return std::nullopt;
  };
  S["experiment.methods"] = [](ExperimentConfig& c, std::string_view v) -> std::optional<std::string> {
    c.methods.clear();
    for (const auto& item : split_list(v)) {
      auto m = parse_method(item);
      if (!m)
        return "bad method '" + item +
               "' (expected update-select-reg with update in none|fifo|uniform|prioritized, select in "
               "none|all|uniform|prioritized|mir, reg in none|ace|lwf|mas|rwalk, or 'memoryless')";
      c.methods.push_back(*m);
    }
    if (c.methods.empty()) return "at least one method is required";
    return std::nullopt;
  };
#undef ODCL_FIELD

  // Collect raw values: file first, environment on top.
  std::map<std::string, std::string> raw;
  std::istringstream in{std::string(text)};
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    std::string_view l = line;
    if (auto hash = l.find('#'); hash != std::string_view::npos) l = l.substr(0, hash);
    l = trim(l);
    if (l.empty()) continue;
    const auto eq = l.find('=');
    if (eq == std::string_view::npos) {
      result.errors.push_back({"line " + std::to_string(lineno), "expected 'key = value'"});
      continue;
    }
    // Keys are case-insensitive so the rate keys may be written r_V, r_T, r_Sc.
    std::string key(trim(l.substr(0, eq)));
    std::transform(key.begin(), key.end(), key.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (!keys.contains(key)) {
      result.errors.push_back({key, "unknown key"});
      continue;
    }
    if (raw.contains(key)) result.errors.push_back({key, "duplicate key"});
    raw[key] = std::string(trim(l.substr(eq + 1)));
  }
  bool methods_given = raw.contains("experiment.methods");
  if (env) {
    for (const auto& [key, setter] : keys) {
      if (auto v = env(env_name(key))) {
        raw[key] = *v;
        if (key == "experiment.methods") methods_given = true;
      }
    }
  }
  // Setters are independent, so the (sorted) application order is irrelevant.
  for (const auto& [key, value] : raw)
    if (auto err = keys[key](cfg, value)) result.errors.push_back({key, *err});

  if (!methods_given)
    cfg.methods = {MethodSpec{cfg.base.buffer.update_policy, cfg.base.buffer.select_policy, cfg.base.reg.method}};
  cfg.base.model.feat_dim = cfg.base.stream.feat_dim;
  cfg.base.model.num_classes = cfg.base.stream.num_classes;
  if (!shift_set) cfg.metric.shift = cfg.base.stream.cycle_len;
  if (!halfwidth_set) cfg.metric.nds_halfwidth = std::max<std::size_t>(1, cfg.base.stream.cycle_len / 10);

  // Semantic checks run even after syntax errors so every problem is reported
  // at once; keys that already failed to parse are not reported twice.
  std::set<std::string> failed;
  for (const auto& e : result.errors) failed.insert(e.key);
  std::set<std::pair<std::string, std::string>> seen;
  auto add = [&](const ConfigIssue& i) {
    if (failed.contains(i.key)) return;
    if (seen.insert({i.key, i.message}).second) result.errors.push_back(i);
  };
  for (const auto& i : check(cfg.base)) add(i);
  for (const auto& i : check(cfg.metric)) add({"metric." + i.key, i.message});
  const std::uint64_t probe_seed = cfg.seeds.empty() ? 1 : cfg.seeds.front();
  for (const MethodSpec& m : cfg.methods)
    for (const auto& i : check(configure_run(cfg, m, probe_seed)))
      add({"experiment.methods", m.name() + ": " + i.key + " " + i.message});
  if (cfg.output_dir.empty()) add({"experiment.output_dir", "must not be empty"});
  if (result.errors.empty()) result.config = std::move(cfg);
  return result;
}

}  // namespace odcl
