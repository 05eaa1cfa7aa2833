#pragma once

// Runs every (method, seed) pair of an experiment and writes per-run traces
// plus a combined summary. Runs share nothing but the immutable config.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "odcl/config.hpp"
#include "odcl/metrics.hpp"
#include "odcl/pipeline.hpp"
#include "odcl/report.hpp"

namespace odcl {

struct RunOutput {
  std::string run_id;
  PipelineConfig config;
  RunRecord record;
  MetricTrace trace;
};

inline RunOutput run_single(const ExperimentConfig& cfg, const MethodSpec& method, std::uint64_t seed) {
  RunOutput out;
  out.run_id = run_id(method, seed);
  out.config = configure_run(cfg, method, seed);
  out.record = run(out.config);
  const SyntheticStream stream(out.config.stream);
  out.trace = Evaluator(stream, out.config.model, out.record, cfg.metric).trace();
  return out;
}

struct RunOutcome {
  MethodSpec method;
  std::uint64_t seed = 0;
  std::string run_id;
  std::optional<MetricSummary> summary;
  std::string error;

  bool ok() const { return summary.has_value(); }
};

struct ExperimentResult {
  std::vector<RunOutcome> runs;
  std::vector<MethodRow> table;

  bool all_ok() const {
    for (const auto& r : runs)
      if (!r.ok()) return false;
    return true;
  }
};

// Seed means per method; NaN entries (no window) stay NaN.
inline std::vector<MethodRow> aggregate(const ExperimentConfig& cfg, const std::vector<RunOutcome>& runs) {
  std::vector<MethodRow> rows;
  for (const MethodSpec& m : cfg.methods) {
    MethodRow row;
    row.method = m.name();
    std::array<double, 5> sum{};
    for (const RunOutcome& r : runs) {
      if (!(r.method == m)) continue;
      if (!r.ok()) {
        ++row.failed;
        continue;
      }
      ++row.runs;
      for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += summary_field(*r.summary, k);
    }
    const double n = row.runs ? static_cast<double>(row.runs) : std::nan("");
    row.mean = {sum[0] / n, sum[1] / n, sum[2] / n, sum[3] / n, sum[4] / n};
    rows.push_back(row);
  }
  return rows;
}

// Writes <run_id>.csv and <run_id>.json per run, summary.json and summary.md.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir);

  ExperimentResult result;
  for (const MethodSpec& method : cfg.methods) {
    for (std::uint64_t seed : cfg.seeds) {
      RunOutcome outcome{method, seed, run_id(method, seed), std::nullopt, {}};
      try {
        const RunOutput out = run_single(cfg, method, seed);
        std::ofstream csv(dir / (outcome.run_id + ".csv"), std::ios::binary);
        write_trace_csv(csv, outcome.run_id, out.trace);
        std::ofstream js(dir / (outcome.run_id + ".json"), std::ios::binary);
        js << summary_json(out.trace.summary).dump(2) << '\n';
        if (!csv || !js) throw Error("cannot write outputs for " + outcome.run_id);
        outcome.summary = out.trace.summary;
      } catch (const std::exception& e) {
        outcome.error = e.what();
      }
      result.runs.push_back(std::move(outcome));
    }
  }
  result.table = aggregate(cfg, result.runs);

  nlohmann::ordered_json summary;
  summary["methods"] = nlohmann::ordered_json::array();
  for (const MethodRow& row : result.table) {
    nlohmann::ordered_json j = summary_json(row.mean);
    j = nlohmann::ordered_json{{"method", row.method}, {"runs", row.runs}, {"failed", row.failed}, {"mean", j}};
    summary["methods"].push_back(j);
  }
  summary["runs"] = nlohmann::ordered_json::array();
  for (const RunOutcome& r : result.runs) {
    nlohmann::ordered_json j{{"run_id", r.run_id}, {"method", r.method.name()}, {"seed", r.seed}};
    if (r.ok()) j["summary"] = summary_json(*r.summary);
    else j["error"] = r.error;
    summary["runs"].push_back(j);
  }
  std::ofstream(dir / "summary.json", std::ios::binary) << summary.dump(2) << '\n';
  std::ofstream md(dir / "summary.md", std::ios::binary);
  write_summary_table(md, result.table);
  return result;
}

}  // namespace odcl
