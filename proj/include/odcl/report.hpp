#pragma once

// Serialization of metric traces (CSV) and summaries (JSON, Markdown).
// Numbers are written with std::to_chars so output is locale-independent
// and byte-stable.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "odcl/metrics.hpp"

namespace odcl {

inline constexpr const char* kTraceHeader = "run_id,i_prime,t_virtual,domain,miou,bwt,fwt,is_near_shift";

inline std::string fixed(double v, int precision) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, precision);
  if (ec != std::errc()) throw Error("fixed: value out of range");
  std::string s(buf, ptr);
  if (s.front() == '-' && s.find_first_not_of("-0.") == std::string::npos) s.erase(0, 1);
  return s;
}

inline std::string fixed6(double v) { return fixed(v, 6); }

inline void write_trace_csv(std::ostream& out, const std::string& run_id, const MetricTrace& trace) {
  out << kTraceHeader << '\n';
  auto opt = [](const std::optional<double>& v) { return v ? fixed6(*v) : std::string(); };
  for (const TraceRow& r : trace.rows) {
    out << run_id << ',' << r.i_prime << ',' << fixed6(r.t_virtual) << ',' << domain_name(r.domain) << ','
        << fixed6(r.miou) << ',' << opt(r.bwt) << ',' << opt(r.fwt) << ',' << (r.near_shift ? 1 : 0) << '\n';
  }
}

inline std::string trace_csv(const std::string& run_id, const MetricTrace& trace) {
  std::ostringstream out;
  write_trace_csv(out, run_id, trace);
  return out.str();
}

// NaN (no window available) becomes null.
inline nlohmann::ordered_json summary_json(const MetricSummary& s) {
  auto num = [](double v) -> nlohmann::ordered_json {
    if (std::isnan(v)) return nullptr;
    return v;
  };
  nlohmann::ordered_json j;
  j["miou_mean"] = num(s.miou_mean);
  j["miou_nds"] = num(s.miou_nds);
  j["fwt_mean"] = num(s.fwt_mean);
  j["bwt_mean"] = num(s.bwt_mean);
  j["final_bwt"] = num(s.final_bwt);
  return j;
}

// One row of the combined table: a method averaged over its successful seeds.
struct MethodRow {
  std::string method;
  std::size_t runs = 0;
  std::size_t failed = 0;
  MetricSummary mean;
};

inline constexpr std::array<const char*, 5> kSummaryColumns{"miou_mean", "miou_nds", "fwt_mean", "bwt_mean",
                                                            "final_bwt"};

inline double summary_field(const MetricSummary& s, std::size_t k) {
  switch (k) {
    case 0: return s.miou_mean;
    case 1: return s.miou_nds;
    case 2: return s.fwt_mean;
    case 3: return s.bwt_mean;
    default: return s.final_bwt;
  }
}

// Markdown table: methods x metrics in percent, then the rank of each method
// per metric (1 = best).
inline void write_summary_table(std::ostream& out, const std::vector<MethodRow>& rows) {
  const std::size_t n = rows.size();
  std::vector<std::array<std::size_t, 5>> rank(n);
  for (std::size_t k = 0; k < kSummaryColumns.size(); ++k) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    auto key = [&](std::size_t i) {
      const double v = summary_field(rows[i].mean, k);
      return std::isnan(v) ? -std::numeric_limits<double>::infinity() : v;
    };
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key(a) > key(b); });
    for (std::size_t r = 0; r < n; ++r) rank[order[r]][k] = r + 1;
  }
  out << "| method | runs | mIoU | mIoU NDS | FWT | BWT | Final BWT |\n";
  out << "|---|---|---|---|---|---|---|\n";
  for (std::size_t i = 0; i < n; ++i) {
    out << "| " << rows[i].method << " | " << rows[i].runs;
    if (rows[i].failed) out << " (" << rows[i].failed << " failed)";
    for (std::size_t k = 0; k < kSummaryColumns.size(); ++k) {
      const double v = summary_field(rows[i].mean, k);
      out << " | " << (std::isnan(v) ? std::string("-") : fixed(100.0 * v, 2))
          << " (" << rank[i][k] << ")";
    }
    out << " |\n";
  }
}

}  // namespace odcl
