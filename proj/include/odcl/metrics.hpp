#pragma once

// Stream-aware evaluation. Windows are non-overlapping blocks of `window`
// frames starting at multiples of `window`. The reference is always the
// teacher's pseudo-label.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "odcl/confusion.hpp"
#include "odcl/error.hpp"
#include "odcl/gridnet.hpp"
#include "odcl/pipeline.hpp"
#include "odcl/synthstream.hpp"

namespace odcl {

struct MetricConfig {
  std::size_t window = 10;        // I, frames
  std::size_t shift = 200;        // h, frames
  std::size_t nds_halfwidth = 20;  // frames

  // Defaults tied to the stream: h = cycle_len, half-width = cycle_len / 10.
  static MetricConfig for_stream(const StreamConfig& s, std::size_t window) {
    return {window, s.cycle_len, std::max<std::size_t>(1, s.cycle_len / 10)};
  }
};

inline std::vector<ConfigIssue> check(const MetricConfig& c) {
  std::vector<ConfigIssue> issues;
  if (c.window < 1) issues.push_back({"window", "must be >= 1"});
  if (c.nds_halfwidth < 1) issues.push_back({"nds_halfwidth", "must be >= 1"});
  return issues;
}

// Mean IoU over classes that occur in the reference or the prediction.
inline double miou(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw Error("miou: empty confusion matrix");
  const std::size_t C = cm.num_classes();
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < C; ++c) {
    std::uint64_t row = 0, col = 0;
    for (std::size_t k = 0; k < C; ++k) {
      row += cm.at(c, k);
      col += cm.at(k, c);
    }
    const std::uint64_t tp = cm.at(c, c);
    const std::uint64_t uni = row + col - tp;
    if (uni == 0) continue;
    sum += static_cast<double>(tp) / static_cast<double>(uni);
    ++present;
  }
  return sum / static_cast<double>(present);
}

struct TraceRow {
  std::size_t i_prime = 0;
  double t_virtual = 0.0;
  DomainId domain = DomainId::A;
  double miou = 0.0;
  std::optional<double> bwt;
  std::optional<double> fwt;
  bool near_shift = false;
};

struct MetricSummary {
  double miou_mean = 0.0;
  double miou_nds = 0.0;
  double fwt_mean = 0.0;
  double bwt_mean = 0.0;
  double final_bwt = 0.0;
};

struct MetricTrace {
  std::vector<TraceRow> rows;
  MetricSummary summary;
};

inline bool near_any_shift(std::size_t start, std::span<const std::size_t> shifts, std::size_t halfwidth) {
  for (std::size_t s : shifts) {
    const std::size_t lo = s > halfwidth ? s - halfwidth : 0;
    if (start >= lo && start <= s + halfwidth) return true;
  }
  return false;
}

// Mean window mIoU over windows starting within +-halfwidth of some shift.
inline double miou_nds(const MetricTrace& trace, std::span<const std::size_t> shifts, std::size_t halfwidth) {
  if (shifts.empty()) throw Error("miou_nds: no shifts");
  double sum = 0.0;
  std::size_t n = 0;
  for (const TraceRow& r : trace.rows) {
    if (!near_any_shift(r.i_prime, shifts, halfwidth)) continue;
    sum += r.miou;
    ++n;
  }
  if (n == 0) throw Error("miou_nds: no window near any shift");
  return sum / static_cast<double>(n);
}

// Evaluates a finished run by regenerating frames and teacher labels.
class Evaluator {
 public:
  Evaluator(const SyntheticStream& stream, const ModelSpec& model, const RunRecord& record, MetricConfig cfg)
      : stream_(stream), model_(model), rec_(record), cfg_(cfg) {
    if (auto issues = check(cfg_); !issues.empty()) throw ConfigError("metric." + issues.front().key + ": " + issues.front().message);
  }

  const MetricConfig& config() const { return cfg_; }

  std::vector<std::size_t> window_starts() const {
    std::vector<std::size_t> out;
    for (std::size_t s = 0; s + cfg_.window <= stream_.length(); s += cfg_.window) out.push_back(s);
    return out;
  }

  bool window_fits(long long start) const {
    return start >= 0 && static_cast<std::size_t>(start) + cfg_.window <= stream_.length();
  }

  ConfusionMatrix window_confusion(const ParamVector& theta, std::size_t start) const {
    if (!window_fits(static_cast<long long>(start)))
      throw StreamExhausted("window [" + std::to_string(start) + ", +" + std::to_string(cfg_.window) +
                            ") outside the stream");
    ConfusionMatrix cm(model_.num_classes);
    for (std::size_t i = start; i < start + cfg_.window; ++i) {
      const Frame f = stream_.frame_at(i);
      cm.add(stream_.teacher_label(f), predict(model_, theta, f));
    }
    return cm;
  }

  const ParamVector& params_at(std::size_t i_prime) const {
    return inference_params_at(rec_, static_cast<double>(i_prime) / stream_.config().r_v);
  }

  double perf_at(std::size_t i_prime) const { return miou(window_confusion(params_at(i_prime), i_prime)); }

  // Current parameters on the window shifted by -h; nullopt when it falls outside the stream.
  std::optional<double> bwt(std::size_t i_prime) const { return shifted(i_prime, -static_cast<long long>(cfg_.shift)); }
  std::optional<double> fwt(std::size_t i_prime) const { return shifted(i_prime, static_cast<long long>(cfg_.shift)); }

  double final_bwt() const {
    const ParamVector& last = rec_.final_params();
    const auto starts = window_starts();
    if (starts.empty()) throw Error("final_bwt: stream shorter than one window");
    double sum = 0.0;
    for (std::size_t s : starts) sum += miou(window_confusion(last, s));
    return sum / static_cast<double>(starts.size());
  }

  MetricTrace trace() const {
    MetricTrace out;
    const auto shifts = stream_.shift_indices();
    double bsum = 0.0, fsum = 0.0, msum = 0.0;
    std::size_t bn = 0, fn = 0;
    for (std::size_t s : window_starts()) {
      TraceRow r;
      r.i_prime = s;
      r.t_virtual = static_cast<double>(s) / stream_.config().r_v;
      r.domain = stream_.domain_of(s);
      r.miou = perf_at(s);
      r.bwt = bwt(s);
      r.fwt = fwt(s);
      r.near_shift = near_any_shift(s, shifts, cfg_.nds_halfwidth);
      msum += r.miou;
      if (r.bwt) bsum += *r.bwt, ++bn;
      if (r.fwt) fsum += *r.fwt, ++fn;
      out.rows.push_back(r);
    }
    if (out.rows.empty()) throw Error("trace: stream shorter than one window");
    out.summary.miou_mean = msum / static_cast<double>(out.rows.size());
    out.summary.bwt_mean = bn ? bsum / static_cast<double>(bn) : std::nan("");
    out.summary.fwt_mean = fn ? fsum / static_cast<double>(fn) : std::nan("");
    out.summary.miou_nds = shifts.empty() ? std::nan("") : miou_nds(out, shifts, cfg_.nds_halfwidth);
    out.summary.final_bwt = final_bwt();
    return out;
  }

 private:
  std::optional<double> shifted(std::size_t i_prime, long long delta) const {
    const long long start = static_cast<long long>(i_prime) + delta;
    if (!window_fits(start)) return std::nullopt;
    return miou(window_confusion(params_at(i_prime), static_cast<std::size_t>(start)));
  }

  const SyntheticStream& stream_;
  const ModelSpec& model_;
  const RunRecord& rec_;
  MetricConfig cfg_;
};

}  // namespace odcl
