#pragma once

// Bounded online dataset with pluggable update (f_U) and selection (f_S)
// policies. Selection never returns an entry twice.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "odcl/error.hpp"
#include "odcl/gridnet.hpp"
#include "odcl/synthstream.hpp"

namespace odcl {

// `none` disables the buffer entirely (memoryless training).
enum class UpdatePolicy { none, fifo, uniform, prioritized };
enum class SelectPolicy { none, all, uniform, prioritized, mir };

// Which way prioritized selection leans: towards high loss (default) or, read
// literally, with the same inverse-importance weights used for eviction.
enum class PriorityDirection { loss, inverse };

inline constexpr std::string_view to_string(UpdatePolicy p) {
  switch (p) {
    case UpdatePolicy::none: return "none";
    case UpdatePolicy::fifo: return "fifo";
    case UpdatePolicy::uniform: return "uniform";
    case UpdatePolicy::prioritized: return "prioritized";
  }
  return "?";
}

inline constexpr std::string_view to_string(SelectPolicy p) {
  switch (p) {
    case SelectPolicy::none: return "none";
    case SelectPolicy::all: return "all";
    case SelectPolicy::uniform: return "uniform";
    case SelectPolicy::prioritized: return "prioritized";
    case SelectPolicy::mir: return "mir";
  }
  return "?";
}

inline std::optional<UpdatePolicy> parse_update_policy(std::string_view s) {
  for (auto p : {UpdatePolicy::none, UpdatePolicy::fifo, UpdatePolicy::uniform, UpdatePolicy::prioritized})
    if (to_string(p) == s) return p;
  return std::nullopt;
}

inline std::optional<SelectPolicy> parse_select_policy(std::string_view s) {
  for (auto p : {SelectPolicy::none, SelectPolicy::all, SelectPolicy::uniform, SelectPolicy::prioritized,
                 SelectPolicy::mir})
    if (to_string(p) == s) return p;
  return std::nullopt;
}

struct BufferConfig {
  std::size_t capacity = 250;      // M
  std::size_t batch_select = 100;  // N
  UpdatePolicy update_policy = UpdatePolicy::fifo;
  SelectPolicy select_policy = SelectPolicy::all;
  std::size_t mir_candidates = 0;  // C; 0 means min(M, 2N)
  std::optional<double> mir_virtual_lr;  // unset: follow the training lr
  PriorityDirection prioritized_select = PriorityDirection::loss;
  std::uint64_t rng_seed = 1;

  std::size_t effective_candidates() const {
    return mir_candidates == 0 ? std::min(capacity, 2 * batch_select) : mir_candidates;
  }
};

inline std::vector<ConfigIssue> check(const BufferConfig& c) {
  std::vector<ConfigIssue> issues;
  if (c.capacity < 1) issues.push_back({"capacity", "must be >= 1"});
  if (c.batch_select < 1 || c.batch_select > c.capacity)
    issues.push_back({"batch_select", "must be in [1, capacity] (N <= M), got " + std::to_string(c.batch_select) +
                                          " with capacity " + std::to_string(c.capacity)});
  if (c.select_policy == SelectPolicy::mir) {
    const std::size_t C = c.effective_candidates();
    if (C < c.batch_select || C > c.capacity)
      issues.push_back({"mir_candidates", "must be in [batch_select, capacity]"});
  }
  if ((c.update_policy == UpdatePolicy::none) != (c.select_policy == SelectPolicy::none))
    issues.push_back({"update_policy", "update and select policy must both be none (memoryless) or neither"});
  if (c.mir_virtual_lr && !(*c.mir_virtual_lr > 0)) issues.push_back({"mir_virtual_lr", "must be > 0"});
  return issues;
}

struct ReplayEntry {
  Frame frame;
  LabelGrid pseudo_label;
  double importance = 0.0;
  double inserted_at = 0.0;  // virtual seconds
  std::uint64_t seq = 0;     // insertion order, assigned by the buffer

  Example example() const { return {&frame, &pseudo_label}; }
};

// Loss of the current student on one (frame, pseudo-label) pair.
using EntryLossFn = std::function<double(const Frame&, const LabelGrid&)>;

class ReplayBuffer {
 public:
  static constexpr double kImportanceFloor = 1e-8;

  explicit ReplayBuffer(BufferConfig cfg) : cfg_(std::move(cfg)), rng_(cfg_.rng_seed) {
    if (cfg_.capacity == 0) throw ConfigError("buffer.capacity must be >= 1");
  }

  const BufferConfig& config() const { return cfg_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  bool full() const { return entries_.size() >= cfg_.capacity; }
  const ReplayEntry& operator[](std::size_t i) const { return entries_[i]; }
  std::span<const ReplayEntry> entries() const { return entries_; }
  std::uint64_t next_seq() const { return next_seq_; }
  std::mt19937_64& rng() { return rng_; }

  // Stores `entry` per the update policy and returns the slot it landed in.
  // For the prioritized policy `loss` supplies the new entry's importance.
  std::size_t insert(ReplayEntry entry, const EntryLossFn& loss = {}) {
    if (cfg_.update_policy == UpdatePolicy::prioritized) {
      if (!loss) throw StateError("prioritized insert needs a student loss function");
      entry.importance = floored(loss(entry.frame, entry.pseudo_label));
    }
    if (!std::isfinite(entry.importance) || entry.importance < 0)
      throw NumericError("replay entry importance must be finite and >= 0");
    entry.seq = next_seq_++;
    if (!full()) {
      entries_.push_back(std::move(entry));
      return entries_.size() - 1;
    }
    const std::size_t slot = victim();
    entries_[slot] = std::move(entry);
    return slot;
  }

  // Probability of each slot being evicted on the next prioritized insert.
  std::vector<double> eviction_probabilities() const {
    std::vector<double> p(entries_.size());
    for (std::size_t n = 0; n < entries_.size(); ++n) p[n] = 1.0 / floored(entries_[n].importance);
    normalize(p);
    return p;
  }

  void refresh_importance(const EntryLossFn& loss) {
    for (ReplayEntry& e : entries_) e.importance = floored(loss(e.frame, e.pseudo_label));
  }

  // Indices of entries eligible for selection: those with seq < `cutoff_seq`.
  // Entries inserted since the last epoch are excluded so that augmentation with
  // incoming data does not duplicate them.
  std::vector<std::size_t> eligible(std::uint64_t cutoff_seq) const {
    std::vector<std::size_t> idx;
    for (std::size_t n = 0; n < entries_.size(); ++n)
      if (entries_[n].seq < cutoff_seq) idx.push_back(n);
    return idx;
  }

  // Up to `n` distinct indices from `pool`, uniformly without replacement.
  std::vector<std::size_t> sample_uniform(std::vector<std::size_t> pool, std::size_t n) {
    n = std::min(n, pool.size());
    for (std::size_t k = 0; k < n; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
      std::swap(pool[k], pool[pick(rng_)]);
    }
    pool.resize(n);
    return pool;
  }

  // Sequential draw-and-remove with renormalization.
  std::vector<std::size_t> sample_weighted(std::vector<std::size_t> pool, std::vector<double> weights, std::size_t n) {
    n = std::min(n, pool.size());
    std::vector<std::size_t> out;
    out.reserve(n);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    while (out.size() < n) {
      const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
      double u = unit(rng_) * total;
      std::size_t k = 0;
      for (; k + 1 < weights.size(); ++k) {
        if (u < weights[k]) break;
        u -= weights[k];
      }
      out.push_back(pool[k]);
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(k));
      weights.erase(weights.begin() + static_cast<std::ptrdiff_t>(k));
    }
    return out;
  }

  // f_S for the policies that need no model: all, uniform, prioritized.
  std::vector<std::size_t> select(std::size_t n, std::uint64_t cutoff_seq) {
    if (n == 0) throw Error("select: count must be > 0");
    std::vector<std::size_t> pool = eligible(cutoff_seq);
    switch (cfg_.select_policy) {
      case SelectPolicy::none: return {};
      case SelectPolicy::all: return pool;
      case SelectPolicy::uniform: return sample_uniform(std::move(pool), n);
      case SelectPolicy::prioritized: {
        std::vector<double> w(pool.size());
        for (std::size_t k = 0; k < pool.size(); ++k) {
          const double imp = floored(entries_[pool[k]].importance);
          w[k] = cfg_.prioritized_select == PriorityDirection::loss ? imp : 1.0 / imp;
        }
        return sample_weighted(std::move(pool), std::move(w), n);
      }
      case SelectPolicy::mir: throw StateError("mir selection needs the model; use mir_select");
    }
    return {};
  }

  static double floored(double importance) { return std::max(importance, kImportanceFloor); }

 private:
  static void normalize(std::vector<double>& p) {
    const double total = std::accumulate(p.begin(), p.end(), 0.0);
    for (double& x : p) x /= total;
  }

  std::size_t victim() {
    switch (cfg_.update_policy) {
      case UpdatePolicy::fifo: {
        auto oldest = std::min_element(entries_.begin(), entries_.end(),
                                       [](const ReplayEntry& a, const ReplayEntry& b) { return a.seq < b.seq; });
        return static_cast<std::size_t>(oldest - entries_.begin());
      }
      case UpdatePolicy::uniform: {
        std::uniform_int_distribution<std::size_t> pick(0, cfg_.capacity - 1);
        return pick(rng_);
      }
      case UpdatePolicy::prioritized: {
        const std::vector<double> p = eviction_probabilities();
        std::discrete_distribution<std::size_t> pick(p.begin(), p.end());
        return pick(rng_);
      }
      case UpdatePolicy::none: break;
    }
    throw StateError("buffer disabled: update policy is none");
  }

  BufferConfig cfg_;
  std::vector<ReplayEntry> entries_;
  std::mt19937_64 rng_;
  std::uint64_t next_seq_ = 0;
};

// Mean cross-entropy of one stored pair.
inline double entry_loss(const ModelSpec& spec, const ParamVector& theta, const Frame& f, const LabelGrid& y) {
  const Example ex{&f, &y};
  return loss_only(spec, theta, std::span<const Example>(&ex, 1));
}

struct MirScore {
  std::size_t index = 0;  // buffer slot
  double before = 0.0;
  double after = 0.0;
  double interference() const { return after - before; }
};

// Scores candidates by how much one virtual SGD step on `incoming` increases
// their loss. Result is sorted by decreasing interference, ties to the smaller
// buffer index. `theta` is not modified.
inline std::vector<MirScore> mir_scores(const ReplayBuffer& buf, std::span<const std::size_t> candidates,
                                        const ModelSpec& spec, const ParamVector& theta,
                                        std::span<const Example> incoming, double virtual_lr) {
  if (incoming.empty()) throw Error("mir: incoming batch is empty");
  const LossGrad g = loss_and_grad(spec, theta, incoming);
  const ParamVector virtual_theta = sgd_step(theta, g.grad, virtual_lr);
  std::vector<MirScore> scores;
  scores.reserve(candidates.size());
  for (std::size_t idx : candidates) {
    const ReplayEntry& e = buf[idx];
    scores.push_back({idx, entry_loss(spec, theta, e.frame, e.pseudo_label),
                      entry_loss(spec, virtual_theta, e.frame, e.pseudo_label)});
  }
  std::stable_sort(scores.begin(), scores.end(), [](const MirScore& a, const MirScore& b) {
    if (a.interference() != b.interference()) return a.interference() > b.interference();
    return a.index < b.index;
  });
  return scores;
}

// Maximally-interfered retrieval: draw C candidates uniformly without
// replacement from the eligible entries, keep the n most interfered.
inline std::vector<std::size_t> mir_select(ReplayBuffer& buf, std::size_t n, std::uint64_t cutoff_seq,
                                           const ModelSpec& spec, const ParamVector& theta,
                                           std::span<const Example> incoming, double virtual_lr) {
  if (n == 0) throw Error("mir_select: count must be > 0");
  if (buf.empty()) throw StateError("mir_select: buffer is empty");
  std::vector<std::size_t> candidates = buf.sample_uniform(buf.eligible(cutoff_seq), buf.config().effective_candidates());
  std::sort(candidates.begin(), candidates.end());
  const auto scores = mir_scores(buf, candidates, spec, theta, incoming, virtual_lr);
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < std::min(n, scores.size()); ++k) out.push_back(scores[k].index);
  return out;
}

// Selected replay entries followed by the incoming pairs.
inline std::vector<Example> augment(const ReplayBuffer& buf, std::span<const std::size_t> selected,
                                    std::span<const Example> incoming) {
  std::vector<Example> batch;
  batch.reserve(selected.size() + incoming.size());
  for (std::size_t idx : selected) batch.push_back(buf[idx].example());
  batch.insert(batch.end(), incoming.begin(), incoming.end());
  return batch;
}

}  // namespace odcl
