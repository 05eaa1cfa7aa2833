#pragma once

// Dual-rate online distillation on a virtual clock.
//
// Fast route: every frame i is predicted at time i / r_V by the served student
// parameters. Slow route: every r_T seconds the teacher labels the most recent
// frame and the pair enters the buffer; every r_Sc seconds one training epoch
// of the student copy runs and its parameters are transferred to the fast
// route. Simultaneous events are ordered infer < teacher_label < epoch_end <
// transfer.
//
// The only state shared by the two routes is the served snapshot, which is
// swapped as a whole (SnapshotSlot).

#include <algorithm>
#include <atomic>
#include <cmath>
#include <compare>
#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <exception>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "odcl/confusion.hpp"
#include "odcl/error.hpp"
#include "odcl/gridnet.hpp"
#include "odcl/regularize.hpp"
#include "odcl/replay.hpp"
#include "odcl/synthstream.hpp"

namespace odcl {

enum class ExecutionMode { virtual_clock, threaded };

struct PipelineConfig {
  StreamConfig stream;
  ModelSpec model;
  BufferConfig buffer;
  RegConfig reg;
  double lr = 1e-4;
  OptimizerKind optimizer = OptimizerKind::adam;
  ExecutionMode mode = ExecutionMode::virtual_clock;
  // Threaded mode only: gate both routes on the virtual clock so the run is
  // identical to virtual mode. When false both workers free-run.
  bool lockstep = true;
};

// Keys in the returned issues carry their section prefix ("buffer.capacity").
inline std::vector<ConfigIssue> check(const PipelineConfig& c) {
  std::vector<ConfigIssue> issues;
  auto nest = [&](const char* section, std::vector<ConfigIssue> sub) {
    for (auto& i : sub) issues.push_back({std::string(section) + "." + i.key, i.message});
  };
  nest("stream", check(c.stream));
  nest("buffer", check(c.buffer));
  nest("reg", check(c.reg));
  if (c.model.hidden_dim == 0 && c.model.arch == Arch::mlp) issues.push_back({"model.hidden_dim", "must be >= 1"});
  if (!(c.model.init_scale > 0)) issues.push_back({"model.init_scale", "must be > 0"});
  if (c.model.feat_dim != c.stream.feat_dim) issues.push_back({"model.feat_dim", "must equal stream.feat_dim"});
  if (c.model.num_classes != c.stream.num_classes)
    issues.push_back({"model.num_classes", "must equal stream.num_classes"});
  if (!(c.lr > 0)) issues.push_back({"train.lr", "must be > 0"});
  if (c.stream.r_v > 0 && c.stream.r_t * c.stream.r_v < 1.0)
    issues.push_back({"stream.r_t", "must be >= 1 / r_v (the teacher labels a subset of frames)"});
  return issues;
}

enum class EventKind : std::uint8_t { infer = 0, teacher_label = 1, epoch_end = 2, transfer = 3 };

struct PipelineEvent {
  double time = 0.0;
  EventKind kind = EventKind::infer;
  // Frame index for infer / teacher_label, epoch index for epoch_end / transfer.
  std::size_t index = 0;

  auto operator<=>(const PipelineEvent&) const = default;
};

// Most recent frame shown at virtual time t.
inline std::size_t frame_at_time(const StreamConfig& s, double t) {
  const auto i = static_cast<std::size_t>(std::floor(t * s.r_v + 1e-9));
  return std::min(i, s.length() - 1);
}

// The complete, totally ordered event list of one run.
inline std::vector<PipelineEvent> schedule(const StreamConfig& s) {
  const std::size_t K = s.length();
  const double horizon = s.seconds();
  std::vector<PipelineEvent> ev;
  for (std::size_t i = 0; i < K; ++i) ev.push_back({static_cast<double>(i) / s.r_v, EventKind::infer, i});
  const auto teacher_count = static_cast<std::size_t>(std::floor(horizon / s.r_t + 1e-9));
  for (std::size_t j = 1; j <= teacher_count; ++j) {
    const double t = static_cast<double>(j) * s.r_t;
    ev.push_back({t, EventKind::teacher_label, frame_at_time(s, t)});
  }
  const auto epoch_count = static_cast<std::size_t>(std::floor(horizon / s.r_sc + 1e-9));
  for (std::size_t e = 0; e < epoch_count; ++e) {
    const double t = static_cast<double>(e + 1) * s.r_sc;
    ev.push_back({t, EventKind::epoch_end, e});
    ev.push_back({t, EventKind::transfer, e});
  }
  std::sort(ev.begin(), ev.end());
  return ev;
}

// FNV-1a over the version tag and the raw parameter bytes.
inline std::uint64_t snapshot_checksum(std::size_t version, const ParamVector& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const void* data, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t k = 0; k < n; ++k) {
      h ^= b[k];
      h *= 0x100000001b3ULL;
    }
  };
  const std::uint64_t v = version;
  mix(&v, sizeof v);
  mix(params.values.data(), params.values.size() * sizeof(double));
  return h;
}

struct Snapshot {
  std::size_t version = 0;  // 0: initial parameters, e + 1: after epoch e
  double time = 0.0;
  ParamVector params;
  std::uint64_t checksum = 0;

  static std::shared_ptr<const Snapshot> make(std::size_t version, double time, ParamVector params) {
    auto s = std::make_shared<Snapshot>();
    s->version = version;
    s->time = time;
    s->params = std::move(params);
    s->checksum = snapshot_checksum(version, s->params);
    return s;
  }

  bool intact() const { return checksum == snapshot_checksum(version, params); }
};

// Atomic swap point between the training and inference routes. Readers get a
// complete immutable snapshot, either the old or the new one.
class SnapshotSlot {
 public:
  explicit SnapshotSlot(std::shared_ptr<const Snapshot> initial) : current_(std::move(initial)) {}

  std::shared_ptr<const Snapshot> load() const {
    std::lock_guard lock(mutex_);
    return current_;
  }

  void publish(std::shared_ptr<const Snapshot> next) {
    std::lock_guard lock(mutex_);
    current_ = std::move(next);
  }

 private:
  mutable std::mutex mutex_;
  std::shared_ptr<const Snapshot> current_;
};

struct EpochLog {
  std::size_t epoch = 0;
  double time = 0.0;
  bool trained = false;
  std::vector<std::size_t> replayed;  // stream indices drawn from the buffer
  std::vector<std::size_t> incoming;  // stream indices labeled since the last epoch
  double loss = 0.0;
  double penalty = 0.0;

  bool operator==(const EpochLog&) const = default;
};

struct TransferRecord {
  double time = 0.0;
  std::size_t epoch = 0;
  ParamVector params;

  bool operator==(const TransferRecord&) const = default;
};

struct RunRecord {
  std::size_t num_classes = 0;
  ParamVector initial;
  std::vector<TransferRecord> transfers;
  std::vector<PipelineEvent> events;
  std::vector<EpochLog> epochs;
  // Per frame: snapshot version served and the confusion against the teacher.
  std::vector<std::size_t> served_version;
  std::vector<std::uint64_t> frame_confusion;  // K x C x C
  std::size_t teacher_events = 0;
  std::size_t atomicity_violations = 0;

  const ParamVector& final_params() const { return transfers.empty() ? initial : transfers.back().params; }

  ConfusionMatrix served_confusion(std::size_t frame) const {
    ConfusionMatrix cm(num_classes);
    const std::size_t C2 = num_classes * num_classes;
    for (std::size_t k = 0; k < C2; ++k) cm.add(k / num_classes, k % num_classes, frame_confusion[frame * C2 + k]);
    return cm;
  }

  bool operator==(const RunRecord&) const = default;
};

// Parameters served at virtual time t: the last transfer at or before t.
inline const ParamVector& inference_params_at(const RunRecord& rec, double t) {
  auto it = std::upper_bound(rec.transfers.begin(), rec.transfers.end(), t,
                             [](double time, const TransferRecord& tr) { return time < tr.time; });
  if (it == rec.transfers.begin()) return rec.initial;
  return std::prev(it)->params;
}

// Owns S_c, the buffer, the regularizer and the optimizer.
class TrainingRoute {
 public:
  TrainingRoute(const PipelineConfig& cfg, const SyntheticStream& stream)
      : cfg_(cfg), stream_(stream), theta_(init_params(cfg.model)), optimizer_(cfg.optimizer), reg_(cfg.reg) {
    if (cfg.buffer.update_policy != UpdatePolicy::none) buffer_.emplace(cfg.buffer);
  }

  const ParamVector& params() const { return theta_; }
  const ReplayBuffer* buffer() const { return buffer_ ? &*buffer_ : nullptr; }
  const Regularizer& regularizer() const { return reg_; }
  std::span<const ReplayEntry> pending() const { return pending_; }

  void on_teacher_label(std::size_t frame_index, double time) {
    ReplayEntry e;
    e.frame = stream_.frame_at(frame_index);
    e.pseudo_label = stream_.teacher_label(e.frame);
    e.inserted_at = time;
    if (buffer_) buffer_->insert(e, loss_fn());
    pending_.push_back(std::move(e));
  }

  EpochLog run_epoch(std::size_t epoch, double time) {
    EpochLog log;
    log.epoch = epoch;
    log.time = time;

    std::vector<Example> incoming;
    for (const ReplayEntry& e : pending_) {
      incoming.push_back(e.example());
      log.incoming.push_back(e.frame.index);
    }

    std::vector<std::size_t> selected;
    if (buffer_) {
      const auto& bc = buffer_->config();
      if (bc.update_policy == UpdatePolicy::prioritized || bc.select_policy == SelectPolicy::prioritized)
        buffer_->refresh_importance(loss_fn());
      if (!buffer_->eligible(cutoff_).empty()) {
        if (bc.select_policy == SelectPolicy::mir && !incoming.empty()) {
          selected = mir_select(*buffer_, bc.batch_select, cutoff_, cfg_.model, theta_, incoming,
                                bc.mir_virtual_lr.value_or(cfg_.lr));
        } else if (bc.select_policy == SelectPolicy::mir) {
          selected = buffer_->sample_uniform(buffer_->eligible(cutoff_), bc.batch_select);
        } else {
          selected = buffer_->select(bc.batch_select, cutoff_);
        }
      }
    }
    std::vector<Example> replay;
    for (std::size_t idx : selected) {
      replay.push_back((*buffer_)[idx].example());
      log.replayed.push_back((*buffer_)[idx].frame.index);
    }

    std::vector<Example> batch = replay;
    batch.insert(batch.end(), incoming.begin(), incoming.end());
    if (!batch.empty()) {
      reg_.boundary_tick(epoch, cfg_.model, theta_, batch);
      LossGrad lg;
      if (cfg_.reg.method == RegMethod::ace && !incoming.empty()) {
        lg = ace_loss(theta_, cfg_.model, incoming, replay);
      } else if (cfg_.reg.method == RegMethod::none) {
        lg = loss_and_grad(cfg_.model, theta_, batch);
      } else {
        const RegPenalty pen = reg_.penalty(epoch, cfg_.model, theta_, batch);
        log.penalty = pen.value;
        lg = loss_and_grad(cfg_.model, theta_, batch, &pen);
      }
      const ParamVector before = theta_;
      optimizer_.step(theta_, lg.grad, cfg_.lr);
      std::vector<double> delta(theta_.size());
      for (std::size_t j = 0; j < delta.size(); ++j) delta[j] = theta_.values[j] - before.values[j];
      reg_.after_step(lg.grad, delta);
      log.loss = lg.loss;
      log.trained = true;
    }

    pending_.clear();
    if (buffer_) cutoff_ = buffer_->next_seq();
    return log;
  }

 private:
  EntryLossFn loss_fn() const {
    return [this](const Frame& f, const LabelGrid& y) { return entry_loss(cfg_.model, theta_, f, y); };
  }

  const PipelineConfig& cfg_;
  const SyntheticStream& stream_;
  ParamVector theta_;
  Optimizer optimizer_;
  Regularizer reg_;
  std::optional<ReplayBuffer> buffer_;
  std::vector<ReplayEntry> pending_;
  std::uint64_t cutoff_ = 0;
};

namespace detail {

class InferenceRoute {
 public:
  InferenceRoute(const PipelineConfig& cfg, const SyntheticStream& stream, RunRecord& rec)
      : cfg_(cfg), stream_(stream), rec_(rec) {
    const std::size_t C = cfg.model.num_classes;
    rec_.served_version.assign(stream.length(), 0);
    rec_.frame_confusion.assign(stream.length() * C * C, 0);
  }

  void infer(std::size_t i, const Snapshot& snap) {
    if (!snap.intact()) ++violations_;
    const Frame f = stream_.frame_at(i);
    const LabelGrid pred = predict(cfg_.model, snap.params, f);
    const LabelGrid ref = stream_.teacher_label(f);
    const std::size_t C = cfg_.model.num_classes;
    std::uint64_t* cm = rec_.frame_confusion.data() + i * C * C;
    for (std::size_t p = 0; p < f.pixels(); ++p)
      ++cm[static_cast<std::size_t>(ref.labels[p]) * C + static_cast<std::size_t>(pred.labels[p])];
    rec_.served_version[i] = snap.version;
  }

  std::size_t violations() const { return violations_; }

 private:
  const PipelineConfig& cfg_;
  const SyntheticStream& stream_;
  RunRecord& rec_;
  std::size_t violations_ = 0;
};

inline RunRecord run_virtual(const PipelineConfig& cfg, const SyntheticStream& stream, RunRecord rec) {
  TrainingRoute training(cfg, stream);
  InferenceRoute inference(cfg, stream, rec);
  SnapshotSlot slot(Snapshot::make(0, 0.0, rec.initial));
  for (const PipelineEvent& ev : rec.events) {
    switch (ev.kind) {
      case EventKind::infer: inference.infer(ev.index, *slot.load()); break;
      case EventKind::teacher_label: training.on_teacher_label(ev.index, ev.time); break;
      case EventKind::epoch_end: rec.epochs.push_back(training.run_epoch(ev.index, ev.time)); break;
      case EventKind::transfer:
        slot.publish(Snapshot::make(ev.index + 1, ev.time, snapshot(training.params())));
        rec.transfers.push_back({ev.time, ev.index, snapshot(training.params())});
        break;
    }
  }
  rec.atomicity_violations = inference.violations();
  return rec;
}

inline RunRecord run_threaded(const PipelineConfig& cfg, const SyntheticStream& stream, RunRecord rec) {
  // Lockstep gates: an infer waits for every transfer ordered before it; a
  // transfer waits for every infer ordered before it.
  std::vector<std::size_t> transfers_before_infer, infers_before_transfer;
  std::vector<PipelineEvent> infer_events, training_events;
  std::size_t transfers = 0, infers = 0;
  for (const PipelineEvent& ev : rec.events) {
    if (ev.kind == EventKind::infer) {
      infer_events.push_back(ev);
      transfers_before_infer.push_back(transfers);
      ++infers;
    } else {
      if (ev.kind == EventKind::transfer) {
        infers_before_transfer.push_back(infers);
        ++transfers;
      }
      training_events.push_back(ev);
    }
  }

  TrainingRoute training(cfg, stream);
  InferenceRoute inference(cfg, stream, rec);
  SnapshotSlot slot(Snapshot::make(0, 0.0, rec.initial));
  std::mutex m;
  std::condition_variable cv;
  std::size_t published = 0, inferred = 0;
  std::atomic<bool> abort{false};
  std::exception_ptr failure;
  const bool lockstep = cfg.lockstep;

  auto fail = [&](std::exception_ptr e) {
    std::lock_guard lock(m);
    if (!failure) failure = e;
    abort = true;
    cv.notify_all();
  };

  std::thread infer_worker([&] {
    try {
      for (std::size_t n = 0; n < infer_events.size(); ++n) {
        if (lockstep) {
          std::unique_lock lock(m);
          cv.wait(lock, [&] { return abort || published >= transfers_before_infer[n]; });
          if (abort) return;
        }
        inference.infer(infer_events[n].index, *slot.load());
        std::lock_guard lock(m);
        ++inferred;
        cv.notify_all();
      }
    } catch (...) {
      fail(std::current_exception());
    }
  });

  try {
    std::size_t k = 0;
    for (const PipelineEvent& ev : training_events) {
      switch (ev.kind) {
        case EventKind::teacher_label: training.on_teacher_label(ev.index, ev.time); break;
        case EventKind::epoch_end: rec.epochs.push_back(training.run_epoch(ev.index, ev.time)); break;
        case EventKind::transfer: {
          if (lockstep) {
            std::unique_lock lock(m);
            cv.wait(lock, [&] { return abort || inferred >= infers_before_transfer[k]; });
            if (abort) break;
          }
          slot.publish(Snapshot::make(ev.index + 1, ev.time, snapshot(training.params())));
          rec.transfers.push_back({ev.time, ev.index, snapshot(training.params())});
          std::lock_guard lock(m);
          ++published;
          ++k;
          cv.notify_all();
          break;
        }
        case EventKind::infer: break;
      }
      if (abort) break;
    }
  } catch (...) {
    fail(std::current_exception());
  }
  infer_worker.join();
  if (failure) std::rethrow_exception(failure);
  rec.atomicity_violations = inference.violations();
  return rec;
}

}  // namespace detail

inline RunRecord run(const PipelineConfig& cfg) {
  if (auto issues = check(cfg); !issues.empty())
    throw ConfigError(issues.front().key + ": " + issues.front().message);
  const SyntheticStream stream(cfg.stream);
  RunRecord rec;
  rec.num_classes = cfg.model.num_classes;
  rec.initial = init_params(cfg.model);
  rec.events = schedule(cfg.stream);
  rec.teacher_events = static_cast<std::size_t>(
      std::count_if(rec.events.begin(), rec.events.end(),
                    [](const PipelineEvent& e) { return e.kind == EventKind::teacher_label; }));
  if (cfg.mode == ExecutionMode::threaded) return detail::run_threaded(cfg, stream, std::move(rec));
  return detail::run_virtual(cfg, stream, std::move(rec));
}

}  // namespace odcl
