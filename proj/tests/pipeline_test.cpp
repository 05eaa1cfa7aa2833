#include <algorithm>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "odcl/pipeline.hpp"

using namespace odcl;

namespace {

PipelineConfig small_config(UpdatePolicy u = UpdatePolicy::fifo, SelectPolicy s = SelectPolicy::all,
                            RegMethod r = RegMethod::none) {
  PipelineConfig c;
  c.stream.grid_h = c.stream.grid_w = 4;
  c.stream.cycle_len = 20;
  c.stream.num_cycles = 2;
  c.stream.r_v = 1;
  c.stream.r_t = 1;
  c.stream.r_sc = 5;
  c.model.feat_dim = c.stream.feat_dim;
  c.model.num_classes = c.stream.num_classes;
  c.model.hidden_dim = 8;
  c.buffer.capacity = 12;
  c.buffer.batch_select = 6;
  c.buffer.update_policy = u;
  c.buffer.select_policy = s;
  c.buffer.mir_candidates = 12;
  c.reg.method = r;
  c.reg.warmup_epochs = 2;
  c.reg.boundary_every_k = 3;
  c.lr = 0.02;
  return c;
}

std::size_t count(const std::vector<PipelineEvent>& ev, EventKind k) {
  return static_cast<std::size_t>(std::count_if(ev.begin(), ev.end(), [k](const auto& e) { return e.kind == k; }));
}

}  // namespace

TEST(Schedule, ReferenceRatesGiveTwentyPairsPerEpoch) {
  StreamConfig s;
  s.cycle_len = 3600;
  s.num_cycles = 1;  // 7200 frames at 30 fps = 240 s
  const auto ev = schedule(s);
  EXPECT_EQ(count(ev, EventKind::infer), 7200u);
  EXPECT_EQ(count(ev, EventKind::teacher_label), 80u);
  EXPECT_EQ(count(ev, EventKind::epoch_end), 4u);
  std::size_t pairs = 0;
  for (const auto& e : ev) {
    if (e.kind == EventKind::teacher_label) ++pairs;
    if (e.kind == EventKind::epoch_end) {
      EXPECT_EQ(pairs, 20u);
      pairs = 0;
    }
  }
}

TEST(Schedule, TieOrderAndMonotoneTime) {
  const auto ev = schedule(small_config().stream);
  for (std::size_t k = 1; k < ev.size(); ++k) {
    ASSERT_LE(ev[k - 1].time, ev[k].time);
    if (ev[k - 1].time == ev[k].time) {
      EXPECT_LE(ev[k - 1].kind, ev[k].kind);
    }
  }
  // t = 5: frame 5 is shown, labeled, then epoch 0 ends and is transferred.
  auto at5 = std::find_if(ev.begin(), ev.end(), [](const auto& e) { return e.time == 5.0; });
  ASSERT_NE(at5, ev.end());
  EXPECT_EQ(at5[0].kind, EventKind::infer);
  EXPECT_EQ(at5[1].kind, EventKind::teacher_label);
  EXPECT_EQ(at5[1].index, 5u);
  EXPECT_EQ(at5[2].kind, EventKind::epoch_end);
  EXPECT_EQ(at5[3].kind, EventKind::transfer);
}

TEST(Schedule, TeacherEventCountIsFloorOfRunOverRate) {
  for (double rt : {1.0, 1.5, 3.0, 7.0}) {
    StreamConfig s = small_config().stream;
    s.r_t = rt;
    EXPECT_EQ(count(schedule(s), EventKind::teacher_label), static_cast<std::size_t>(s.seconds() / rt));
  }
}

TEST(Pipeline, ConfigValidation) {
  PipelineConfig c = small_config();
  c.stream.r_t = 0.5;  // faster than the frame rate
  c.buffer.batch_select = 20;
  const auto issues = check(c);
  std::set<std::string> keys;
  for (const auto& i : issues) keys.insert(i.key);
  EXPECT_TRUE(keys.count("stream.r_t"));
  EXPECT_TRUE(keys.count("buffer.batch_select"));
  EXPECT_THROW(run(c), ConfigError);
}

TEST(Pipeline, VirtualRunsAreDeterministic) {
  for (auto [u, s, r] : {std::tuple{UpdatePolicy::uniform, SelectPolicy::mir, RegMethod::rwalk},
                         std::tuple{UpdatePolicy::prioritized, SelectPolicy::prioritized, RegMethod::lwf},
                         std::tuple{UpdatePolicy::uniform, SelectPolicy::uniform, RegMethod::ace}}) {
    const PipelineConfig c = small_config(u, s, r);
    const RunRecord a = run(c), b = run(c);
    EXPECT_TRUE(a == b);
    EXPECT_EQ(a.transfers.size(), 16u);
  }
}

TEST(Pipeline, MemorylessTrainsEachPairOnce) {
  const PipelineConfig c = small_config(UpdatePolicy::none, SelectPolicy::none);
  const RunRecord rec = run(c);
  std::vector<std::size_t> seen;
  for (const EpochLog& e : rec.epochs) {
    EXPECT_TRUE(e.replayed.empty());
    seen.insert(seen.end(), e.incoming.begin(), e.incoming.end());
  }
  std::vector<std::size_t> labeled;
  for (const auto& ev : rec.events)
    if (ev.kind == EventKind::teacher_label && ev.time <= rec.epochs.back().time) labeled.push_back(ev.index);
  EXPECT_EQ(seen, labeled);
}

TEST(Pipeline, PairsEnterInStreamOrder) {
  const RunRecord rec = run(small_config(UpdatePolicy::uniform, SelectPolicy::uniform));
  std::vector<std::size_t> seen;
  for (const EpochLog& e : rec.epochs) seen.insert(seen.end(), e.incoming.begin(), e.incoming.end());
  EXPECT_TRUE(std::is_sorted(seen.begin(), seen.end()));
  EXPECT_EQ(rec.teacher_events, 80u);
}

TEST(Pipeline, AllSelectWithFullBufferTrainsOnWholeBuffer) {
  PipelineConfig c = small_config(UpdatePolicy::fifo, SelectPolicy::all);
  c.buffer.capacity = c.buffer.batch_select = 8;
  const RunRecord rec = run(c);
  // FIFO with M = 8: after inserting epoch e's pairs the buffer holds the 8
  // newest, and the replayed ones are those labeled before this epoch.
  for (const EpochLog& e : rec.epochs) {
    std::vector<std::size_t> kept;
    const std::size_t total = 5 * (e.epoch + 1);
    for (std::size_t f = (total > 8 ? total - 8 + 1 : 1); f <= 5 * e.epoch; ++f) kept.push_back(f);
    std::vector<std::size_t> got = e.replayed;
    std::sort(got.begin(), got.end());
    EXPECT_EQ(got, kept) << "epoch " << e.epoch;
  }
}

TEST(Pipeline, SelectionNeverDuplicatesIncoming) {
  const RunRecord rec = run(small_config(UpdatePolicy::uniform, SelectPolicy::uniform));
  for (const EpochLog& e : rec.epochs) {
    std::set<std::size_t> in(e.incoming.begin(), e.incoming.end());
    for (std::size_t r : e.replayed) EXPECT_FALSE(in.count(r));
  }
}

TEST(Pipeline, EpochWithoutDataIsNoOp) {
  PipelineConfig c = small_config();
  c.stream.r_t = 12;  // first label at t = 12, first epoch ends at t = 5
  const RunRecord rec = run(c);
  EXPECT_FALSE(rec.epochs[0].trained);
  EXPECT_EQ(rec.transfers[0].params, rec.initial);
  EXPECT_FALSE(rec.epochs[1].trained);
  EXPECT_TRUE(rec.epochs[2].trained);
}

TEST(Pipeline, NoRegularizerEqualsMasDuringWarmup) {
  PipelineConfig none = small_config(UpdatePolicy::uniform, SelectPolicy::uniform, RegMethod::none);
  PipelineConfig mas = none;
  mas.reg.method = RegMethod::mas;
  none.reg.warmup_epochs = mas.reg.warmup_epochs = 100;
  const RunRecord a = run(none), b = run(mas);
  ASSERT_EQ(a.transfers.size(), b.transfers.size());
  for (std::size_t k = 0; k < a.transfers.size(); ++k) EXPECT_EQ(a.transfers[k].params, b.transfers[k].params);
  for (const EpochLog& e : b.epochs) EXPECT_EQ(e.penalty, 0.0);

  // After warmup the two diverge.
  none.reg.warmup_epochs = mas.reg.warmup_epochs = 2;
  EXPECT_NE(run(none).final_params(), run(mas).final_params());
}

TEST(Pipeline, InferenceParamsMatchLinearScan) {
  const RunRecord rec = run(small_config(UpdatePolicy::uniform, SelectPolicy::uniform));
  auto scan = [&](double t) -> const ParamVector& {
    const ParamVector* p = &rec.initial;
    for (const auto& tr : rec.transfers)
      if (tr.time <= t) p = &tr.params;
    return *p;
  };
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> when(0.0, 80.0);
  for (int n = 0; n < 500; ++n) {
    const double t = when(rng);
    EXPECT_EQ(&inference_params_at(rec, t), &scan(t));
  }
  EXPECT_EQ(&inference_params_at(rec, 4.999), &rec.initial);
  EXPECT_EQ(&inference_params_at(rec, 5.0), &rec.transfers[0].params);
  EXPECT_EQ(&inference_params_at(rec, 10.0), &rec.transfers[1].params);
}

TEST(Pipeline, ServedParametersChangeOnlyAtTransfers) {
  const PipelineConfig c = small_config(UpdatePolicy::uniform, SelectPolicy::uniform);
  const RunRecord rec = run(c);
  for (std::size_t i = 0; i < rec.served_version.size(); ++i) {
    // Inference at a transfer instant runs first, so it sees the previous snapshot.
    std::size_t before = 0;
    for (const auto& tr : rec.transfers)
      if (tr.time < static_cast<double>(i) / c.stream.r_v) ++before;
    EXPECT_EQ(rec.served_version[i], before) << "frame " << i;
  }
  EXPECT_EQ(rec.atomicity_violations, 0u);
}

TEST(Pipeline, ServedConfusionMatchesRecomputation) {
  const PipelineConfig c = small_config(UpdatePolicy::uniform, SelectPolicy::uniform);
  const RunRecord rec = run(c);
  const SyntheticStream stream(c.stream);
  for (std::size_t i : {0u, 7u, 23u, 39u, 79u}) {
    const std::size_t v = rec.served_version[i];
    const ParamVector& theta = v == 0 ? rec.initial : rec.transfers[v - 1].params;
    const Frame f = stream.frame_at(i);
    ConfusionMatrix want(c.model.num_classes);
    want.add(stream.teacher_label(f), predict(c.model, theta, f));
    EXPECT_TRUE(rec.served_confusion(i) == want);
  }
}

TEST(Pipeline, LockstepThreadedRunEqualsVirtualRun) {
  for (auto [u, s, r] : {std::tuple{UpdatePolicy::uniform, SelectPolicy::mir, RegMethod::mas},
                         std::tuple{UpdatePolicy::fifo, SelectPolicy::all, RegMethod::none}}) {
    PipelineConfig c = small_config(u, s, r);
    const RunRecord virt = run(c);
    c.mode = ExecutionMode::threaded;
    c.lockstep = true;
    EXPECT_TRUE(run(c) == virt);
  }
}

TEST(Pipeline, FreeRunningThreadedRunIsLiveAndAtomic) {
  PipelineConfig c = small_config(UpdatePolicy::uniform, SelectPolicy::uniform);
  c.mode = ExecutionMode::threaded;
  c.lockstep = false;
  const RunRecord rec = run(c);
  EXPECT_EQ(rec.transfers.size(), 16u);
  EXPECT_EQ(rec.epochs.size(), 16u);
  EXPECT_EQ(rec.atomicity_violations, 0u);
  EXPECT_TRUE(std::is_sorted(rec.served_version.begin(), rec.served_version.end()));
}

TEST(Snapshot, ChecksumDetectsTornParameters) {
  auto snap = Snapshot::make(3, 1.0, ParamVector{{1.0, 2.0, 3.0}});
  EXPECT_TRUE(snap->intact());
  Snapshot torn = *snap;
  torn.params.values[1] = 2.5;
  EXPECT_FALSE(torn.intact());
  Snapshot relabeled = *snap;
  relabeled.version = 4;
  EXPECT_FALSE(relabeled.intact());
}
