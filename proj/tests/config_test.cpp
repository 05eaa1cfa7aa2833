#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <gtest/gtest.h>

#include "odcl/config.hpp"
#include "odcl/experiment.hpp"

using namespace odcl;

namespace {

EnvLookup env_of(std::map<std::string, std::string> vars) {
  return [vars](const std::string& k) -> std::optional<std::string> {
    auto it = vars.find(k);
    if (it == vars.end()) return std::nullopt;
    return it->second;
  };
}

const EnvLookup no_env = env_of({});

bool has_key(const ValidationResult& r, const std::string& key) {
  for (const auto& e : r.errors)
    if (e.key == key) return true;
  return false;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

const char* kTiny = R"(
stream.grid_h = 4
stream.grid_w = 4
stream.cycle_len = 20
stream.num_cycles = 2
stream.r_v = 1
stream.r_t = 1
stream.r_sc = 5
model.hidden_dim = 8
buffer.capacity = 12
buffer.batch_select = 6
buffer.mir_candidates = 12
train.lr = 0.02
metric.window = 10
metric.nds_halfwidth = 5
experiment.methods = memoryless, fifo-all-none, uniform-mir-rwalk
experiment.seeds = 1, 2
)";

}  // namespace

TEST(Config, DefaultsFollowReferenceSetting) {
  const auto r = validate_config("", no_env);
  ASSERT_TRUE(r.ok());
  const ExperimentConfig& c = *r.config;
  EXPECT_EQ(c.base.buffer.capacity, 250u);
  EXPECT_EQ(c.base.buffer.batch_select, 100u);
  EXPECT_DOUBLE_EQ(c.base.lr, 1e-4);
  EXPECT_DOUBLE_EQ(c.base.stream.r_v, 30.0);
  EXPECT_DOUBLE_EQ(c.base.stream.r_t, 3.0);
  EXPECT_DOUBLE_EQ(c.base.stream.r_sc, 60.0);
  ASSERT_EQ(c.methods.size(), 1u);
  EXPECT_EQ(c.methods[0].name(), "fifo-all-none");
  EXPECT_EQ(c.metric.shift, c.base.stream.cycle_len);
}

TEST(Config, ShippedPresetsValidate) {
  for (const char* name : {"default.cfg", "desk.cfg"}) {
    const auto r = validate_config(read_file(std::filesystem::path(ODCL_CONFIG_DIR) / name), no_env);
    EXPECT_TRUE(r.ok()) << name << ": " << (r.errors.empty() ? "" : r.errors.front().message);
  }
}

TEST(Config, BatchLargerThanBufferNamesKey) {
  const auto r = validate_config(
      "buffer.capacity = 10\nbuffer.batch_select = 20\nbuffer.update_policy = uniform\nbuffer.select_policy = uniform\n",
      no_env);
  EXPECT_FALSE(r.ok());
  EXPECT_TRUE(has_key(r, "buffer.batch_select"));
}

TEST(Config, UnknownRegularizerListsValidNames) {
  const auto r = validate_config("reg.method = ewc\n", no_env);
  ASSERT_FALSE(r.ok());
  ASSERT_TRUE(has_key(r, "reg.method"));
  for (const char* m : {"none", "ace", "lwf", "mas", "rwalk"})
    EXPECT_NE(r.errors.front().message.find(m), std::string::npos) << m;
}

TEST(Config, EmptySeedListRejected) {
  const auto r = validate_config("experiment.seeds =\n", no_env);
  EXPECT_FALSE(r.ok());
  EXPECT_TRUE(has_key(r, "experiment.seeds"));
}

TEST(Config, CollectsAllErrors) {
  const auto r = validate_config("bogus.key = 1\nbuffer.capacity = abc\nreg.lambda = -1\nmissing equals\n", no_env);
  EXPECT_FALSE(r.ok());
  EXPECT_GE(r.errors.size(), 4u);
  EXPECT_TRUE(has_key(r, "bogus.key"));
  EXPECT_TRUE(has_key(r, "buffer.capacity"));
  EXPECT_TRUE(has_key(r, "reg.lambda"));
}

TEST(Config, DuplicateKeyRejected) {
  EXPECT_TRUE(has_key(validate_config("train.lr = 0.1\ntrain.lr = 0.2\n", no_env), "train.lr"));
}

TEST(Config, EnvironmentOverridesFile) {
  EXPECT_EQ(env_name("buffer.capacity"), "ODCL_BUFFER_CAPACITY");
  const auto r = validate_config("buffer.capacity = 300\n", env_of({{"ODCL_BUFFER_CAPACITY", "400"}}));
  ASSERT_TRUE(r.ok());
  EXPECT_EQ(r.config->base.buffer.capacity, 400u);
  EXPECT_FALSE(validate_config("", env_of({{"ODCL_TRAIN_LR", "fast"}})).ok());
}

TEST(Config, KeysAreCaseInsensitive) {
  const auto r = validate_config("stream.r_V = 10\nstream.r_T = 2\nstream.r_Sc = 20\n", no_env);
  ASSERT_TRUE(r.ok());
  EXPECT_DOUBLE_EQ(r.config->base.stream.r_v, 10.0);
  EXPECT_DOUBLE_EQ(r.config->base.stream.r_t, 2.0);
  EXPECT_DOUBLE_EQ(r.config->base.stream.r_sc, 20.0);
}

TEST(Config, CommentsAndBlankLinesIgnored) {
  const auto r = validate_config("# header\n\n  train.lr = 0.5  # inline\n", no_env);
  ASSERT_TRUE(r.ok());
  EXPECT_DOUBLE_EQ(r.config->base.lr, 0.5);
}

TEST(Config, MethodNames) {
  EXPECT_EQ(parse_method("memoryless")->name(), "none-none-none");
  EXPECT_EQ(parse_method("uniform-mir-rwalk")->name(), "uniform-mir-rwalk");
  EXPECT_FALSE(parse_method("uniform-mir").has_value());
  EXPECT_FALSE(parse_method("fifo-all-ewc").has_value());
  EXPECT_EQ(run_id(*parse_method("fifo-all-none"), 3), "fifo-all-none_3");
}

TEST(Config, ConfigureRunAppliesMethodAndSeed) {
  ExperimentConfig cfg = *validate_config(kTiny, no_env).config;
  const PipelineConfig base = configure_run(cfg, *parse_method("fifo-all-none"), 2);
  EXPECT_EQ(base.buffer.capacity, base.buffer.batch_select);
  EXPECT_EQ(base.stream.seed, 2u);
  EXPECT_EQ(base.model.init_seed, 2u);
  const PipelineConfig mir = configure_run(cfg, *parse_method("uniform-mir-rwalk"), 1);
  EXPECT_EQ(mir.buffer.capacity, 12u);
  EXPECT_EQ(mir.buffer.select_policy, SelectPolicy::mir);
  EXPECT_EQ(mir.reg.method, RegMethod::rwalk);
}

TEST(Experiment, WritesOutputsAndIsByteDeterministic) {
  namespace fs = std::filesystem;
  ExperimentConfig cfg = *validate_config(kTiny, no_env).config;
  const fs::path root = fs::temp_directory_path() / "odcl_config_test";
  fs::remove_all(root);
  std::map<std::string, std::string> first;
  for (const char* sub : {"a", "b"}) {
    cfg.output_dir = (root / sub).string();
    const ExperimentResult res = run_experiment(cfg);
    EXPECT_TRUE(res.all_ok());
    EXPECT_EQ(res.runs.size(), 6u);
    ASSERT_EQ(res.table.size(), 3u);
    for (const auto& run : res.runs) {
      const std::string csv = read_file(fs::path(cfg.output_dir) / (run.run_id + ".csv"));
      EXPECT_EQ(csv.rfind("run_id,i_prime,", 0), 0u);
      if (first.count(run.run_id)) {
        EXPECT_EQ(csv, first[run.run_id]) << run.run_id;
      } else {
        first[run.run_id] = csv;
      }
      EXPECT_TRUE(fs::exists(fs::path(cfg.output_dir) / (run.run_id + ".json")));
    }
    EXPECT_TRUE(fs::exists(fs::path(cfg.output_dir) / "summary.json"));
    EXPECT_TRUE(fs::exists(fs::path(cfg.output_dir) / "summary.md"));
  }
  EXPECT_EQ(read_file(root / "a" / "summary.json"), read_file(root / "b" / "summary.json"));
  fs::remove_all(root);
}
