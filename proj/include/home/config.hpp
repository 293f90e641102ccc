#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "home/grpo.hpp"
#include "home/hybrid.hpp"
#include "home/model.hpp"
#include "home/sft.hpp"

namespace home {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  /// Seed for every generated corpus; benchmarks stay fixed across run seeds.
  std::uint64_t seed = 20251;
  int min_depth = 2;
  int max_depth = 4;
  int warmup_size = 4000;
  int rl_pool_size = 2000;
  int sft_pool_size = 600;
  int simple_pool_size = 2000;
  int bench_size = 100;
  int mixed_size = 100;
};

struct CurationSettings {
  int n_samples = 8;
  int self_distill_cap = 2;
};

struct ExpandSettings {
  int router_hidden = 32;
  /// Which dense checkpoint seeds the experts: "rl" (default) or "warmup".
  std::string init = "rl";
};

struct EvalSettings {
  int max_new = 80;
};

/// Every stage's settings. Loaded from `section.key = value` lines; any key
/// not listed here is an error.
struct RunConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "runs/default";
  int threads = 0;
  ModelConfig model;
  DataConfig data;
  WarmupConfig warmup;
  RLConfig rl;
  ExpandSettings expand;
  CurationSettings curation;
  SftConfig sft;
  EvalSettings eval;

  /// Pushes the run seed into each stage's seed (distinct per stage).
  void derive_seeds();
  void validate() const;
};

RunConfig default_run_config();

/// Applies `text` on top of `base`. Throws ConfigError naming the line for
/// malformed lines, unknown keys and unparsable values.
RunConfig parse_run_config(std::string_view text, RunConfig base = default_run_config());
RunConfig load_run_config(const std::filesystem::path& path);

/// Sets one key, e.g. set_config_value(cfg, "rl.lr", "1e-4").
void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value);
/// All keys with current values, in a stable order, as config text.
std::string dump_run_config(const RunConfig& cfg);
std::vector<std::string> config_keys();

/// HOME_MOE_SEED, when set, replaces cfg.seed. Returns true if applied.
bool apply_seed_env(RunConfig& cfg);

}  // namespace home
