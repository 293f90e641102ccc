#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "home/config.hpp"
#include "home/curation.hpp"
#include "home/hybrid.hpp"
#include "home/metrics.hpp"
#include "home/model.hpp"
#include "home/tasks.hpp"

namespace home {

/// Where each artifact of a run lives under the output directory.
struct Layout {
  std::filesystem::path root;

  std::filesystem::path data(const std::string& name) const { return root / "data" / name; }
  std::filesystem::path ckpt(const std::string& name) const { return root / "ckpt" / name; }
  std::filesystem::path logs(const std::string& name) const { return root / "logs" / name; }
  std::filesystem::path reports(const std::string& name) const { return root / "reports" / name; }
  std::filesystem::path figures(const std::string& name) const { return root / "figures" / name; }
  void create() const;
};

Layout layout_for(const RunConfig& cfg);

/// The three held-out sets written by gen-data.
const std::vector<std::string>& benchmark_names();

struct GeneratedData {
  std::vector<PromptRecord> warmup, rl_pool, sft_pool, simple_pool;
  std::vector<PromptRecord> reasoning_dev, simple_dev, mixed_dev;
};

/// Deterministic in data.seed. Training pools never share a prompt text with
/// any benchmark.
GeneratedData generate_data(const DataConfig& cfg);

/// Accepts a benchmark name (resolved under data/) or a JSONL path.
std::vector<PromptRecord> load_benchmark(const Layout& layout, const std::string& name_or_path);

void stage_gen_data(const RunConfig& cfg, const Layout& layout);
DenseParams stage_pretrain(const RunConfig& cfg, const Layout& layout, const std::filesystem::path& out);
DenseParams stage_train_rl(const RunConfig& cfg, const Layout& layout, const std::filesystem::path& in,
                           const std::filesystem::path& out);
HybridParams stage_expand(const RunConfig& cfg, const std::filesystem::path& in, const std::filesystem::path& out);
/// Curates sft_pool with the given checkpoint's thinking policy (dense, or
/// the thinking expert of a hybrid), balances in non-thinking samples and
/// writes the SFT corpus plus the curation report.
CurationResult stage_curate(const RunConfig& cfg, const Layout& layout, const std::filesystem::path& in,
                            const std::filesystem::path& out);
HybridParams stage_train_sft(const RunConfig& cfg, const Layout& layout, const std::filesystem::path& in,
                             const std::filesystem::path& data, const std::filesystem::path& out);

/// "auto" routes hybrids; "thinking"/"nonthinking" force one expert. Dense
/// checkpoints ignore the mode.
EvalReport evaluate_checkpoint(const RunConfig& cfg, const std::filesystem::path& ckpt,
                               const std::vector<PromptRecord>& bench, const std::string& bench_name,
                               const std::string& mode = "auto");

/// Rebuilds figures and summary tables from whatever logs and reports exist.
void stage_analyze(const RunConfig& cfg, const Layout& layout);

struct PipelineSummary {
  /// Keyed "model/benchmark", model in {warmup, rl, hybrid}.
  std::map<std::string, EvalReport> reports;
  std::map<std::string, double> stage_seconds;
  double total_seconds = 0.0;
  bool expansion_identity_ok = false;
};

/// gen-data -> pretrain -> train-rl -> expand -> curate -> train-sft -> eval -> analyze.
PipelineSummary run_pipeline(const RunConfig& cfg);

}  // namespace home
