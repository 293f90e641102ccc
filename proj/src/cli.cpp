#include "home/cli.hpp"

#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "home/checkpoint.hpp"
#include "home/config.hpp"
#include "home/log.hpp"
#include "home/metrics.hpp"
#include "home/pipeline.hpp"

namespace home {
namespace {

struct GlobalFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::vector<std::string> sets;
  bool quiet = false;
};

RunConfig resolve_config(const GlobalFlags& g) {
  RunConfig cfg = g.config.empty() ? default_run_config() : load_run_config(g.config);
  apply_seed_env(cfg);
  if (g.seed) {
    cfg.seed = *g.seed;
    cfg.derive_seeds();
  }
  if (!g.out_dir.empty()) cfg.out_dir = g.out_dir;
  for (const auto& kv : g.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    const std::uint64_t before = cfg.seed;
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    if (cfg.seed != before) cfg.derive_seeds();
  }
  cfg.validate();
  if (cfg.threads > 0) setenv("HOME_MOE_THREADS", std::to_string(cfg.threads).c_str(), 1);
  return cfg;
}

std::string or_default(const std::string& v, const std::filesystem::path& fallback) {
  return v.empty() ? fallback.string() : v;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Hybrid thinking / non-thinking MoE training pipeline at desk scale", "home-moe"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalFlags g;
  app.add_option("--config", g.config, "Run config file (section.key = value lines)");
  app.add_option("--seed", g.seed, "Global seed (overrides the config file and HOME_MOE_SEED)");
  app.add_option("--out-dir", g.out_dir, "Output directory (overrides run.out_dir)");
  app.add_option("--set", g.sets, "Override one config key, e.g. --set rl.total_steps=50")->take_all();
  app.add_flag("--quiet", g.quiet, "Only print warnings and errors");

  std::string in, out, data, checkpoint, benchmark, mode = "auto";

  auto* gen = app.add_subcommand("gen-data", "Generate training pools and held-out benchmarks");
  auto* pretrain = app.add_subcommand("pretrain", "Warm-up SFT of the dense model on reasoning transcripts");
  pretrain->add_option("--out", out, "Output checkpoint");
  auto* rl = app.add_subcommand("train-rl", "Stage-RL on the dense model");
  rl->add_option("--in", in, "Input dense checkpoint");
  rl->add_option("--out", out, "Output dense checkpoint");
  auto* exp = app.add_subcommand("expand", "Expand a dense checkpoint into a two-expert hybrid");
  exp->add_option("--in", in, "Input dense checkpoint");
  exp->add_option("--out", out, "Output hybrid checkpoint");
  auto* cur = app.add_subcommand("curate", "Passrate curation plus balanced non-thinking data");
  cur->add_option("--in", in, "Policy checkpoint (dense, or hybrid thinking expert)");
  cur->add_option("--out", out, "Output SFT corpus (JSONL)");
  auto* sft = app.add_subcommand("train-sft", "Mixed SFT of experts and router");
  sft->add_option("--in", in, "Input hybrid checkpoint");
  sft->add_option("--data", data, "SFT corpus (JSONL)");
  sft->add_option("--out", out, "Output hybrid checkpoint");
  auto* ev = app.add_subcommand("eval", "Greedy evaluation of a checkpoint on a benchmark");
  ev->add_option("--checkpoint", checkpoint, "Dense or hybrid checkpoint")->required();
  ev->add_option("--benchmark", benchmark, "Benchmark name (reasoning-dev, simple-dev, mixed-dev) or JSONL path")
      ->required();
  ev->add_option("--mode", mode, "auto (router), thinking or nonthinking")
      ->check(CLI::IsMember({"auto", "thinking", "nonthinking"}));
  ev->add_option("--out", out, "Report CSV (default reports/eval_<benchmark>.csv)");
  auto* analyze = app.add_subcommand("analyze", "Rebuild figures from logs and reports");
  auto* pipeline = app.add_subcommand("pipeline", "Run every stage in order");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (g.quiet) set_quiet(true);
    const RunConfig cfg = resolve_config(g);
    const Layout layout = layout_for(cfg);
    layout.create();
    if (gen->parsed()) {
      stage_gen_data(cfg, layout);
    } else if (pretrain->parsed()) {
      stage_pretrain(cfg, layout, or_default(out, layout.ckpt("dense_warmup.ckpt")));
    } else if (rl->parsed()) {
      stage_train_rl(cfg, layout, or_default(in, layout.ckpt("dense_warmup.ckpt")),
                     or_default(out, layout.ckpt("dense_rl.ckpt")));
    } else if (exp->parsed()) {
      stage_expand(cfg, or_default(in, layout.ckpt("dense_rl.ckpt")), or_default(out, layout.ckpt("hybrid_init.ckpt")));
    } else if (cur->parsed()) {
      stage_curate(cfg, layout, or_default(in, layout.ckpt("dense_rl.ckpt")),
                   or_default(out, layout.data("sft_train.jsonl")));
    } else if (sft->parsed()) {
      stage_train_sft(cfg, layout, or_default(in, layout.ckpt("hybrid_init.ckpt")),
                      or_default(data, layout.data("sft_train.jsonl")),
                      or_default(out, layout.ckpt("hybrid_final.ckpt")));
    } else if (ev->parsed()) {
      const auto bench = load_benchmark(layout, benchmark);
      const std::string name = std::filesystem::path(benchmark).stem().string();
      const EvalReport r = evaluate_checkpoint(cfg, checkpoint, bench, name, mode);
      const std::string path = or_default(out, layout.reports("eval_" + name + ".csv"));
      emit_csv(reports_table({r}), path);
      emit_csv(subfamily_table({r}), std::filesystem::path(path).replace_extension(".subfamilies.csv"));
      std::cout << name << ": accuracy " << fmt_num(r.accuracy) << ", thinking ratio " << fmt_num(r.thinking_ratio)
                << " (n=" << r.n << ") -> " << path << '\n';
    } else if (analyze->parsed()) {
      stage_analyze(cfg, layout);
    } else if (pipeline->parsed()) {
      run_pipeline(cfg);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace home
