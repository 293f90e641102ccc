#include "home/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <unordered_set>

#include "home/checkpoint.hpp"
#include "home/grpo.hpp"
#include "home/log.hpp"
#include "home/parallel.hpp"
#include "home/sft.hpp"
#include "home/tokenizer.hpp"

namespace home {
namespace fs = std::filesystem;

void Layout::create() const {
  for (const char* sub : {"data", "ckpt", "logs", "reports", "figures"}) fs::create_directories(root / sub);
}

Layout layout_for(const RunConfig& cfg) { return Layout{fs::path(cfg.out_dir)}; }

const std::vector<std::string>& benchmark_names() {
  static const std::vector<std::string> names = {"reasoning-dev", "simple-dev", "mixed-dev"};
  return names;
}

namespace {

constexpr std::uint64_t kWarmupIds = 0, kRlIds = 100000, kSftIds = 200000, kSimpleIds = 300000;
constexpr std::uint64_t kReasoningDevIds = 1000000, kSimpleDevIds = 2000000, kMixedDevIds = 3000000;

template <typename Gen>
std::vector<PromptRecord> fill_excluding(int n, std::uint64_t first_id, const std::unordered_set<std::string>& excluded,
                                         Gen gen) {
  std::vector<PromptRecord> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::uint64_t i = 0; static_cast<int>(out.size()) < n; ++i) {
    PromptRecord r = gen(i);
    if (excluded.count(r.prompt)) continue;
    r.id = first_id + out.size();
    out.push_back(std::move(r));
  }
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string opt_num(const std::optional<double>& v) { return v ? fmt_num(*v) : ""; }

std::vector<SftSample> reference_samples(const std::vector<PromptRecord>& records) {
  std::vector<SftSample> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(sample_from_reference(r));
  return out;
}

EvalOptions eval_options(const RunConfig& cfg) { return EvalOptions{cfg.eval.max_new}; }

void write_manifest(const Layout& layout, const std::vector<std::pair<std::string, std::size_t>>& entries) {
  std::ofstream out(layout.data("manifest.tsv"));
  if (!out) throw std::runtime_error("cannot write data manifest");
  out << "file\tcount\tfnv1a64\n";
  for (const auto& [name, n] : entries) out << name << '\t' << n << '\t' << file_hash(layout.data(name)) << '\n';
}

}  // namespace

GeneratedData generate_data(const DataConfig& c) {
  GeneratedData d;
  const int span = c.max_depth - c.min_depth + 1;
  auto reasoning = [&](std::uint64_t tag) {
    return [&c, span, tag](std::uint64_t i) {
      return gen_reasoning_task(hash_seed(c.seed, tag, i), c.min_depth + static_cast<int>(i % span));
    };
  };
  auto simple = [&](std::uint64_t tag) { return [&c, tag](std::uint64_t i) { return gen_simple_task(hash_seed(c.seed, tag, i)); }; };

  const std::unordered_set<std::string> none;
  d.reasoning_dev = fill_excluding(c.bench_size, kReasoningDevIds, none, reasoning(1));
  d.simple_dev = fill_excluding(c.bench_size, kSimpleDevIds, none, simple(2));
  d.mixed_dev = gen_mixed_benchmark(hash_seed(c.seed, 3), c.mixed_size);
  for (std::size_t i = 0; i < d.mixed_dev.size(); ++i) d.mixed_dev[i].id = kMixedDevIds + i;

  std::unordered_set<std::string> held_out;
  for (const auto* set : {&d.reasoning_dev, &d.simple_dev, &d.mixed_dev}) {
    for (const auto& r : *set) held_out.insert(r.prompt);
  }
  d.warmup = fill_excluding(c.warmup_size, kWarmupIds, held_out, reasoning(10));
  d.rl_pool = fill_excluding(c.rl_pool_size, kRlIds, held_out, reasoning(11));
  d.sft_pool = fill_excluding(c.sft_pool_size, kSftIds, held_out, reasoning(12));
  d.simple_pool = fill_excluding(c.simple_pool_size, kSimpleIds, held_out, simple(13));
  return d;
}

std::vector<PromptRecord> load_benchmark(const Layout& layout, const std::string& name_or_path) {
  for (const auto& n : benchmark_names()) {
    if (n == name_or_path) return read_records(layout.data(n + ".jsonl"));
  }
  if (fs::exists(name_or_path)) return read_records(name_or_path);
  throw std::runtime_error("unknown benchmark '" + name_or_path + "' (not a benchmark name or a file)");
}

void stage_gen_data(const RunConfig& cfg, const Layout& layout) {
  layout.create();
  const GeneratedData d = generate_data(cfg.data);
  const std::vector<std::pair<std::string, const std::vector<PromptRecord>*>> sets = {
      {"warmup.jsonl", &d.warmup},         {"rl_pool.jsonl", &d.rl_pool},
      {"sft_pool.jsonl", &d.sft_pool},     {"simple_pool.jsonl", &d.simple_pool},
      {"reasoning-dev.jsonl", &d.reasoning_dev}, {"simple-dev.jsonl", &d.simple_dev},
      {"mixed-dev.jsonl", &d.mixed_dev}};
  std::vector<std::pair<std::string, std::size_t>> manifest;
  for (const auto& [name, recs] : sets) {
    write_records(*recs, layout.data(name));
    manifest.emplace_back(name, recs->size());
  }
  write_manifest(layout, manifest);
  log_info("gen-data: wrote " + std::to_string(sets.size()) + " corpora to " + layout.data("").string());
}

DenseParams stage_pretrain(const RunConfig& cfg, const Layout& layout, const fs::path& out) {
  layout.create();
  const auto warm = read_records(layout.data("warmup.jsonl"));
  const auto dev = read_records(layout.data("reasoning-dev.jsonl"));
  DenseParams params = DenseParams::init(cfg.model);
  WarmupHooks hooks;
  hooks.evaluate = [&](const DenseParams& p) { return evaluate(p, dev, "reasoning-dev", eval_options(cfg)).accuracy; };
  hooks.on_step = [](const WarmupStepLog& r) {
    if (r.eval_acc) {
      log_info("pretrain step " + std::to_string(r.step) + " loss " + fmt_num(r.loss) + " reasoning-dev acc " +
               fmt_num(*r.eval_acc));
    }
  };
  const auto log = warmup_train(cfg.warmup, params, reference_samples(warm), hooks);
  CsvTable t;
  t.columns = {"step", "loss", "eval_acc", "wallclock_s"};
  for (const auto& r : log) {
    t.rows.push_back({std::to_string(r.step), fmt_num(r.loss), opt_num(r.eval_acc), fmt_num(r.wallclock_s)});
  }
  emit_csv(t, layout.logs("warmup_log.csv"));
  save_checkpoint(params, out);
  return params;
}

DenseParams stage_train_rl(const RunConfig& cfg, const Layout& layout, const fs::path& in, const fs::path& out) {
  layout.create();
  DenseParams params = load_dense(in);
  const auto pool = read_records(layout.data("rl_pool.jsonl"));
  const auto dev = read_records(layout.data("reasoning-dev.jsonl"));
  RLHooks hooks;
  hooks.evaluate = [&](const DenseParams& p) { return evaluate(p, dev, "reasoning-dev", eval_options(cfg)).accuracy; };
  hooks.on_step = [](const RLStepLog& r) {
    if (r.eval_acc) {
      log_info("train-rl step " + std::to_string(r.step) + " reward " + fmt_num(r.mean_reward) + " drop " +
               fmt_num(r.drop_rate) + " reasoning-dev acc " + fmt_num(*r.eval_acc));
    }
  };
  const RLResult res = rl_train(cfg.rl, params, pool, hooks);
  CsvTable t;
  t.columns = {"step", "mean_reward", "drop_rate", "clip_frac", "loss", "eval_acc", "wallclock_s"};
  for (const auto& r : res.log) {
    t.rows.push_back({std::to_string(r.step), fmt_num(r.mean_reward), fmt_num(r.drop_rate), fmt_num(r.clip_frac),
                      fmt_num(r.loss), opt_num(r.eval_acc), fmt_num(r.wallclock_s)});
  }
  emit_csv(t, layout.logs("rl_log.csv"));
  if (res.stopped_early) {
    log_info("train-rl: time budget reached after " + std::to_string(res.log.back().step) + " steps");
  }
  if (res.skipped_batches > 0) log_warn("train-rl: " + std::to_string(res.skipped_batches) + " batch(es) skipped");
  save_checkpoint(params, out);
  return params;
}

HybridParams stage_expand(const RunConfig& cfg, const fs::path& in, const fs::path& out) {
  const DenseParams dense = load_dense(in);
  RouterConfig rc;
  rc.hidden = cfg.expand.router_hidden;
  HybridParams h = expand(dense, hash_seed(cfg.seed, 0x657870616e64ULL), rc);
  if (!out.empty()) save_checkpoint(h, out);
  return h;
}

CurationResult stage_curate(const RunConfig& cfg, const Layout& layout, const fs::path& in, const fs::path& out) {
  layout.create();
  const auto pool = read_records(layout.data("sft_pool.jsonl"));
  const auto simple_pool = read_records(layout.data("simple_pool.jsonl"));
  SamplingConfig sc = cfg.rl.sampling();
  sc.max_new = cfg.eval.max_new;
  CurationConfig cc;
  cc.n_samples = cfg.curation.n_samples;
  cc.self_distill_cap = cfg.curation.self_distill_cap;
  cc.seed = hash_seed(cfg.seed, 0x6375726174ULL);

  CurationResult res;
  if (checkpoint_kind(in) == CheckpointKind::Hybrid) {
    const HybridParams h = load_hybrid(in);
    res = curate(model_sampler(h.view(Mode::Thinking), sc), pool, cc);
  } else {
    const DenseParams d = load_dense(in);
    res = curate(model_sampler(d.view(), sc), pool, cc);
  }
  const std::size_t thinking = res.samples.size();
  auto nonthinking = nonthinking_samples(thinking, cfg.sft.mix_thinking, cfg.sft.mix_nonthinking, simple_pool);
  std::vector<SftSample> all = res.samples;
  all.insert(all.end(), nonthinking.begin(), nonthinking.end());
  write_sft_samples(all, out);
  write_curation_report(res.buckets, layout.logs("curation_report.jsonl"));
  std::size_t counts[3] = {0, 0, 0};
  for (const auto& b : res.buckets) ++counts[static_cast<int>(b.disposition)];
  log_info("curate: " + std::to_string(counts[0]) + " discarded, " + std::to_string(counts[1]) +
           " self-distilled, " + std::to_string(counts[2]) + " oracle-injected; " + std::to_string(thinking) +
           " thinking + " + std::to_string(nonthinking.size()) + " non-thinking samples");
  res.samples = std::move(all);
  return res;
}

HybridParams stage_train_sft(const RunConfig& cfg, const Layout& layout, const fs::path& in, const fs::path& data,
                             const fs::path& out) {
  layout.create();
  HybridParams h = load_hybrid(in);
  const auto dataset = read_sft_samples(data);
  std::vector<std::pair<std::string, std::vector<PromptRecord>>> benches;
  for (const auto& n : benchmark_names()) benches.emplace_back(n, load_benchmark(layout, n));

  SftHooks hooks;
  hooks.evaluate = [&](const HybridParams& hp) {
    NamedValues out;
    for (const auto& [name, bench] : benches) {
      const EvalReport r = evaluate(hp, bench, name, eval_options(cfg));
      out.emplace_back(name + "_acc", r.accuracy);
      out.emplace_back(name + "_thinking_ratio", r.thinking_ratio);
    }
    return out;
  };
  hooks.on_step = [](const SftStepLog& r) {
    if (r.eval.empty()) return;
    std::string line = "train-sft step " + std::to_string(r.step) + " L_total " + fmt_num(r.l_total);
    for (const auto& [k, v] : r.eval) line += " " + k + " " + fmt_num(v);
    log_info(line);
  };
  const SftResult res = sft_train(cfg.sft, h, dataset, hooks);

  CsvTable t;
  t.columns = {"step", "L_total", "L_prediction", "L_router"};
  for (const auto& n : benchmark_names()) {
    t.columns.push_back(n + "_acc");
    t.columns.push_back(n + "_thinking_ratio");
  }
  t.columns.push_back("wallclock_s");
  for (const auto& r : res.log) {
    std::vector<std::string> row = {std::to_string(r.step), fmt_num(r.l_total), fmt_num(r.l_prediction),
                                    fmt_num(r.l_router)};
    for (std::size_t c = 4; c + 1 < t.columns.size(); ++c) {
      std::string cell;
      for (const auto& [k, v] : r.eval) {
        if (k == t.columns[c]) cell = fmt_num(v);
      }
      row.push_back(cell);
    }
    row.push_back(fmt_num(r.wallclock_s));
    t.rows.push_back(std::move(row));
  }
  emit_csv(t, layout.logs("sft_log.csv"));
  if (res.skipped_samples > 0) log_warn("train-sft: skipped " + std::to_string(res.skipped_samples) + " sample(s)");
  save_checkpoint(h, out);
  return h;
}

EvalReport evaluate_checkpoint(const RunConfig& cfg, const fs::path& ckpt, const std::vector<PromptRecord>& bench,
                               const std::string& bench_name, const std::string& mode) {
  if (mode != "auto" && mode != "thinking" && mode != "nonthinking") {
    throw ContractError("eval mode must be auto, thinking or nonthinking");
  }
  if (checkpoint_kind(ckpt) == CheckpointKind::Dense) {
    return evaluate(load_dense(ckpt), bench, bench_name, eval_options(cfg));
  }
  const HybridParams h = load_hybrid(ckpt);
  if (mode == "auto") return evaluate(h, bench, bench_name, eval_options(cfg));
  return evaluate_forced(h, mode == "thinking" ? Mode::Thinking : Mode::NonThinking, bench, bench_name,
                         eval_options(cfg));
}

namespace {

/// Column `y` against column `x` for rows where both cells are filled.
Series series_from(const CsvTable& t, const std::string& x, const std::string& y, const std::string& name) {
  Series s{name, {}};
  std::size_t xi = t.columns.size(), yi = t.columns.size();
  for (std::size_t i = 0; i < t.columns.size(); ++i) {
    if (t.columns[i] == x) xi = i;
    if (t.columns[i] == y) yi = i;
  }
  if (xi == t.columns.size() || yi == t.columns.size()) return s;
  for (const auto& row : t.rows) {
    if (row[xi].empty() || row[yi].empty()) continue;
    s.points.emplace_back(std::stod(row[xi]), std::stod(row[yi]));
  }
  return s;
}

void chart_if_any(std::vector<Series> series, const ChartSpec& spec, const fs::path& path) {
  std::erase_if(series, [](const Series& s) { return s.points.empty(); });
  if (!series.empty()) emit_svg_lines(series, spec, path);
}

}  // namespace

void stage_analyze(const RunConfig& /*cfg*/, const Layout& layout) {
  layout.create();
  if (fs::exists(layout.logs("sft_log.csv"))) {
    const CsvTable t = read_csv(layout.logs("sft_log.csv"));
    std::vector<Series> ratio, acc;
    for (const auto& n : benchmark_names()) {
      ratio.push_back(series_from(t, "step", n + "_thinking_ratio", n));
      acc.push_back(series_from(t, "step", n + "_acc", n));
    }
    chart_if_any(ratio, {"Thinking ratio during mixed SFT", "SFT step", "fraction routed to thinking", 0.0, 1.0},
                 layout.figures("thinking_ratio_sft.svg"));
    chart_if_any(acc, {"Accuracy during mixed SFT", "SFT step", "greedy accuracy", 0.0, 1.0},
                 layout.figures("accuracy_sft.svg"));
    chart_if_any({series_from(t, "step", "L_total", "L_total"), series_from(t, "step", "L_prediction", "L_prediction"),
                  series_from(t, "step", "L_router", "L_router")},
                 {"SFT loss", "SFT step", "loss", NAN, NAN}, layout.figures("sft_loss.svg"));
  }
  if (fs::exists(layout.logs("rl_log.csv"))) {
    const CsvTable t = read_csv(layout.logs("rl_log.csv"));
    chart_if_any({series_from(t, "step", "mean_reward", "mean rollout reward"),
                  series_from(t, "step", "eval_acc", "reasoning-dev greedy accuracy"),
                  series_from(t, "step", "drop_rate", "filtered group fraction")},
                 {"Stage-RL training", "RL step", "value", 0.0, 1.0}, layout.figures("rl_training.svg"));
  }
  if (fs::exists(layout.logs("warmup_log.csv"))) {
    const CsvTable t = read_csv(layout.logs("warmup_log.csv"));
    chart_if_any({series_from(t, "step", "eval_acc", "reasoning-dev greedy accuracy")},
                 {"Warm-up", "step", "accuracy", 0.0, 1.0}, layout.figures("warmup.svg"));
  }
  if (fs::exists(layout.reports("eval_subfamilies.csv"))) {
    // Per-subfamily thinking ratio of the final model on the mixed benchmark, one point per subfamily.
    const CsvTable t = read_csv(layout.reports("eval_subfamilies.csv"));
    Series s{"hybrid on mixed-dev", {}};
    CsvTable legend;
    legend.columns = {"index", "subfamily", "n", "thinking_ratio", "accuracy"};
    for (const auto& row : t.rows) {
      if (row[0] != "mixed-dev" || row[1] != "hybrid") continue;
      const double x = static_cast<double>(s.points.size());
      s.points.emplace_back(x, std::stod(row[5]));
      legend.rows.push_back({std::to_string(s.points.size() - 1), row[2], row[3], row[5], row[4]});
    }
    if (!s.points.empty()) {
      emit_svg_lines({s}, {"Thinking ratio per subject of the mixed benchmark", "subfamily index (see CSV)",
                           "fraction routed to thinking", 0.0, 1.0},
                     layout.figures("mixed_subfamily_ratio.svg"));
      emit_csv(legend, layout.reports("mixed_subfamily_ratio.csv"));
    }
  }
}

PipelineSummary run_pipeline(const RunConfig& cfg) {
  cfg.validate();
  const Layout layout = layout_for(cfg);
  layout.create();
  {
    std::ofstream out(layout.logs("config.resolved.cfg"));
    out << dump_run_config(cfg);
  }
  PipelineSummary summary;
  const auto start = std::chrono::steady_clock::now();
  auto timed = [&](const std::string& name, auto&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    log_info("== " + name);
    fn();
    summary.stage_seconds[name] = seconds_since(t0);
  };

  timed("gen-data", [&] { stage_gen_data(cfg, layout); });
  timed("pretrain", [&] { stage_pretrain(cfg, layout, layout.ckpt("dense_warmup.ckpt")); });
  timed("train-rl", [&] { stage_train_rl(cfg, layout, layout.ckpt("dense_warmup.ckpt"), layout.ckpt("dense_rl.ckpt")); });
  const fs::path expand_from = cfg.expand.init == "warmup" ? layout.ckpt("dense_warmup.ckpt") : layout.ckpt("dense_rl.ckpt");
  timed("expand", [&] {
    const HybridParams h = stage_expand(cfg, expand_from, layout.ckpt("hybrid_init.ckpt"));
    // Both experts must reproduce the dense model exactly right after expansion.
    const DenseParams d = load_dense(expand_from);
    const auto probe = read_records(layout.data("mixed-dev.jsonl"));
    double worst = 0.0;
    for (std::size_t i = 0; i < std::min<std::size_t>(probe.size(), 10); ++i) {
      const auto ids = Tokenizer::encode_prompt(probe[i].prompt);
      const Tensor ref = forward_logits(d, ids);
      for (Mode m : {Mode::Thinking, Mode::NonThinking}) {
        const Tensor got = forward_logits(h.view(m), ids);
        for (std::size_t k = 0; k < ref.size(); ++k) worst = std::max(worst, std::abs(ref.values[k] - got.values[k]));
      }
    }
    summary.expansion_identity_ok = worst <= 1e-12;
    if (!summary.expansion_identity_ok) log_warn("expand: experts differ from the dense model by " + fmt_num(worst));
  });
  timed("curate", [&] { stage_curate(cfg, layout, layout.ckpt("dense_rl.ckpt"), layout.data("sft_train.jsonl")); });
  timed("train-sft", [&] {
    stage_train_sft(cfg, layout, layout.ckpt("hybrid_init.ckpt"), layout.data("sft_train.jsonl"),
                    layout.ckpt("hybrid_final.ckpt"));
  });
  timed("eval", [&] {
    std::vector<EvalReport> reports;
    const std::vector<std::pair<std::string, std::string>> models = {
        {"warmup", "dense_warmup.ckpt"}, {"rl", "dense_rl.ckpt"}, {"hybrid", "hybrid_final.ckpt"}};
    for (const auto& [label, file] : models) {
      for (const auto& b : benchmark_names()) {
        EvalReport r = evaluate_checkpoint(cfg, layout.ckpt(file), load_benchmark(layout, b), b);
        r.model = label;
        summary.reports[label + "/" + b] = r;
        reports.push_back(std::move(r));
      }
    }
    emit_csv(reports_table(reports), layout.reports("eval_reports.csv"));
    emit_csv(subfamily_table(reports), layout.reports("eval_subfamilies.csv"));
  });
  timed("analyze", [&] { stage_analyze(cfg, layout); });
  summary.total_seconds = seconds_since(start);

  nlohmann::json j;
  j["total_seconds"] = summary.total_seconds;
  j["expansion_identity_ok"] = summary.expansion_identity_ok;
  for (const auto& [k, v] : summary.stage_seconds) j["stage_seconds"][k] = v;
  for (const auto& [k, r] : summary.reports) {
    j["reports"][k] = {{"accuracy", r.accuracy},
                       {"thinking_ratio", r.thinking_ratio},
                       {"emitted_thinking_ratio", r.emitted_thinking_ratio},
                       {"routing_accuracy", r.routing_accuracy},
                       {"n", r.n}};
  }
  std::ofstream(layout.reports("summary.json")) << j.dump(2) << '\n';
  CsvTable timings;
  timings.columns = {"stage", "seconds"};
  for (const auto& [k, v] : summary.stage_seconds) timings.rows.push_back({k, fmt_num(v)});
  timings.rows.push_back({"total", fmt_num(summary.total_seconds)});
  emit_csv(timings, layout.logs("timings.csv"));
  log_info("pipeline finished in " + fmt_num(summary.total_seconds) + " s; outputs in " + layout.root.string());
  return summary;
}

}  // namespace home
