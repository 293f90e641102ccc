#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "home/hybrid.hpp"
#include "home/model.hpp"
#include "home/tasks.hpp"

namespace home {

struct EvalItem {
  std::uint64_t id = 0;
  std::string subfamily;
  Mode expected = Mode::NonThinking;
  /// Router decision; for dense models, the mode the emitted format implies.
  Mode decision = Mode::NonThinking;
  bool emitted_thinking = false;
  bool correct = false;
  /// Generation threw; the item counts as wrong.
  bool failed = false;
  std::string response;
};

struct SubfamilyStats {
  std::size_t n = 0;
  std::size_t correct = 0;
  std::size_t thinking = 0;

  double accuracy() const { return n ? static_cast<double>(correct) / n : 0.0; }
  double thinking_ratio() const { return n ? static_cast<double>(thinking) / n : 0.0; }
};

/// Thinking ratio is the fraction of items routed to the thinking expert.
/// The emitted-format ratio (nonempty think block in the output) is kept
/// alongside it; for dense models the two coincide.
struct EvalReport {
  std::string benchmark;
  std::string model;
  std::size_t n = 0;
  double accuracy = 0.0;
  double thinking_ratio = 0.0;
  double emitted_thinking_ratio = 0.0;
  double routing_accuracy = 0.0;
  std::map<std::string, SubfamilyStats> subfamilies;
  std::vector<EvalItem> items;
};

double thinking_ratio(std::span<const Mode> decisions);

/// Aggregates per-item outcomes. Items keep their input order.
EvalReport build_report(std::string benchmark, std::string model, std::vector<EvalItem> items);

struct EvalOptions {
  int max_new = 80;
};

/// Routes each query, decodes greedily with the chosen expert, scores with compute_reward.
EvalReport evaluate(const HybridParams& hybrid, const std::vector<PromptRecord>& bench, const std::string& name,
                    const EvalOptions& opt = {});
/// Same, with every query forced through one expert.
EvalReport evaluate_forced(const HybridParams& hybrid, Mode mode, const std::vector<PromptRecord>& bench,
                           const std::string& name, const EvalOptions& opt = {});
EvalReport evaluate(const DenseParams& dense, const std::vector<PromptRecord>& bench, const std::string& name,
                    const EvalOptions& opt = {});
/// Router decisions only, no decoding.
std::vector<RouteDecision> route_all(const HybridParams& hybrid, const std::vector<PromptRecord>& bench);

/// Header plus rows of preformatted cells.
struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
};

/// Six fractional digits; NaN becomes an empty cell.
std::string fmt_num(double v);
void emit_csv(const CsvTable& table, const std::filesystem::path& path);
CsvTable read_csv(const std::filesystem::path& path);

/// One row per report: benchmark, model, n, accuracy, ratios.
CsvTable reports_table(const std::vector<EvalReport>& reports);
/// One row per (report, subfamily).
CsvTable subfamily_table(const std::vector<EvalReport>& reports);

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

struct ChartSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  /// When both are finite they fix the y range, otherwise it follows the data.
  double y_min = 0.0;
  double y_max = 1.0;
};

/// Standalone SVG line chart with axes, ticks, legend and title.
std::string svg_lines(const std::vector<Series>& series, const ChartSpec& spec);
void emit_svg_lines(const std::vector<Series>& series, const ChartSpec& spec, const std::filesystem::path& path);

}  // namespace home
