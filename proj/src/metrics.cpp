#include "home/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "home/parallel.hpp"
#include "home/tokenizer.hpp"
#include "home/verifier.hpp"

namespace home {

double thinking_ratio(std::span<const Mode> decisions) {
  if (decisions.empty()) return 0.0;
  const auto k = std::count(decisions.begin(), decisions.end(), Mode::Thinking);
  return static_cast<double>(k) / static_cast<double>(decisions.size());
}

EvalReport build_report(std::string benchmark, std::string model, std::vector<EvalItem> items) {
  EvalReport r;
  r.benchmark = std::move(benchmark);
  r.model = std::move(model);
  r.n = items.size();
  std::size_t correct = 0, thinking = 0, emitted = 0, routed_ok = 0;
  for (const auto& it : items) {
    correct += it.correct;
    thinking += it.decision == Mode::Thinking;
    emitted += it.emitted_thinking;
    routed_ok += it.decision == it.expected;
    auto& s = r.subfamilies[it.subfamily];
    ++s.n;
    s.correct += it.correct;
    s.thinking += it.decision == Mode::Thinking;
  }
  if (r.n) {
    const auto n = static_cast<double>(r.n);
    r.accuracy = correct / n;
    r.thinking_ratio = thinking / n;
    r.emitted_thinking_ratio = emitted / n;
    r.routing_accuracy = routed_ok / n;
  }
  r.items = std::move(items);
  return r;
}

namespace {

SamplingConfig greedy_cfg(const EvalOptions& opt) {
  SamplingConfig sc;
  sc.greedy = true;
  sc.max_new = opt.max_new;
  return sc;
}

void score_item(EvalItem& item, const PromptRecord& rec, const std::function<Trajectory()>& run) {
  item.id = rec.id;
  item.subfamily = rec.subfamily;
  item.expected = expected_mode(rec);
  try {
    Trajectory t = run();
    item.response = t.text;
    const ParsedResponse parsed = parse_tags(t.text);
    item.emitted_thinking = parsed.format_ok && !canonicalize(parsed.think_content).empty();
    item.correct = compute_reward(t.text, rec.gt).total == 1.0;
  } catch (const std::exception& e) {
    item.failed = true;
    item.correct = false;
    item.response = std::string("error: ") + e.what();
  }
}

void require_nonempty(const std::vector<PromptRecord>& bench, const std::string& name) {
  if (bench.empty()) throw ContractError("benchmark '" + name + "' is empty");
}

}  // namespace

std::vector<RouteDecision> route_all(const HybridParams& hybrid, const std::vector<PromptRecord>& bench) {
  std::vector<RouteDecision> out(bench.size());
  parallel_for(bench.size(), [&](std::size_t i) { out[i] = route(hybrid, Tokenizer::encode_prompt(bench[i].prompt)); });
  return out;
}

EvalReport evaluate(const HybridParams& hybrid, const std::vector<PromptRecord>& bench, const std::string& name,
                    const EvalOptions& opt) {
  require_nonempty(bench, name);
  const SamplingConfig sc = greedy_cfg(opt);
  std::vector<EvalItem> items(bench.size());
  parallel_for(bench.size(), [&](std::size_t i) {
    const auto ids = Tokenizer::encode_prompt(bench[i].prompt);
    const RouteDecision d = route(hybrid, ids);
    items[i].decision = d.mode;
    score_item(items[i], bench[i], [&] { return generate(hybrid.view(d.mode), ids, sc, 0); });
  });
  return build_report(name, "hybrid", std::move(items));
}

EvalReport evaluate_forced(const HybridParams& hybrid, Mode mode, const std::vector<PromptRecord>& bench,
                           const std::string& name, const EvalOptions& opt) {
  require_nonempty(bench, name);
  const SamplingConfig sc = greedy_cfg(opt);
  const StackView view = hybrid.view(mode);
  std::vector<EvalItem> items(bench.size());
  parallel_for(bench.size(), [&](std::size_t i) {
    items[i].decision = mode;
    score_item(items[i], bench[i], [&] { return generate(view, Tokenizer::encode_prompt(bench[i].prompt), sc, 0); });
  });
  return build_report(name, std::string("hybrid-") + mode_name(mode), std::move(items));
}

EvalReport evaluate(const DenseParams& dense, const std::vector<PromptRecord>& bench, const std::string& name,
                    const EvalOptions& opt) {
  require_nonempty(bench, name);
  const SamplingConfig sc = greedy_cfg(opt);
  const StackView view = dense.view();
  std::vector<EvalItem> items(bench.size());
  parallel_for(bench.size(), [&](std::size_t i) {
    score_item(items[i], bench[i], [&] { return generate(view, Tokenizer::encode_prompt(bench[i].prompt), sc, 0); });
    items[i].decision = items[i].emitted_thinking ? Mode::Thinking : Mode::NonThinking;
  });
  return build_report(name, "dense", std::move(items));
}

// ---------------------------------------------------------------------- CSV

std::string fmt_num(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

namespace {

std::string csv_cell(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cells.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cells.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.emplace_back();
    } else {
      cells.back() += c;
    }
  }
  return cells;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace

void emit_csv(const CsvTable& table, const std::filesystem::path& path) {
  std::ostringstream os;
  for (std::size_t i = 0; i < table.columns.size(); ++i) os << (i ? "," : "") << csv_cell(table.columns[i]);
  os << '\n';
  for (const auto& row : table.rows) {
    if (row.size() != table.columns.size()) throw ContractError("csv row width differs from header");
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << csv_cell(row[i]);
    os << '\n';
  }
  write_text(path, os.str());
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) return t;
  t.columns = split_csv_line(line);
  while (std::getline(in, line)) {
    if (!line.empty()) t.rows.push_back(split_csv_line(line));
  }
  return t;
}

CsvTable reports_table(const std::vector<EvalReport>& reports) {
  CsvTable t;
  t.columns = {"benchmark", "model", "n", "accuracy", "thinking_ratio", "emitted_thinking_ratio", "routing_accuracy"};
  for (const auto& r : reports) {
    t.rows.push_back({r.benchmark, r.model, std::to_string(r.n), fmt_num(r.accuracy), fmt_num(r.thinking_ratio),
                      fmt_num(r.emitted_thinking_ratio), fmt_num(r.routing_accuracy)});
  }
  return t;
}

CsvTable subfamily_table(const std::vector<EvalReport>& reports) {
  CsvTable t;
  t.columns = {"benchmark", "model", "subfamily", "n", "accuracy", "thinking_ratio"};
  for (const auto& r : reports) {
    for (const auto& [name, s] : r.subfamilies) {
      t.rows.push_back({r.benchmark, r.model, name, std::to_string(s.n), fmt_num(s.accuracy()),
                        fmt_num(s.thinking_ratio())});
    }
  }
  return t;
}

// ---------------------------------------------------------------------- SVG

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", std::abs(v) < 1e-12 ? 0.0 : v);
  return buf;
}

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

}  // namespace

std::string svg_lines(const std::vector<Series>& series, const ChartSpec& spec) {
  if (series.empty()) throw ContractError("svg chart needs at least one series");
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    if (s.points.empty()) throw ContractError("series '" + s.name + "' is empty");
    for (const auto& [x, y] : s.points) {
      if (!std::isfinite(x) || !std::isfinite(y)) throw NumericError("series '" + s.name + "' has a non-finite point");
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (std::isfinite(spec.y_min) && std::isfinite(spec.y_max) && spec.y_max > spec.y_min) {
    y0 = std::min(y0, spec.y_min);
    y1 = std::max(y1, spec.y_max);
  }
  if (x1 - x0 < 1e-12) {
    x0 -= 1.0;
    x1 += 1.0;
  }
  if (y1 - y0 < 1e-12) {
    y0 -= 1.0;
    y1 += 1.0;
  }

  const double W = 720, H = 440, left = 70, right = 190, top = 50, bottom = 60;
  const double pw = W - left - right, ph = H - top - bottom;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + ph - (y - y0) / (y1 - y0) * ph; };

  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  os << "<text class=\"title\" x=\"" << num(left + pw / 2) << "\" y=\"28\" text-anchor=\"middle\" font-size=\"16\">"
     << xml_escape(spec.title) << "</text>\n";

  os << "<g class=\"axes\" stroke=\"black\" stroke-width=\"1\">\n";
  os << "<line x1=\"" << num(left) << "\" y1=\"" << num(top + ph) << "\" x2=\"" << num(left + pw) << "\" y2=\""
     << num(top + ph) << "\"/>\n";
  os << "<line x1=\"" << num(left) << "\" y1=\"" << num(top) << "\" x2=\"" << num(left) << "\" y2=\"" << num(top + ph)
     << "\"/>\n";
  os << "</g>\n";

  os << "<g class=\"ticks\">\n";
  constexpr int kTicks = 5;
  for (int i = 0; i <= kTicks; ++i) {
    const double xv = x0 + (x1 - x0) * i / kTicks, yv = y0 + (y1 - y0) * i / kTicks;
    os << "<line x1=\"" << num(px(xv)) << "\" y1=\"" << num(top + ph) << "\" x2=\"" << num(px(xv)) << "\" y2=\""
       << num(top + ph + 5) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << num(px(xv)) << "\" y=\"" << num(top + ph + 18) << "\" text-anchor=\"middle\">"
       << tick_label(xv) << "</text>\n";
    os << "<line x1=\"" << num(left - 5) << "\" y1=\"" << num(py(yv)) << "\" x2=\"" << num(left + pw) << "\" y2=\""
       << num(py(yv)) << "\" stroke=\"#dddddd\"/>\n";
    os << "<text x=\"" << num(left - 8) << "\" y=\"" << num(py(yv) + 4) << "\" text-anchor=\"end\">" << tick_label(yv)
       << "</text>\n";
  }
  os << "</g>\n";
  os << "<text x=\"" << num(left + pw / 2) << "\" y=\"" << num(H - 15) << "\" text-anchor=\"middle\">"
     << xml_escape(spec.x_label) << "</text>\n";
  os << "<text x=\"18\" y=\"" << num(top + ph / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
     << num(top + ph / 2) << ")\">" << xml_escape(spec.y_label) << "</text>\n";

  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % std::size(kPalette)];
    os << "<g class=\"series\" stroke=\"" << color << "\" fill=\"" << color << "\">\n";
    if (series[s].points.size() > 1) {
      os << "<polyline fill=\"none\" stroke-width=\"2\" points=\"";
      for (std::size_t i = 0; i < series[s].points.size(); ++i) {
        os << (i ? " " : "") << num(px(series[s].points[i].first)) << ',' << num(py(series[s].points[i].second));
      }
      os << "\"/>\n";
    }
    for (const auto& [x, y] : series[s].points) {
      os << "<circle class=\"marker\" cx=\"" << num(px(x)) << "\" cy=\"" << num(py(y)) << "\" r=\"2.5\"/>\n";
    }
    os << "</g>\n";
  }

  os << "<g class=\"legend\">\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % std::size(kPalette)];
    const double ly = top + 10 + 20 * static_cast<double>(s);
    os << "<g class=\"legend-entry\"><line x1=\"" << num(left + pw + 15) << "\" y1=\"" << num(ly) << "\" x2=\""
       << num(left + pw + 40) << "\" y2=\"" << num(ly) << "\" stroke=\"" << color
       << "\" stroke-width=\"3\"/><text x=\"" << num(left + pw + 46) << "\" y=\"" << num(ly + 4) << "\">"
       << xml_escape(series[s].name) << "</text></g>\n";
  }
  os << "</g>\n</svg>\n";
  return os.str();
}

void emit_svg_lines(const std::vector<Series>& series, const ChartSpec& spec, const std::filesystem::path& path) {
  write_text(path, svg_lines(series, spec));
}

}  // namespace home
