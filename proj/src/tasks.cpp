#include "home/tasks.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <json.hpp>

#include "home/parallel.hpp"
#include "home/rng.hpp"
#include "home/verifier.hpp"

namespace home {
namespace {

using nlohmann::json;

constexpr std::uint64_t kReasoningTag = 0x61726974ULL;
constexpr std::uint64_t kSimpleTag = 0x73696d70ULL;

std::string random_word(Rng& rng, int min_len, int max_len) {
  const int len = rng.range(min_len, max_len);
  std::string w;
  for (int i = 0; i < len; ++i) w.push_back(static_cast<char>('a' + rng.below(26)));
  return w;
}

class ExprParser {
 public:
  ExprParser(std::string_view s, std::vector<std::string>* steps) : s_(s), steps_(steps) {}

  long long parse() {
    const long long v = expr();
    skip();
    if (pos_ != s_.size()) fail("trailing characters");
    return v;
  }

 private:
  [[noreturn]] void fail(const std::string& why) const {
    throw UnsupportedFamilyError("cannot parse expression '" + std::string(s_) + "': " + why);
  }
  void skip() {
    while (pos_ < s_.size() && s_[pos_] == ' ') ++pos_;
  }
  long long apply(long long a, char op, long long b) {
    long long c = 0;
    switch (op) {
      case '+': c = a + b; break;
      case '-': c = a - b; break;
      default: c = a * b; break;
    }
    if (steps_) steps_->push_back(std::to_string(a) + op + std::to_string(b) + "=" + std::to_string(c));
    return c;
  }
  long long expr() {
    long long v = term();
    for (;;) {
      skip();
      if (pos_ < s_.size() && (s_[pos_] == '+' || s_[pos_] == '-')) {
        const char op = s_[pos_++];
        v = apply(v, op, term());
      } else {
        return v;
      }
    }
  }
  long long term() {
    long long v = factor();
    for (;;) {
      skip();
      if (pos_ < s_.size() && s_[pos_] == '*') {
        ++pos_;
        v = apply(v, '*', factor());
      } else {
        return v;
      }
    }
  }
  long long factor() {
    skip();
    if (pos_ >= s_.size()) fail("unexpected end");
    if (s_[pos_] == '(') {
      ++pos_;
      const long long v = expr();
      skip();
      if (pos_ >= s_.size() || s_[pos_] != ')') fail("missing ')'");
      ++pos_;
      return v;
    }
    if (!std::isdigit(static_cast<unsigned char>(s_[pos_]))) fail("expected a number");
    long long v = 0;
    int digits = 0;
    while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
      if (++digits > 15) fail("number too long");
      v = v * 10 + (s_[pos_++] - '0');
    }
    return v;
  }

  std::string_view s_;
  std::vector<std::string>* steps_;
  std::size_t pos_ = 0;
};

bool strip(std::string_view& s, std::string_view prefix, std::string_view suffix) {
  if (s.size() < prefix.size() + suffix.size()) return false;
  if (s.substr(0, prefix.size()) != prefix || s.substr(s.size() - suffix.size()) != suffix) return false;
  s = s.substr(prefix.size(), s.size() - prefix.size() - suffix.size());
  return true;
}

bool is_word(std::string_view w) {
  if (w.empty()) return false;
  for (char c : w) {
    if (c < 'a' || c > 'z') return false;
  }
  return true;
}

PromptRecord record_from_prompt(std::uint64_t id, std::string prompt) {
  const OracleSolution sol = oracle_solve(prompt);
  PromptRecord r;
  r.id = id;
  r.prompt = std::move(prompt);
  r.gt = sol.gt;
  r.family = sol.family;
  r.subfamily = sol.subfamily;
  r.difficulty = sol.difficulty;
  r.reference_trajectory = sol.reference_trajectory;
  return r;
}

json record_json(const PromptRecord& r) {
  json j;
  j["id"] = r.id;
  j["prompt"] = r.prompt;
  j["gt"] = r.gt;
  j["family"] = family_name(r.family);
  j["subfamily"] = r.subfamily;
  j["difficulty"] = r.difficulty ? json(*r.difficulty) : json(nullptr);
  return j;
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_jsonl(const std::vector<json>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& j : rows) out << j.dump() << '\n';
}

}  // namespace

std::string family_name(Family f) {
  switch (f) {
    case Family::ChainedArithmetic: return "ChainedArithmetic";
    case Family::SimpleLookup: return "Simple-Lookup";
    case Family::SimpleTransform: return "Simple-Transform";
    case Family::MixedSubjects: return "MixedSubjects";
  }
  return "?";
}

Family parse_family(std::string_view s) {
  for (Family f : {Family::ChainedArithmetic, Family::SimpleLookup, Family::SimpleTransform, Family::MixedSubjects}) {
    if (family_name(f) == s) return f;
  }
  throw std::invalid_argument("unknown family '" + std::string(s) + "'");
}

bool is_reasoning_subfamily(std::string_view subfamily) { return subfamily.substr(0, 6) == "arith-"; }

Mode expected_mode(const PromptRecord& r) {
  return is_reasoning_subfamily(r.subfamily) ? Mode::Thinking : Mode::NonThinking;
}

std::string format_thinking(std::string_view think, std::string_view answer) {
  return "<think>" + std::string(think) + "</think><answer>" + std::string(answer) + "</answer>";
}

std::string format_nonthinking(std::string_view answer) {
  return "<think></think><answer>" + std::string(answer) + "</answer>";
}

long long evaluate_expression(std::string_view expr, std::vector<std::string>* steps) {
  return ExprParser(expr, steps).parse();
}

OracleSolution oracle_solve(std::string_view prompt) {
  OracleSolution s;
  std::string_view body = prompt;
  if (strip(body, "Compute ", ".")) {
    std::vector<std::string> steps;
    const long long v = evaluate_expression(body, &steps);
    if (steps.empty()) throw UnsupportedFamilyError("arithmetic prompt without an operator");
    std::string think;
    for (std::size_t i = 0; i < steps.size(); ++i) {
      if (i) think += '\n';
      think += steps[i];
    }
    s.gt = std::to_string(v);
    s.reference_trajectory = format_thinking(think, "\\boxed{" + s.gt + "}");
    s.family = Family::ChainedArithmetic;
    s.difficulty = static_cast<int>(steps.size());
    s.subfamily = "arith-d" + std::to_string(steps.size());
    return s;
  }
  body = prompt;
  if (strip(body, "Reverse '", "'.") && is_word(body)) {
    s.gt = std::string(body.rbegin(), body.rend());
    s.family = Family::SimpleTransform;
    s.subfamily = "reverse";
  } else if (body = prompt; strip(body, "Uppercase '", "'.") && is_word(body)) {
    for (char c : body) s.gt.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    s.family = Family::SimpleTransform;
    s.subfamily = "uppercase";
  } else if (body = prompt; strip(body, "Copy '", "'.") && is_word(body)) {
    s.gt = std::string(body);
    s.family = Family::SimpleTransform;
    s.subfamily = "copy";
  } else if (body = prompt; strip(body, "Character ", "'.")) {
    const auto sep = body.find(" of '");
    if (sep == std::string_view::npos) throw UnsupportedFamilyError("unsupported prompt: " + std::string(prompt));
    const std::string_view num = body.substr(0, sep), word = body.substr(sep + 5);
    if (num.empty() || num.size() > 3 || !is_word(word)) throw UnsupportedFamilyError("unsupported prompt: " + std::string(prompt));
    int k = 0;
    for (char c : num) {
      if (!std::isdigit(static_cast<unsigned char>(c))) throw UnsupportedFamilyError("unsupported prompt: " + std::string(prompt));
      k = k * 10 + (c - '0');
    }
    if (k < 1 || static_cast<std::size_t>(k) > word.size()) throw UnsupportedFamilyError("character index out of range: " + std::string(prompt));
    s.gt = std::string(1, word[static_cast<std::size_t>(k - 1)]);
    s.family = Family::SimpleLookup;
    s.subfamily = "kth-char";
  } else {
    throw UnsupportedFamilyError("unsupported prompt: " + std::string(prompt));
  }
  s.reference_trajectory = format_nonthinking(s.gt);
  return s;
}

PromptRecord gen_reasoning_task(std::uint64_t seed, int depth) {
  if (depth < 2 || depth > 6) throw ContractError("reasoning depth must be in [2, 6]");
  Rng rng(hash_seed(seed, kReasoningTag, static_cast<std::uint64_t>(depth)));
  long long value = rng.range(0, 9);
  std::string expr = std::to_string(value);
  static constexpr char kOps[3] = {'+', '-', '*'};
  for (int i = 0; i < depth; ++i) {
    char op = '+';
    int b = 0;
    for (;;) {
      op = kOps[rng.below(3)];
      b = rng.range(0, 9);
      const long long next = op == '+' ? value + b : op == '-' ? value - b : value * b;
      if (next >= 0 && next <= 99) {
        value = next;
        break;
      }
    }
    expr += op;
    expr += std::to_string(b);
    if (i < depth - 1) expr = "(" + expr + ")";
  }
  return record_from_prompt(seed, "Compute " + expr + ".");
}

PromptRecord gen_simple_task(std::uint64_t seed) {
  Rng rng(hash_seed(seed, kSimpleTag));
  const auto kind = rng.below(4);
  const std::string w = random_word(rng, 3, 5);
  std::string prompt;
  switch (kind) {
    case 0: prompt = "Reverse '" + w + "'."; break;
    case 1: prompt = "Uppercase '" + w + "'."; break;
    case 2: prompt = "Character " + std::to_string(rng.range(1, static_cast<int>(w.size()))) + " of '" + w + "'."; break;
    default: prompt = "Copy '" + w + "'."; break;
  }
  return record_from_prompt(seed, prompt);
}

std::vector<PromptRecord> gen_reasoning_set(std::uint64_t seed, int n, int min_depth, int max_depth,
                                            std::uint64_t first_id) {
  if (min_depth > max_depth) throw ContractError("min_depth > max_depth");
  std::vector<PromptRecord> out;
  out.reserve(static_cast<std::size_t>(n));
  const int span = max_depth - min_depth + 1;
  for (int i = 0; i < n; ++i) {
    PromptRecord r = gen_reasoning_task(hash_seed(seed, static_cast<std::uint64_t>(i)), min_depth + i % span);
    r.id = first_id + static_cast<std::uint64_t>(i);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<PromptRecord> gen_simple_set(std::uint64_t seed, int n, std::uint64_t first_id) {
  std::vector<PromptRecord> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    PromptRecord r = gen_simple_task(hash_seed(seed, static_cast<std::uint64_t>(i)));
    r.id = first_id + static_cast<std::uint64_t>(i);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<PromptRecord> gen_mixed_benchmark(std::uint64_t seed, int n) {
  if (n <= 0 || n % 2 != 0) throw ContractError("mixed benchmark size must be positive and even");
  std::vector<PromptRecord> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto s = hash_seed(seed, 0x6d6978ULL, static_cast<std::uint64_t>(i));
    PromptRecord r = i % 2 == 0 ? gen_reasoning_task(s, 2 + (i / 2) % 3) : gen_simple_task(s);
    r.id = static_cast<std::uint64_t>(i);
    r.family = Family::MixedSubjects;
    out.push_back(std::move(r));
  }
  return out;
}

int mode_label(std::string_view target) {
  const ParsedResponse p = parse_tags(target);
  if (!p.format_ok) throw ContractError("SFT target fails the tag grammar: " + std::string(target));
  return canonicalize(p.think_content).empty() ? 0 : 1;
}

int mode_label(const SftSample& sample) { return mode_label(sample.target); }

SftSample sample_from_reference(const PromptRecord& r) {
  SftSample s;
  s.id = r.id;
  s.prompt = r.prompt;
  s.target = r.reference_trajectory ? *r.reference_trajectory : oracle_solve(r.prompt).reference_trajectory;
  s.mode = mode_label(s.target) == 1 ? Mode::Thinking : Mode::NonThinking;
  s.family = r.family;
  s.subfamily = r.subfamily;
  s.gt = r.gt;
  return s;
}

void write_records(const std::vector<PromptRecord>& records, const std::filesystem::path& path) {
  std::vector<json> rows;
  rows.reserve(records.size());
  for (const auto& r : records) rows.push_back(record_json(r));
  write_jsonl(rows, path);
}

std::vector<PromptRecord> read_records(const std::filesystem::path& path) {
  std::vector<PromptRecord> out;
  for (const auto& j : read_jsonl(path)) {
    PromptRecord r;
    r.id = j.at("id").get<std::uint64_t>();
    r.prompt = j.at("prompt").get<std::string>();
    r.gt = j.at("gt").get<std::string>();
    r.family = parse_family(j.at("family").get<std::string>());
    r.subfamily = j.contains("subfamily") ? j["subfamily"].get<std::string>() : oracle_solve(r.prompt).subfamily;
    if (j.contains("difficulty") && !j["difficulty"].is_null()) r.difficulty = j["difficulty"].get<int>();
    if (j.contains("target")) r.reference_trajectory = j["target"].get<std::string>();
    out.push_back(std::move(r));
  }
  return out;
}

void write_sft_samples(const std::vector<SftSample>& samples, const std::filesystem::path& path) {
  std::vector<json> rows;
  rows.reserve(samples.size());
  for (const auto& s : samples) {
    json j;
    j["id"] = s.id;
    j["prompt"] = s.prompt;
    j["gt"] = s.gt;
    j["family"] = family_name(s.family);
    j["subfamily"] = s.subfamily;
    j["difficulty"] = nullptr;
    if (is_reasoning_subfamily(s.subfamily)) j["difficulty"] = std::stoi(s.subfamily.substr(7));
    j["mode"] = mode_name(s.mode);
    j["target"] = s.target;
    rows.push_back(std::move(j));
  }
  write_jsonl(rows, path);
}

std::vector<SftSample> read_sft_samples(const std::filesystem::path& path) {
  std::vector<SftSample> out;
  for (const auto& j : read_jsonl(path)) {
    SftSample s;
    s.id = j.at("id").get<std::uint64_t>();
    s.prompt = j.at("prompt").get<std::string>();
    s.gt = j.at("gt").get<std::string>();
    s.family = parse_family(j.at("family").get<std::string>());
    s.subfamily = j.value("subfamily", std::string());
    s.target = j.at("target").get<std::string>();
    const std::string mode = j.at("mode").get<std::string>();
    if (mode == "thinking") {
      s.mode = Mode::Thinking;
    } else if (mode == "nonthinking") {
      s.mode = Mode::NonThinking;
    } else {
      throw std::runtime_error("unknown mode '" + mode + "' in " + path.string());
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::string file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char c;
  while (in.get(c)) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace home
