#include "home/verifier.hpp"

#include <array>
#include <cctype>
#include <cstdint>
#include <limits>

namespace home {
namespace {

constexpr std::string_view kThinkOpen = "<think>";
constexpr std::string_view kThinkClose = "</think>";
constexpr std::string_view kAnswerOpen = "<answer>";
constexpr std::string_view kAnswerClose = "</answer>";
constexpr std::array<std::string_view, 4> kTags = {kThinkOpen, kThinkClose, kAnswerOpen, kAnswerClose};

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::size_t skip_space(std::string_view s, std::size_t i) {
  while (i < s.size() && is_space(s[i])) ++i;
  return i;
}

bool contains_tag(std::string_view s) {
  for (auto tag : kTags) {
    if (s.find(tag) != std::string_view::npos) return true;
  }
  return false;
}

// Exact rational p/q with q > 0; parsing rejects anything beyond
// [-]digits[.digits] or [-]digits/digits.
struct Rational {
  __int128 num = 0;
  __int128 den = 1;
};

std::optional<__int128> parse_digits(std::string_view s) {
  if (s.empty() || s.size() > 18) return std::nullopt;
  __int128 v = 0;
  for (char c : s) {
    if (c < '0' || c > '9') return std::nullopt;
    v = v * 10 + (c - '0');
  }
  return v;
}

std::optional<Rational> parse_rational(std::string_view s) {
  if (s.empty()) return std::nullopt;
  bool neg = false;
  if (s[0] == '-' || s[0] == '+') {
    neg = s[0] == '-';
    s.remove_prefix(1);
  }
  Rational r;
  if (auto slash = s.find('/'); slash != std::string_view::npos) {
    auto n = parse_digits(s.substr(0, slash));
    auto d = parse_digits(s.substr(slash + 1));
    if (!n || !d || *d == 0) return std::nullopt;
    r.num = *n;
    r.den = *d;
  } else if (auto dot = s.find('.'); dot != std::string_view::npos) {
    auto ip = s.substr(0, dot), fp = s.substr(dot + 1);
    if (ip.empty() && fp.empty()) return std::nullopt;
    auto i = ip.empty() ? std::optional<__int128>(0) : parse_digits(ip);
    auto f = fp.empty() ? std::optional<__int128>(0) : parse_digits(fp);
    if (!i || !f) return std::nullopt;
    __int128 scale = 1;
    for (std::size_t k = 0; k < fp.size(); ++k) scale *= 10;
    r.num = *i * scale + *f;
    r.den = scale;
  } else {
    auto n = parse_digits(s);
    if (!n) return std::nullopt;
    r.num = *n;
  }
  if (neg) r.num = -r.num;
  return r;
}

}  // namespace

ParsedResponse parse_tags(std::string_view text) {
  ParsedResponse out;
  out.raw = std::string(text);
  std::size_t i = skip_space(text, 0);
  if (text.substr(i, kThinkOpen.size()) != kThinkOpen) return out;
  i += kThinkOpen.size();
  const std::size_t think_end = text.find(kThinkClose, i);
  if (think_end == std::string_view::npos) return out;
  const std::string_view think = text.substr(i, think_end - i);
  i = skip_space(text, think_end + kThinkClose.size());
  if (text.substr(i, kAnswerOpen.size()) != kAnswerOpen) return out;
  i += kAnswerOpen.size();
  const std::size_t answer_end = text.find(kAnswerClose, i);
  if (answer_end == std::string_view::npos) return out;
  const std::string_view answer = text.substr(i, answer_end - i);
  i = skip_space(text, answer_end + kAnswerClose.size());
  if (i != text.size()) return out;
  if (contains_tag(think) || contains_tag(answer)) return out;
  out.format_ok = true;
  out.think_content = std::string(think);
  out.answer_content = std::string(answer);
  return out;
}

std::string canonicalize(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (char c : s) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

std::optional<std::string> extract_answer(std::string_view content) {
  constexpr std::string_view kBoxed = "\\boxed{";
  const std::size_t start = content.find(kBoxed);
  if (start == std::string_view::npos) return canonicalize(content);
  std::size_t i = start + kBoxed.size();
  int depth = 1;
  const std::size_t body = i;
  for (; i < content.size(); ++i) {
    if (content[i] == '{') {
      ++depth;
    } else if (content[i] == '}') {
      if (--depth == 0) return canonicalize(content.substr(body, i - body));
    }
  }
  return std::nullopt;
}

bool is_equal(std::string_view gt, std::string_view extracted) {
  const std::string a = canonicalize(gt), b = canonicalize(extracted);
  const auto ra = parse_rational(a), rb = parse_rational(b);
  if (ra && rb) return ra->num * rb->den == rb->num * ra->den;
  return a == b;
}

RewardResult compute_reward(std::string_view raw_response, std::string_view gt, double format_bonus) {
  RewardResult r;
  const ParsedResponse p = parse_tags(raw_response);
  if (!p.format_ok) return r;
  r.format_reward_ok = true;
  const auto extracted = extract_answer(p.answer_content);
  r.accuracy = extracted && is_equal(gt, *extracted) ? 1 : 0;
  r.total = r.accuracy == 1 ? 1.0 : format_bonus;
  return r;
}

}  // namespace home
