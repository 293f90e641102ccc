#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace home {

/// Result of matching `<think>T</think><answer>A</answer>`.
struct ParsedResponse {
  bool format_ok = false;
  std::string think_content;
  std::string answer_content;
  std::string raw;
};

struct RewardResult {
  bool format_reward_ok = false;
  int accuracy = 0;
  double total = 0.0;
};

/// Strict single-occurrence grammar. Leading and trailing whitespace and
/// whitespace between the two blocks are allowed; any other text outside the
/// blocks, a missing block, or a repeated/nested tag fails. An empty think
/// block is valid. Never throws.
ParsedResponse parse_tags(std::string_view text);

/// Lowercase, trim, and collapse internal whitespace runs to one space.
std::string canonicalize(std::string_view s);

/// Contents of the first `\boxed{...}` (brace-balanced), else the whole
/// string; canonicalized. nullopt when a boxed group has unbalanced braces.
std::optional<std::string> extract_answer(std::string_view answer_content);

/// Value equality when both sides parse as integers, decimals, or fractions;
/// canonical string equality otherwise.
bool is_equal(std::string_view gt, std::string_view extracted);

/// Format-gated binary accuracy. `format_bonus` is paid only for well-formed
/// wrong answers and defaults to 0, keeping totals in {0, 1}.
RewardResult compute_reward(std::string_view raw_response, std::string_view gt, double format_bonus = 0.0);

}  // namespace home
