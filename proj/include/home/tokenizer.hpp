#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace home {

/// Character-level tokenizer: newline plus printable ASCII, and one id per
/// special token. Tags are matched greedily in the input text, so
/// "<think>" always encodes to the single kThink id.
class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kThink = 3;
  static constexpr int kThinkEnd = 4;
  static constexpr int kAnswer = 5;
  static constexpr int kAnswerEnd = 6;
  static constexpr int kNumSpecial = 7;

  static int vocab_size();

  /// Throws ContractError on characters outside the alphabet.
  static std::vector<int> encode(std::string_view text);
  /// Renders tags as text; BOS/EOS/PAD render as nothing.
  static std::string decode(const std::vector<int>& ids);
  static bool supports(std::string_view text);
  static std::optional<int> char_id(char c);
  static std::string token_text(int id);

  /// BOS followed by the prompt characters.
  static std::vector<int> encode_prompt(std::string_view prompt);
  /// Target text followed by EOS.
  static std::vector<int> encode_response(std::string_view response);
};

}  // namespace home
