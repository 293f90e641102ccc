#include "home/tokenizer.hpp"

#include <array>

#include "home/tensor.hpp"

namespace home {
namespace {

constexpr std::array<std::string_view, 4> kTags = {"<think>", "</think>", "<answer>", "</answer>"};
constexpr int kNewline = Tokenizer::kNumSpecial;
constexpr int kFirstPrintable = Tokenizer::kNumSpecial + 1;

}  // namespace

int Tokenizer::vocab_size() { return kFirstPrintable + (126 - 32 + 1); }

std::optional<int> Tokenizer::char_id(char c) {
  if (c == '\n') return kNewline;
  const auto u = static_cast<unsigned char>(c);
  if (u >= 32 && u <= 126) return kFirstPrintable + (u - 32);
  return std::nullopt;
}

std::string Tokenizer::token_text(int id) {
  switch (id) {
    case kPad:
    case kBos:
    case kEos:
      return {};
    case kThink:
    case kThinkEnd:
    case kAnswer:
    case kAnswerEnd:
      return std::string(kTags[static_cast<std::size_t>(id - kThink)]);
    case kNewline:
      return "\n";
    default:
      if (id >= kFirstPrintable && id < vocab_size()) return std::string(1, static_cast<char>(32 + id - kFirstPrintable));
      throw ContractError("token id " + std::to_string(id) + " outside vocabulary");
  }
}

bool Tokenizer::supports(std::string_view text) {
  for (char c : text) {
    if (!char_id(c)) return false;
  }
  return true;
}

std::vector<int> Tokenizer::encode(std::string_view text) {
  std::vector<int> out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    bool matched = false;
    for (std::size_t t = 0; t < kTags.size(); ++t) {
      if (text.substr(i, kTags[t].size()) == kTags[t]) {
        out.push_back(kThink + static_cast<int>(t));
        i += kTags[t].size();
        matched = true;
        break;
      }
    }
    if (matched) continue;
    const auto id = char_id(text[i]);
    if (!id) {
      throw ContractError("character code " + std::to_string(static_cast<unsigned char>(text[i])) +
                          " is not in the tokenizer alphabet");
    }
    out.push_back(*id);
    ++i;
  }
  return out;
}

std::string Tokenizer::decode(const std::vector<int>& ids) {
  std::string out;
  for (int id : ids) out += token_text(id);
  return out;
}

std::vector<int> Tokenizer::encode_prompt(std::string_view prompt) {
  std::vector<int> ids{kBos};
  const auto body = encode(prompt);
  ids.insert(ids.end(), body.begin(), body.end());
  return ids;
}

std::vector<int> Tokenizer::encode_response(std::string_view response) {
  auto ids = encode(response);
  ids.push_back(kEos);
  return ids;
}

}  // namespace home
