#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "home/hybrid.hpp"

namespace home {

enum class Family { ChainedArithmetic, SimpleLookup, SimpleTransform, MixedSubjects };

std::string family_name(Family f);
Family parse_family(std::string_view s);

/// A verifiable query. `subfamily` names the generator that produced it
/// ("arith-d3", "reverse", "uppercase", "kth-char", "copy") and survives
/// mixing, so per-subject breakdowns can be recovered after evaluation.
struct PromptRecord {
  std::uint64_t id = 0;
  std::string prompt;
  std::string gt;
  Family family = Family::ChainedArithmetic;
  std::string subfamily;
  std::optional<int> difficulty;
  std::optional<std::string> reference_trajectory;
};

/// Ground-truth mode of a query: Thinking for arithmetic, NonThinking otherwise.
Mode expected_mode(const PromptRecord& r);
bool is_reasoning_subfamily(std::string_view subfamily);

class UnsupportedFamilyError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct OracleSolution {
  std::string gt;
  std::string reference_trajectory;
  Family family;
  std::string subfamily;
  std::optional<int> difficulty;
};

/// Programmatic expert: parses any prompt produced by the generators below
/// and returns the exact answer plus a tag-formatted reference response.
OracleSolution oracle_solve(std::string_view prompt);

std::string format_thinking(std::string_view think, std::string_view answer);
std::string format_nonthinking(std::string_view answer);

/// Left-nested chain of `depth` operations over digits, e.g. "Compute ((3+5)*2)-4.".
/// Intermediate results stay within [0, 99]. depth must be in [2, 6].
PromptRecord gen_reasoning_task(std::uint64_t seed, int depth);
/// One of reverse / uppercase / k-th character / copy on a short lowercase word.
PromptRecord gen_simple_task(std::uint64_t seed);
/// n/2 reasoning (depth 2..4) and n/2 simple records, interleaved, family MixedSubjects.
std::vector<PromptRecord> gen_mixed_benchmark(std::uint64_t seed, int n);

std::vector<PromptRecord> gen_reasoning_set(std::uint64_t seed, int n, int min_depth, int max_depth,
                                            std::uint64_t first_id = 0);
std::vector<PromptRecord> gen_simple_set(std::uint64_t seed, int n, std::uint64_t first_id = 0);

/// Arithmetic evaluator over + - * and parentheses with standard precedence.
/// Fills `steps` with one "a<op>b=c" line per applied operator.
long long evaluate_expression(std::string_view expr, std::vector<std::string>* steps = nullptr);

struct SftSample {
  std::uint64_t id = 0;
  std::string prompt;
  std::string target;
  Mode mode = Mode::Thinking;
  Family family = Family::ChainedArithmetic;
  std::string subfamily;
  std::string gt;
};

/// 1 for a nonempty (after trimming) think block, 0 otherwise. Throws
/// ContractError for targets that fail the tag grammar.
int mode_label(const SftSample& sample);
int mode_label(std::string_view target);

SftSample sample_from_reference(const PromptRecord& r);

// JSONL corpus I/O. Records carry {"id","prompt","gt","family","subfamily","difficulty"};
// SFT samples add {"mode","target"}.
void write_records(const std::vector<PromptRecord>& records, const std::filesystem::path& path);
std::vector<PromptRecord> read_records(const std::filesystem::path& path);
void write_sft_samples(const std::vector<SftSample>& samples, const std::filesystem::path& path);
std::vector<SftSample> read_sft_samples(const std::filesystem::path& path);

/// FNV-1a 64-bit of a file's bytes, as 16 hex digits.
std::string file_hash(const std::filesystem::path& path);

}  // namespace home
