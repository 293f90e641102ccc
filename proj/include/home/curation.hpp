#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "home/model.hpp"
#include "home/tasks.hpp"
#include "home/verifier.hpp"

namespace home {

enum class Disposition { Discard, SelfDistill, OracleInject };

std::string disposition_name(Disposition d);
/// k == n -> Discard, k == 0 -> OracleInject, otherwise SelfDistill.
Disposition disposition_for(int k, int n);

struct PassrateEstimate {
  int k = 0;
  int n = 0;
  std::vector<Trajectory> trajectories;
  std::vector<RewardResult> rewards;

  double passrate() const { return n == 0 ? 0.0 : static_cast<double>(k) / n; }
};

/// N seeded samples; sample i uses seed hash(run_seed, record.id, i).
PassrateEstimate estimate_passrate(const TrajectorySampler& sampler, const PromptRecord& record, int n_samples,
                                   std::uint64_t run_seed);

struct PassrateBucket {
  std::uint64_t prompt_id = 0;
  int k = 0;
  int n = 0;
  Disposition disposition = Disposition::Discard;
  std::vector<std::string> kept_trajectories;

  double passrate() const { return n == 0 ? 0.0 : static_cast<double>(k) / n; }
};

struct CurationConfig {
  int n_samples = 8;
  /// Most distinct correct self-generated trajectories kept per prompt.
  int self_distill_cap = 2;
  std::uint64_t seed = 0;
};

struct CurationResult {
  std::vector<PassrateBucket> buckets;
  std::vector<SftSample> samples;
};

/// Buckets every prompt by passrate and emits thinking-mode SFT samples:
/// nothing for mastered prompts, up to `self_distill_cap` of the model's own
/// distinct correct responses for partially solved ones, and the oracle
/// reference for unsolved ones. Output follows input order.
CurationResult curate(const TrajectorySampler& sampler, const std::vector<PromptRecord>& prompts,
                      const CurationConfig& cfg);

/// Number of non-thinking samples that matches `thinking_count` under a
/// thinking:non-thinking volume ratio, rounded to the nearest integer.
std::size_t balanced_count(std::size_t thinking_count, double thinking_weight, double nonthinking_weight);

/// Oracle-formatted non-thinking samples from the first balanced_count(...)
/// records of `simple_pool`. Throws ContractError if the pool is too small.
std::vector<SftSample> nonthinking_samples(std::size_t thinking_count, double thinking_weight,
                                           double nonthinking_weight, const std::vector<PromptRecord>& simple_pool);

void write_curation_report(const std::vector<PassrateBucket>& buckets, const std::filesystem::path& path);

}  // namespace home
