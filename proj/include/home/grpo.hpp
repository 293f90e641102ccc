#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "home/autograd.hpp"
#include "home/model.hpp"
#include "home/optim.hpp"
#include "home/tasks.hpp"
#include "home/verifier.hpp"

namespace home {

struct RLConfig {
  int G = 8;
  double eps_low = 0.2;
  double eps_high = 0.28;
  double lr = 3e-4;
  int inner_epochs = 1;
  int batch_queries = 16;
  int max_new = 80;
  int total_steps = 4000;
  /// Wall-clock budget in seconds; no step starts that would likely end past
  /// it (judged by the previous step's duration). 0 disables.
  double max_seconds = 1740.0;
  std::uint64_t seed = 1;
  double temperature = 1.0;
  int top_k = 0;
  /// Evaluate every this many steps (and after the last); 0 disables.
  int eval_every = 100;
  /// Replace filtered groups with fresh queries until the batch is full or
  /// the attempt budget (4x batch_queries) runs out.
  bool resample_dropped = false;
  double format_bonus = 0.0;

  void validate() const;
  SamplingConfig sampling() const;
};

struct RolloutGroup {
  PromptRecord query;
  std::vector<Trajectory> trajectories;
  std::vector<double> rewards;
  std::vector<RewardResult> results;
};

/// G samples with seeds hash(run_seed, query.id, i), each scored by compute_reward.
RolloutGroup generate_group(const TrajectorySampler& sampler, const PromptRecord& query, int G,
                            std::uint64_t run_seed, double format_bonus = 0.0);

/// Keep iff 0 < #correct < G, where a reward of exactly 1 counts as correct.
bool keep_rewards(std::span<const double> rewards);
bool filter_group(const RolloutGroup& group);

/// (R_i - mean) / std with the population standard deviation. Throws
/// ContractError when the rewards are all equal.
std::vector<double> compute_advantages(std::span<const double> rewards);

struct GrpoLossStats {
  std::size_t tokens = 0;
  std::size_t clipped_tokens = 0;

  double clip_fraction() const { return tokens ? static_cast<double>(clipped_tokens) / tokens : 0.0; }
};

/// Token-level clipped surrogate, negated, normalized by the total response
/// length of the group:
///   -1/sum|tau_i| * sum_i sum_t min(r A_i, clip(r, 1-eps_low, 1+eps_high) A_i),
/// r = exp(logpi - old_logprob). No KL term. Non-finite ratios throw
/// NumericError naming the trajectory and token.
ag::Var grpo_loss_tape(ag::Tape& tape, const StackView& view, const RolloutGroup& group,
                       std::span<const double> advantages, double eps_low, double eps_high,
                       GrpoLossStats* stats = nullptr);

/// The same objective from explicit per-token log-probabilities, for
/// checking the branch logic in isolation. `new_logprobs[i]` is [|tau_i|].
ag::Var clipped_objective(std::span<const ag::Var> new_logprobs, const std::vector<std::vector<double>>& old_logprobs,
                          std::span<const double> advantages, double eps_low, double eps_high,
                          GrpoLossStats* stats = nullptr);

struct RLStepLog {
  int step = 0;
  double mean_reward = 0.0;
  double drop_rate = 0.0;
  double clip_frac = 0.0;
  double loss = 0.0;
  std::optional<double> eval_acc;
  double wallclock_s = 0.0;
  int groups_kept = 0;
};

struct RLResult {
  std::vector<RLStepLog> log;
  int skipped_batches = 0;
  /// True when max_seconds ended the run before total_steps.
  bool stopped_early = false;
  /// Every group that reached the loss, if recording was requested.
  std::vector<RolloutGroup> processed;
};

struct RLHooks {
  /// Greedy accuracy on a held-out set; called at step 0, every eval_every
  /// steps and after the last step.
  std::function<double(const DenseParams&)> evaluate;
  std::function<void(const RLStepLog&)> on_step;
  bool record_groups = false;
};

/// Stage-RL loop: sample queries, roll out groups, filter, normalize, then
/// inner_epochs of AdamW on the group-averaged clipped loss.
RLResult rl_train(const RLConfig& cfg, DenseParams& params, const std::vector<PromptRecord>& pool,
                  const RLHooks& hooks = {});

/// One optimizer pass over prepared groups (used by rl_train and tests).
/// Returns the mean group loss.
double grpo_update(DenseParams& params, AdamW& opt, const std::vector<RolloutGroup>& groups,
                   double eps_low, double eps_high, GrpoLossStats* stats = nullptr);

}  // namespace home
