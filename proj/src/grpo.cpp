#include "home/grpo.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <string>

#include "home/log.hpp"
#include "home/optim.hpp"
#include "home/parallel.hpp"
#include "home/rng.hpp"
#include "home/tokenizer.hpp"

namespace home {

void RLConfig::validate() const {
  if (G < 2) throw ContractError("rl: G must be at least 2");
  if (!(eps_low > 0.0) || !(eps_low <= eps_high) || !(eps_high < 1.0)) {
    throw ContractError("rl: need 0 < eps_low <= eps_high < 1");
  }
  if (inner_epochs < 1) throw ContractError("rl: inner_epochs must be at least 1");
  if (batch_queries < 1) throw ContractError("rl: batch_queries must be at least 1");
  if (max_new < 1) throw ContractError("rl: max_new must be at least 1");
  if (total_steps < 0) throw ContractError("rl: total_steps must be nonnegative");
  if (!(max_seconds >= 0.0)) throw ContractError("rl: max_seconds must be nonnegative");
  if (!(lr >= 0.0)) throw ContractError("rl: lr must be nonnegative");
  if (!(temperature > 0.0)) throw ContractError("rl: temperature must be positive");
}

SamplingConfig RLConfig::sampling() const {
  SamplingConfig sc;
  sc.temperature = temperature;
  sc.top_k = top_k;
  sc.max_new = max_new;
  return sc;
}

RolloutGroup generate_group(const TrajectorySampler& sampler, const PromptRecord& query, int G,
                            std::uint64_t run_seed, double format_bonus) {
  if (G < 1) throw ContractError("group size must be positive");
  RolloutGroup g;
  g.query = query;
  const auto prompt_ids = Tokenizer::encode_prompt(query.prompt);
  for (int i = 0; i < G; ++i) {
    Trajectory t = sampler(prompt_ids, hash_seed(run_seed, query.id, static_cast<std::uint64_t>(i)));
    const RewardResult r = compute_reward(t.text, query.gt, format_bonus);
    g.rewards.push_back(r.total);
    g.results.push_back(r);
    g.trajectories.push_back(std::move(t));
  }
  return g;
}

bool keep_rewards(std::span<const double> rewards) {
  const auto correct = std::count(rewards.begin(), rewards.end(), 1.0);
  return correct > 0 && correct < static_cast<std::ptrdiff_t>(rewards.size());
}

bool filter_group(const RolloutGroup& group) { return keep_rewards(group.rewards); }

std::vector<double> compute_advantages(std::span<const double> rewards) {
  if (rewards.empty()) throw ContractError("advantages of an empty group");
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  if (!(sd > 0.0)) throw ContractError("advantages undefined: all rewards in the group are equal");
  std::vector<double> out;
  out.reserve(rewards.size());
  for (double r : rewards) out.push_back((r - mean) / sd);
  return out;
}

ag::Var clipped_objective(std::span<const ag::Var> new_logprobs, const std::vector<std::vector<double>>& old_logprobs,
                          std::span<const double> advantages, double eps_low, double eps_high,
                          GrpoLossStats* stats) {
  if (new_logprobs.size() != old_logprobs.size() || new_logprobs.size() != advantages.size()) {
    throw ContractError("clipped objective: trajectory counts differ");
  }
  ag::Tape* tape = nullptr;
  std::size_t total_tokens = 0;
  for (std::size_t i = 0; i < new_logprobs.size(); ++i) {
    if (new_logprobs[i].size() != old_logprobs[i].size()) {
      throw ContractError("clipped objective: trajectory " + std::to_string(i) + " has " +
                          std::to_string(new_logprobs[i].size()) + " new and " +
                          std::to_string(old_logprobs[i].size()) + " old log-probabilities");
    }
    total_tokens += old_logprobs[i].size();
    if (new_logprobs[i].valid()) tape = new_logprobs[i].tape();
  }
  if (total_tokens == 0 || !tape) throw ContractError("clipped objective over zero tokens");

  std::vector<ag::Var> terms;
  std::size_t clipped = 0;
  for (std::size_t i = 0; i < new_logprobs.size(); ++i) {
    const std::size_t len = old_logprobs[i].size();
    if (len == 0) continue;
    const auto nl = new_logprobs[i].values();
    const double a = advantages[i];
    for (std::size_t t = 0; t < len; ++t) {
      const double r = std::exp(nl[t] - old_logprobs[i][t]);
      if (!std::isfinite(r)) {
        throw NumericError("non-finite importance ratio at trajectory " + std::to_string(i) + ", token " +
                           std::to_string(t));
      }
      const double rc = std::clamp(r, 1.0 - eps_low, 1.0 + eps_high);
      if (rc * a < r * a) ++clipped;
    }
    ag::Var old = tape->constant(Tensor({len}, old_logprobs[i]));
    ag::Var ratio = ag::exp(ag::sub(new_logprobs[i], old));
    ag::Var unclipped = ag::scale(ratio, a);
    ag::Var clipped_branch = ag::scale(ag::clamp(ratio, 1.0 - eps_low, 1.0 + eps_high), a);
    terms.push_back(ag::sum(ag::minimum(unclipped, clipped_branch)));
  }
  ag::Var total = terms.size() == 1 ? terms[0] : ag::sum(ag::concat(terms, 0));
  if (stats) {
    stats->tokens += total_tokens;
    stats->clipped_tokens += clipped;
  }
  return ag::scale(total, -1.0 / static_cast<double>(total_tokens));
}

ag::Var grpo_loss_tape(ag::Tape& tape, const StackView& view, const RolloutGroup& group,
                       std::span<const double> advantages, double eps_low, double eps_high, GrpoLossStats* stats) {
  if (advantages.size() != group.trajectories.size()) throw ContractError("one advantage per trajectory required");
  std::vector<ag::Var> lps;
  std::vector<std::vector<double>> olds;
  std::vector<double> advs;
  for (std::size_t i = 0; i < group.trajectories.size(); ++i) {
    const Trajectory& tr = group.trajectories[i];
    if (tr.old_logprobs.size() != tr.response_ids.size()) {
      throw ContractError("trajectory " + std::to_string(i) + " lacks stored log-probabilities");
    }
    if (tr.response_ids.empty()) continue;
    lps.push_back(response_logprobs_tape(tape, view, tr.prompt_ids, tr.response_ids));
    olds.push_back(tr.old_logprobs);
    advs.push_back(advantages[i]);
  }
  return clipped_objective(lps, olds, advs, eps_low, eps_high, stats);
}

double grpo_update(DenseParams& params, AdamW& opt, const std::vector<RolloutGroup>& groups, double eps_low,
                   double eps_high, GrpoLossStats* stats) {
  if (groups.empty()) return 0.0;
  opt.zero_grad();
  const StackView view = params.view();
  const double w = 1.0 / static_cast<double>(groups.size());
  double loss_sum = 0.0;
  for (const auto& g : groups) {
    const auto adv = compute_advantages(g.rewards);
    ag::Tape tape;
    ag::Var loss = grpo_loss_tape(tape, view, g, adv, eps_low, eps_high, stats);
    loss_sum += loss.item();
    tape.backward(loss);
    accumulate_grads(tape, opt.params(), w);
  }
  opt.step();
  return loss_sum * w;
}

RLResult rl_train(const RLConfig& cfg, DenseParams& params, const std::vector<PromptRecord>& pool,
                  const RLHooks& hooks) {
  cfg.validate();
  if (pool.empty()) throw ContractError("rl: empty prompt pool");
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

  AdamWConfig acfg;
  acfg.lr = cfg.lr;
  AdamW opt(params.parameters(), acfg);
  RLResult result;

  // Deterministic epoch-wise shuffle of the pool.
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  std::uint64_t epoch = 0;
  auto next_query = [&]() -> const PromptRecord& {
    if (cursor == order.size()) {
      order.resize(pool.size());
      std::iota(order.begin(), order.end(), 0);
      Rng rng(hash_seed(cfg.seed, 0x706f6f6cULL, epoch++));
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
      cursor = 0;
    }
    return pool[order[cursor++]];
  };

  if (hooks.evaluate) {
    RLStepLog row;
    row.step = 0;
    row.eval_acc = hooks.evaluate(params);
    row.wallclock_s = elapsed();
    result.log.push_back(row);
    if (hooks.on_step) hooks.on_step(row);
  }

  const SamplingConfig sc = cfg.sampling();
  double last_step_s = 0.0;
  for (int step = 1; step <= cfg.total_steps; ++step) {
    const double started = elapsed();
    if (cfg.max_seconds > 0.0 && started + last_step_s > cfg.max_seconds) {
      result.stopped_early = true;
      break;
    }
    const TrajectorySampler sampler = model_sampler(params.view(), sc);
    const std::uint64_t run_seed = hash_seed(cfg.seed, static_cast<std::uint64_t>(step));

    std::vector<RolloutGroup> kept;
    double reward_sum = 0.0;
    std::size_t reward_n = 0, groups_seen = 0, dropped = 0;
    const int max_rounds = cfg.resample_dropped ? 4 : 1;
    for (int round = 0; round < max_rounds && static_cast<int>(kept.size()) < cfg.batch_queries; ++round) {
      const std::size_t want = static_cast<std::size_t>(cfg.batch_queries) - kept.size();
      std::vector<PromptRecord> queries;
      for (std::size_t q = 0; q < want; ++q) queries.push_back(next_query());
      std::vector<RolloutGroup> groups(queries.size());
      parallel_for(queries.size(), [&](std::size_t q) {
        groups[q] = generate_group(sampler, queries[q], cfg.G, hash_seed(run_seed, static_cast<std::uint64_t>(round)),
                                   cfg.format_bonus);
      });
      for (auto& g : groups) {
        ++groups_seen;
        for (double r : g.rewards) reward_sum += r;
        reward_n += g.rewards.size();
        if (filter_group(g)) {
          kept.push_back(std::move(g));
        } else {
          ++dropped;
        }
      }
    }

    RLStepLog row;
    row.step = step;
    row.mean_reward = reward_n ? reward_sum / static_cast<double>(reward_n) : 0.0;
    row.drop_rate = groups_seen ? static_cast<double>(dropped) / static_cast<double>(groups_seen) : 0.0;
    row.groups_kept = static_cast<int>(kept.size());
    if (kept.empty()) {
      ++result.skipped_batches;
      log_warn("rl step " + std::to_string(step) + ": every group was filtered out, batch skipped");
      row.loss = std::nan("");
      row.clip_frac = std::nan("");
    } else {
      GrpoLossStats stats;
      double loss = 0.0;
      for (int e = 0; e < cfg.inner_epochs; ++e) loss = grpo_update(params, opt, kept, cfg.eps_low, cfg.eps_high, &stats);
      row.loss = loss;
      row.clip_frac = stats.clip_fraction();
      if (hooks.record_groups) {
        for (auto& g : kept) result.processed.push_back(std::move(g));
      }
    }
    if (hooks.evaluate && cfg.eval_every > 0 && (step % cfg.eval_every == 0 || step == cfg.total_steps)) {
      row.eval_acc = hooks.evaluate(params);
    }
    row.wallclock_s = elapsed();
    last_step_s = row.wallclock_s - started;
    result.log.push_back(row);
    if (hooks.on_step) hooks.on_step(row);
  }
  // Out of time: make sure the final policy gets an evaluation row too.
  if (result.stopped_early && hooks.evaluate && cfg.eval_every > 0 && !result.log.empty() &&
      !result.log.back().eval_acc) {
    RLStepLog& last = result.log.back();
    last.eval_acc = hooks.evaluate(params);
    last.wallclock_s = elapsed();
    if (hooks.on_step) hooks.on_step(last);
  }
  return result;
}

}  // namespace home
