#include "home/sft.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "home/log.hpp"
#include "home/optim.hpp"
#include "home/parallel.hpp"
#include "home/rng.hpp"
#include "home/tokenizer.hpp"

namespace home {

void SftConfig::validate() const {
  if (!(lr >= 0.0)) throw ContractError("sft: lr must be nonnegative");
  if (batch_size < 1) throw ContractError("sft: batch_size must be at least 1");
  if (epochs < 1) throw ContractError("sft: epochs must be at least 1");
  if (!(mix_thinking > 0.0) || !(mix_nonthinking > 0.0)) throw ContractError("sft: mix ratio must be positive");
  if (!(w_prediction > 0.0) || !(w_router > 0.0)) throw ContractError("sft: loss weights must be positive");
  if (max_steps < 0 || eval_every < 0) throw ContractError("sft: step counts must be nonnegative");
}

void WarmupConfig::validate() const {
  if (!(lr >= 0.0)) throw ContractError("warmup: lr must be nonnegative");
  if (batch_size < 1) throw ContractError("warmup: batch_size must be at least 1");
  if (steps < 0 || eval_every < 0) throw ContractError("warmup: step counts must be nonnegative");
}

bool fits_context(const ModelConfig& config, std::size_t prompt_len, std::size_t response_len) {
  return prompt_len + response_len - 1 <= static_cast<std::size_t>(config.max_seq);
}

ag::Var prediction_loss_tape(ag::Tape& tape, const StackView& view, std::span<const int> prompt_ids,
                             std::span<const int> response_ids) {
  if (prompt_ids.empty() || response_ids.empty()) throw ContractError("prediction loss needs a prompt and a response");
  std::vector<int> ids(prompt_ids.begin(), prompt_ids.end());
  ids.insert(ids.end(), response_ids.begin(), response_ids.end());
  const std::size_t n = ids.size() - 1;
  std::vector<int> targets(ids.begin() + 1, ids.end());
  std::vector<std::uint8_t> mask(n, 0);
  for (std::size_t t = prompt_ids.size() - 1; t < n; ++t) mask[t] = 1;
  ids.pop_back();
  return ag::cross_entropy(forward_tape(tape, view, ids), targets, mask);
}

SftLossVars sft_loss_tape(ag::Tape& tape, const HybridParams& hybrid, std::span<const SftSample> batch,
                          double w_prediction, double w_router) {
  if (batch.empty()) throw ContractError("sft loss on an empty batch");
  SftLossVars out;
  std::vector<ag::Var> preds, routes;
  for (const auto& s : batch) {
    const int label = mode_label(s);
    const auto prompt = Tokenizer::encode_prompt(s.prompt);
    const auto response = Tokenizer::encode_response(s.target);
    if (!fits_context(hybrid.config, prompt.size(), response.size())) {
      ++out.skipped;
      continue;
    }
    const Mode m = static_cast<Mode>(label);
    preds.push_back(ag::reshape(prediction_loss_tape(tape, hybrid.view(m), prompt, response), {1}));
    ag::Var logits = ag::reshape(router_logits(tape, hybrid, prompt), {1, 2});
    const int target[1] = {label};
    const std::uint8_t mask[1] = {1};
    routes.push_back(ag::reshape(ag::cross_entropy(logits, target, mask), {1}));
    ++out.used;
  }
  if (out.used == 0) throw ContractError("sft batch has no sample that fits the context");
  if (out.skipped > 0) log_warn("sft: skipped " + std::to_string(out.skipped) + " over-length sample(s)");
  out.prediction = ag::mean(ag::concat(preds, 0));
  out.router = ag::mean(ag::concat(routes, 0));
  out.total = ag::add(ag::scale(out.prediction, w_prediction), ag::scale(out.router, w_router));
  return out;
}

SftLossValue sft_loss(const HybridParams& hybrid, std::span<const SftSample> batch, double w_prediction,
                      double w_router) {
  ag::Tape tape(false);
  const SftLossVars v = sft_loss_tape(tape, hybrid, batch, w_prediction, w_router);
  return {v.total.item(), v.prediction.item(), v.router.item(), v.used, v.skipped};
}

namespace {

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

SftResult sft_train(const SftConfig& cfg, HybridParams& hybrid, const std::vector<SftSample>& dataset,
                    const SftHooks& hooks) {
  cfg.validate();
  if (dataset.empty()) throw ContractError("sft: empty dataset");
  std::size_t thinking = 0;
  for (const auto& s : dataset) thinking += mode_label(s) == 1;
  if (thinking == 0 || thinking == dataset.size()) {
    log_warn("sft: dataset holds a single mode; the router cannot learn both classes");
  }
  const auto t0 = std::chrono::steady_clock::now();
  AdamWConfig acfg;
  acfg.lr = cfg.lr;
  AdamW opt(hybrid.parameters(), acfg);
  SftResult result;

  auto maybe_eval = [&](SftStepLog& row) {
    if (hooks.evaluate) row.eval = hooks.evaluate(hybrid);
  };
  if (hooks.evaluate && cfg.eval_every > 0) {
    SftStepLog row;
    const auto probe = std::span(dataset).first(std::min<std::size_t>(dataset.size(), cfg.batch_size));
    const SftLossValue v = sft_loss(hybrid, probe, cfg.w_prediction, cfg.w_router);
    row.l_total = v.total;
    row.l_prediction = v.prediction;
    row.l_router = v.router;
    maybe_eval(row);
    row.wallclock_s = seconds_since(t0);
    result.log.push_back(row);
    if (hooks.on_step) hooks.on_step(row);
  }

  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t per_epoch = (dataset.size() + bs - 1) / bs;
  const std::size_t planned = per_epoch * static_cast<std::size_t>(cfg.epochs);
  const std::size_t total =
      cfg.max_steps > 0 ? std::min(planned, static_cast<std::size_t>(cfg.max_steps)) : planned;
  std::vector<std::size_t> order;
  std::vector<SftSample> batch;
  for (std::size_t step = 1; step <= total; ++step) {
    const std::size_t epoch = (step - 1) / per_epoch, b = (step - 1) % per_epoch;
    if (b == 0) order = shuffled(dataset.size(), hash_seed(cfg.seed, 0x736674ULL, epoch));
    batch.clear();
    for (std::size_t i = b * bs; i < std::min(dataset.size(), (b + 1) * bs); ++i) batch.push_back(dataset[order[i]]);

    SftStepLog row;
    row.step = static_cast<int>(step);
    opt.zero_grad();
    ag::Tape tape;
    SftLossVars v;
    try {
      v = sft_loss_tape(tape, hybrid, batch, cfg.w_prediction, cfg.w_router);
    } catch (const ContractError&) {
      result.skipped_samples += static_cast<int>(batch.size());
      log_warn("sft step " + std::to_string(step) + ": no usable sample, batch skipped");
      continue;
    }
    result.skipped_samples += v.skipped;
    row.l_total = v.total.item();
    row.l_prediction = v.prediction.item();
    row.l_router = v.router.item();
    tape.backward(v.total);
    accumulate_grads(tape, opt.params());
    opt.step();
    result.steps = static_cast<int>(step);
    if (cfg.eval_every > 0 && (step % static_cast<std::size_t>(cfg.eval_every) == 0 || step == total)) maybe_eval(row);
    row.wallclock_s = seconds_since(t0);
    result.log.push_back(row);
    if (hooks.on_step) hooks.on_step(row);
  }
  return result;
}

std::vector<WarmupStepLog> warmup_train(const WarmupConfig& cfg, DenseParams& params,
                                        const std::vector<SftSample>& dataset, const WarmupHooks& hooks) {
  cfg.validate();
  if (dataset.empty()) throw ContractError("warmup: empty dataset");
  const auto t0 = std::chrono::steady_clock::now();
  AdamWConfig acfg;
  acfg.lr = cfg.lr;
  AdamW opt(params.parameters(), acfg);
  std::vector<WarmupStepLog> log;
  if (hooks.evaluate && cfg.eval_every > 0) {
    WarmupStepLog row;
    row.loss = std::nan("");
    row.eval_acc = hooks.evaluate(params);
    row.wallclock_s = seconds_since(t0);
    log.push_back(row);
    if (hooks.on_step) hooks.on_step(row);
  }

  // Pre-tokenize once; drop anything that cannot be teacher-forced.
  std::vector<std::pair<std::vector<int>, std::vector<int>>> data;
  for (const auto& s : dataset) {
    auto p = Tokenizer::encode_prompt(s.prompt);
    auto r = Tokenizer::encode_response(s.target);
    if (fits_context(params.config, p.size(), r.size())) data.emplace_back(std::move(p), std::move(r));
  }
  if (data.size() < dataset.size()) {
    log_warn("warmup: skipped " + std::to_string(dataset.size() - data.size()) + " over-length sample(s)");
  }
  if (data.empty()) throw ContractError("warmup: no sample fits the context");

  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  std::uint64_t epoch = 0;
  const StackView view = params.view();
  for (int step = 1; step <= cfg.steps; ++step) {
    opt.zero_grad();
    ag::Tape tape;
    std::vector<ag::Var> losses;
    for (std::size_t i = 0; i < bs; ++i) {
      if (cursor == order.size()) {
        order = shuffled(data.size(), hash_seed(cfg.seed, 0x7761726dULL, epoch++));
        cursor = 0;
      }
      const auto& [p, r] = data[order[cursor++]];
      losses.push_back(ag::reshape(prediction_loss_tape(tape, view, p, r), {1}));
    }
    ag::Var loss = ag::mean(ag::concat(losses, 0));
    WarmupStepLog row;
    row.step = step;
    row.loss = loss.item();
    tape.backward(loss);
    accumulate_grads(tape, opt.params());
    opt.step();
    if (hooks.evaluate && cfg.eval_every > 0 && (step % cfg.eval_every == 0 || step == cfg.steps)) {
      row.eval_acc = hooks.evaluate(params);
    }
    row.wallclock_s = seconds_since(t0);
    log.push_back(row);
    if (hooks.on_step) hooks.on_step(row);
  }
  return log;
}

}  // namespace home
