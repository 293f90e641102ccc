#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "home/autograd.hpp"
#include "home/hybrid.hpp"
#include "home/model.hpp"
#include "home/tasks.hpp"

namespace home {

struct SftConfig {
  double lr = 5e-4;
  int batch_size = 8;
  int epochs = 16;
  std::uint64_t seed = 1;
  /// Thinking : non-thinking volume used when assembling the dataset.
  double mix_thinking = 1.0;
  double mix_nonthinking = 2.0;
  double w_prediction = 1.0;
  double w_router = 1.0;
  /// Evaluate every this many steps (and at the start and end); 0 disables.
  int eval_every = 50;
  /// Stop after this many optimizer steps; 0 means run all epochs.
  int max_steps = 0;

  void validate() const;
};

/// Mean next-token cross-entropy over the response positions of
/// prompt ++ response; prompt positions are masked out.
ag::Var prediction_loss_tape(ag::Tape& tape, const StackView& view, std::span<const int> prompt_ids,
                             std::span<const int> response_ids);

/// True when prompt ++ response fits the model context for teacher forcing.
bool fits_context(const ModelConfig& config, std::size_t prompt_len, std::size_t response_len);

struct SftLossVars {
  ag::Var total;
  ag::Var prediction;
  ag::Var router;
  int used = 0;
  int skipped = 0;
};

/// L_total = w_pred * L_prediction + w_router * L_router, each averaged over
/// the samples that fit the context. Each sample runs through the expert
/// picked by its mode label; L_router is the 2-way cross-entropy of the router
/// logits against that label. Over-length samples are skipped and counted.
/// Throws ContractError when nothing in the batch fits.
SftLossVars sft_loss_tape(ag::Tape& tape, const HybridParams& hybrid, std::span<const SftSample> batch,
                          double w_prediction = 1.0, double w_router = 1.0);

struct SftLossValue {
  double total = 0.0;
  double prediction = 0.0;
  double router = 0.0;
  int used = 0;
  int skipped = 0;
};

SftLossValue sft_loss(const HybridParams& hybrid, std::span<const SftSample> batch, double w_prediction = 1.0,
                      double w_router = 1.0);

using NamedValues = std::vector<std::pair<std::string, double>>;

struct SftStepLog {
  int step = 0;
  double l_total = 0.0;
  double l_prediction = 0.0;
  double l_router = 0.0;
  /// Filled on evaluation steps, e.g. {"reasoning-dev_acc", 0.8}.
  NamedValues eval;
  double wallclock_s = 0.0;
};

struct SftHooks {
  std::function<NamedValues(const HybridParams&)> evaluate;
  std::function<void(const SftStepLog&)> on_step;
};

struct SftResult {
  std::vector<SftStepLog> log;
  int skipped_samples = 0;
  int steps = 0;
};

/// Shuffled mixed batches, one AdamW step per batch over all hybrid weights.
/// Experts absent from a batch receive no gradient and are not touched.
SftResult sft_train(const SftConfig& cfg, HybridParams& hybrid, const std::vector<SftSample>& dataset,
                    const SftHooks& hooks = {});

struct WarmupConfig {
  double lr = 2e-3;
  int batch_size = 8;
  int steps = 1500;
  std::uint64_t seed = 1;
  int eval_every = 250;

  void validate() const;
};

struct WarmupStepLog {
  int step = 0;
  double loss = 0.0;
  std::optional<double> eval_acc;
  double wallclock_s = 0.0;
};

struct WarmupHooks {
  std::function<double(const DenseParams&)> evaluate;
  std::function<void(const WarmupStepLog&)> on_step;
};

/// Plain teacher-forced fine-tuning of a dense model on reference transcripts.
std::vector<WarmupStepLog> warmup_train(const WarmupConfig& cfg, DenseParams& params,
                                        const std::vector<SftSample>& dataset, const WarmupHooks& hooks = {});

}  // namespace home
