#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "home/autograd.hpp"
#include "home/model.hpp"

namespace home {

/// Router output classes. The numeric value is the router logit index and
/// the SFT mode label.
enum class Mode : int { NonThinking = 0, Thinking = 1 };

const char* mode_name(Mode m);

struct ExpertPair {
  FfnWeights think;
  FfnWeights nonthink;

  const FfnWeights& get(Mode m) const { return m == Mode::Thinking ? think : nonthink; }
};

struct RouterConfig {
  int hidden = 32;
  /// Only "mean_token_embedding" is implemented: mean of the prompt's token
  /// embedding rows, before any block runs.
  std::string pooling = "mean_token_embedding";

  void validate() const;
};

/// Two-layer MLP: gelu(pooled W1 + b1) W2 + b2 -> 2 logits.
struct RouterWeights {
  Tensor w1, b1, w2, b2;

  std::size_t param_count() const { return w1.size() + b1.size() + w2.size() + b2.size(); }
};

struct RouteDecision {
  Mode mode = Mode::NonThinking;
  /// Probability of the chosen mode.
  double probability = 0.5;
  /// Indexed by Mode: {p(NonThinking), p(Thinking)}.
  std::array<double, 2> probs{0.5, 0.5};
};

/// Dense trunk shared by both modes, one FFN pair per block, one global router.
struct HybridParams {
  ModelConfig config;
  RouterConfig router_config;
  Trunk trunk;
  std::vector<ExpertPair> experts;
  RouterWeights router;

  StackView view(Mode m) const;
  std::vector<std::pair<std::string, Tensor*>> named_tensors();
  std::vector<std::pair<std::string, const Tensor*>> named_tensors() const;
  std::vector<Tensor*> parameters();
  std::size_t param_count() const;
};

RouterWeights init_router(const ModelConfig& config, const RouterConfig& rc, std::uint64_t seed);

/// Copies shared weights verbatim, duplicates each block's FFN into both
/// experts, and attaches a freshly initialized router.
HybridParams expand(const DenseParams& dense, std::uint64_t router_seed, const RouterConfig& rc = {});

/// Raw router logits [2] on the tape (index by Mode).
ag::Var router_logits(ag::Tape& tape, const HybridParams& hybrid, std::span<const int> prompt_ids);

/// Softmax over router logits, argmax with ties going to NonThinking.
RouteDecision route(const HybridParams& hybrid, std::span<const int> prompt_ids);
RouteDecision decision_from_logits(double nonthink_logit, double think_logit);

/// Causal logits with every block's FFN taken from the decided expert.
Tensor forward_hybrid(const HybridParams& hybrid, std::span<const int> ids, const RouteDecision& decision);

/// Routes once on the prompt, then decodes the whole response with that expert.
std::pair<RouteDecision, Trajectory> generate_hybrid(const HybridParams& hybrid, std::span<const int> prompt_ids,
                                                     const SamplingConfig& cfg, std::uint64_t rng_seed);

}  // namespace home
