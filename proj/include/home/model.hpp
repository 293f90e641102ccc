#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "home/autograd.hpp"
#include "home/tensor.hpp"

namespace home {

/// Input longer than the model context.
class LengthError : public std::length_error {
 public:
  using std::length_error::length_error;
};

struct ModelConfig {
  int vocab_size = 103;
  int d_model = 64;
  int n_blocks = 4;
  int n_heads = 2;
  int d_ffn = 128;
  int max_seq = 256;
  std::uint64_t seed = 1;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Two linear maps with a GELU in between: gelu(x W_in + b_in) W_out + b_out.
struct FfnWeights {
  Tensor w_in, b_in, w_out, b_out;

  std::size_t param_count() const;
};

/// Per-block weights that every expert shares: attention and both norms.
struct SharedBlock {
  Tensor attn_norm, wq, wk, wv, wo, ffn_norm;
};

/// Everything outside the FFNs: embeddings (tied with the output head),
/// learned positions, shared blocks, final norm.
struct Trunk {
  Tensor tok_emb, pos_emb;
  std::vector<SharedBlock> blocks;
  Tensor final_norm;
};

/// Read-only view of one concrete decoder stack: a trunk plus the FFN used in
/// each block. Dense models and each hybrid mode produce one of these.
struct StackView {
  const ModelConfig* config = nullptr;
  const Trunk* trunk = nullptr;
  std::vector<const FfnWeights*> ffn;
};

struct DenseParams {
  ModelConfig config;
  Trunk trunk;
  std::vector<FfnWeights> ffn;

  static DenseParams init(const ModelConfig& config);

  StackView view() const;
  std::vector<std::pair<std::string, Tensor*>> named_tensors();
  std::vector<std::pair<std::string, const Tensor*>> named_tensors() const;
  std::vector<Tensor*> parameters();
  std::size_t param_count() const;
  bool all_finite() const;
};

/// Named tensors of a trunk, prefixed consistently for dense and hybrid checkpoints.
std::vector<std::pair<std::string, const Tensor*>> trunk_tensors(const Trunk& trunk);
std::vector<std::pair<std::string, Tensor*>> trunk_tensors(Trunk& trunk);
std::vector<std::pair<std::string, Tensor*>> ffn_tensors(FfnWeights& ffn, const std::string& prefix);
std::vector<std::pair<std::string, const Tensor*>> ffn_tensors(const FfnWeights& ffn, const std::string& prefix);

Trunk init_trunk(const ModelConfig& config, std::uint64_t seed);
FfnWeights init_ffn(const ModelConfig& config, std::uint64_t seed);

/// Teacher-forced causal logits [len x vocab] recorded on `tape`.
ag::Var forward_tape(ag::Tape& tape, const StackView& view, std::span<const int> ids);

/// log pi(response_t | prompt, response_<t) for every response token, on the tape.
ag::Var response_logprobs_tape(ag::Tape& tape, const StackView& view, std::span<const int> prompt_ids,
                               std::span<const int> response_ids);

Tensor forward_logits(const StackView& view, std::span<const int> ids);
Tensor forward_logits(const DenseParams& params, std::span<const int> ids);

std::vector<double> score_logprobs(const StackView& view, std::span<const int> prompt_ids,
                                   std::span<const int> response_ids);
std::vector<double> score_logprobs(const DenseParams& params, std::span<const int> prompt_ids,
                                   std::span<const int> response_ids);

/// Incremental single-sequence decoder with a key/value cache. Computes the
/// same function as forward_tape one position at a time, without a tape.
class Decoder {
 public:
  explicit Decoder(const StackView& view);

  /// Appends one token and returns next-token logits.
  const std::vector<double>& step(int token);
  int position() const { return pos_; }

 private:
  StackView view_;
  int pos_ = 0;
  std::vector<std::vector<double>> keys_, vals_;
  std::vector<double> x_, a_, q_, k_, v_, att_, tmp_, hid_, logits_, scores_;
};

struct SamplingConfig {
  double temperature = 1.0;
  int top_k = 0;  // 0 disables top-k filtering
  bool greedy = false;
  int max_new = 64;
};

struct Trajectory {
  std::vector<int> prompt_ids;
  std::vector<int> response_ids;
  /// Untempered model log-probabilities of each emitted token.
  std::vector<double> old_logprobs;
  std::string text;
  bool hit_eos = false;
};

/// Autoregressive decoding until EOS, max_new tokens, or the context limit.
Trajectory generate(const StackView& view, std::span<const int> prompt_ids, const SamplingConfig& cfg,
                    std::uint64_t rng_seed);
Trajectory generate(const DenseParams& params, std::span<const int> prompt_ids, const SamplingConfig& cfg,
                    std::uint64_t rng_seed);

/// Anything that turns a prompt and an RNG seed into a trajectory: a model
/// plus sampling settings, or a scripted stand-in in tests.
using TrajectorySampler = std::function<Trajectory(std::span<const int> prompt_ids, std::uint64_t seed)>;

/// Sampler over a model stack. The view's pointees must outlive the sampler.
TrajectorySampler model_sampler(StackView view, SamplingConfig cfg);

/// Index of the largest entry; ties resolve to the lowest index.
int argmax(std::span<const double> xs);

}  // namespace home
