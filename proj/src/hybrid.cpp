#include "home/hybrid.hpp"

#include <cmath>

#include "home/parallel.hpp"
#include "home/rng.hpp"

namespace home {

const char* mode_name(Mode m) { return m == Mode::Thinking ? "thinking" : "nonthinking"; }

void RouterConfig::validate() const {
  if (hidden < 1) throw ContractError("router hidden width must be at least 1");
  if (pooling != "mean_token_embedding") throw ContractError("unknown router pooling rule '" + pooling + "'");
}

RouterWeights init_router(const ModelConfig& config, const RouterConfig& rc, std::uint64_t seed) {
  rc.validate();
  Rng rng(hash_seed(seed, 0x726f75746572ULL));
  const auto d = static_cast<std::size_t>(config.d_model), h = static_cast<std::size_t>(rc.hidden);
  RouterWeights r;
  r.w1 = Tensor({d, h});
  const double s1 = 1.0 / std::sqrt(static_cast<double>(d));
  for (double& x : r.w1.values) x = s1 * rng.normal();
  r.b1 = Tensor({h}, 0.0);
  r.w2 = Tensor({h, 2});
  for (double& x : r.w2.values) x = 0.01 * rng.normal();
  r.b2 = Tensor({2}, 0.0);
  return r;
}

StackView HybridParams::view(Mode m) const {
  StackView v{&config, &trunk, {}};
  for (const auto& e : experts) v.ffn.push_back(&e.get(m));
  return v;
}

template <typename H, typename Out>
static void collect_hybrid(H& h, Out& out) {
  for (auto& entry : trunk_tensors(h.trunk)) out.push_back(entry);
  for (std::size_t b = 0; b < h.experts.size(); ++b) {
    const std::string p = "block" + std::to_string(b) + ".ffn.";
    for (auto& entry : ffn_tensors(h.experts[b].think, p + "think.")) out.push_back(entry);
    for (auto& entry : ffn_tensors(h.experts[b].nonthink, p + "nonthink.")) out.push_back(entry);
  }
  out.emplace_back("router.w1", &h.router.w1);
  out.emplace_back("router.b1", &h.router.b1);
  out.emplace_back("router.w2", &h.router.w2);
  out.emplace_back("router.b2", &h.router.b2);
}

std::vector<std::pair<std::string, Tensor*>> HybridParams::named_tensors() {
  std::vector<std::pair<std::string, Tensor*>> out;
  collect_hybrid(*this, out);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> HybridParams::named_tensors() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  collect_hybrid(*this, out);
  return out;
}

std::vector<Tensor*> HybridParams::parameters() {
  std::vector<Tensor*> out;
  for (auto& [name, t] : named_tensors()) out.push_back(t);
  return out;
}

std::size_t HybridParams::param_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_tensors()) n += t->size();
  return n;
}

HybridParams expand(const DenseParams& dense, std::uint64_t router_seed, const RouterConfig& rc) {
  if (!dense.all_finite()) throw NumericError("expand: dense parameters contain non-finite values");
  dense.config.validate();
  HybridParams h;
  h.config = dense.config;
  h.router_config = rc;
  h.trunk = dense.trunk;
  h.experts.reserve(dense.ffn.size());
  for (const auto& f : dense.ffn) h.experts.push_back(ExpertPair{f, f});
  h.router = init_router(dense.config, rc, router_seed);
  return h;
}

ag::Var router_logits(ag::Tape& tape, const HybridParams& hybrid, std::span<const int> prompt_ids) {
  if (prompt_ids.empty()) throw ContractError("route requires a nonempty prompt");
  const auto n = prompt_ids.size();
  ag::Var emb = ag::embedding(tape.parameter(hybrid.trunk.tok_emb), prompt_ids);
  ag::Var pool = tape.constant(Tensor({1, n}, 1.0 / static_cast<double>(n)));
  ag::Var pooled = ag::matmul(pool, emb);
  ag::Var h = ag::gelu(ag::add(ag::matmul(pooled, tape.parameter(hybrid.router.w1)), tape.parameter(hybrid.router.b1)));
  ag::Var logits = ag::add(ag::matmul(h, tape.parameter(hybrid.router.w2)), tape.parameter(hybrid.router.b2));
  return ag::reshape(logits, {2});
}

RouteDecision decision_from_logits(double nonthink_logit, double think_logit) {
  const double mx = std::max(nonthink_logit, think_logit);
  const double e0 = std::exp(nonthink_logit - mx), e1 = std::exp(think_logit - mx);
  RouteDecision d;
  d.probs = {e0 / (e0 + e1), e1 / (e0 + e1)};
  d.mode = d.probs[1] > d.probs[0] ? Mode::Thinking : Mode::NonThinking;
  d.probability = d.probs[static_cast<int>(d.mode)];
  return d;
}

RouteDecision route(const HybridParams& hybrid, std::span<const int> prompt_ids) {
  ag::Tape tape(false);
  auto lv = router_logits(tape, hybrid, prompt_ids).values();
  return decision_from_logits(lv[0], lv[1]);
}

Tensor forward_hybrid(const HybridParams& hybrid, std::span<const int> ids, const RouteDecision& decision) {
  return forward_logits(hybrid.view(decision.mode), ids);
}

std::pair<RouteDecision, Trajectory> generate_hybrid(const HybridParams& hybrid, std::span<const int> prompt_ids,
                                                     const SamplingConfig& cfg, std::uint64_t rng_seed) {
  const RouteDecision d = route(hybrid, prompt_ids);
  return {d, generate(hybrid.view(d.mode), prompt_ids, cfg, rng_seed)};
}

}  // namespace home
