#include "home/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "home/parallel.hpp"
#include "home/rng.hpp"
#include "home/tokenizer.hpp"

namespace home {
namespace {

constexpr double kNormEps = 1e-6;

Tensor random_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& x : t.values) x = stddev * rng.normal();
  return t;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

// out = x W for row vector x [n] and row-major W [n x m].
void matvec(std::span<const double> x, const Tensor& w, std::vector<double>& out) {
  const std::size_t n = w.shape[0], m = w.shape[1];
  out.assign(m, 0.0);
  const double* wp = w.values.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double xi = x[i];
    const double* row = wp + i * m;
    for (std::size_t j = 0; j < m; ++j) out[j] += xi * row[j];
  }
}

void rms_norm_vec(const std::vector<double>& x, const Tensor& scale, std::vector<double>& out) {
  const std::size_t d = x.size();
  double ss = 0.0;
  for (double v : x) ss += v * v;
  const double inv = 1.0 / std::sqrt(ss / static_cast<double>(d) + kNormEps);
  out.resize(d);
  for (std::size_t j = 0; j < d; ++j) out[j] = x[j] * inv * scale.values[j];
}

void check_ids(const StackView& view, std::span<const int> ids) {
  if (ids.empty()) throw ContractError("forward on an empty token sequence");
  if (static_cast<int>(ids.size()) > view.config->max_seq) {
    throw LengthError("sequence of " + std::to_string(ids.size()) + " tokens exceeds max_seq " +
                      std::to_string(view.config->max_seq));
  }
  for (int id : ids) {
    if (id < 0 || id >= view.config->vocab_size) throw ContractError("token id " + std::to_string(id) + " outside vocabulary");
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size <= 0 || d_model <= 0 || n_blocks <= 0 || n_heads <= 0 || d_ffn <= 0) {
    throw ContractError("model config: all counts must be positive");
  }
  if (d_model % n_heads != 0) throw ContractError("model config: d_model must be divisible by n_heads");
  if (max_seq < 2) throw ContractError("model config: max_seq must be at least 2");
}

std::size_t FfnWeights::param_count() const { return w_in.size() + b_in.size() + w_out.size() + b_out.size(); }

Trunk init_trunk(const ModelConfig& c, std::uint64_t seed) {
  c.validate();
  Rng rng(hash_seed(seed, 0x7472756e6bULL));
  const auto d = static_cast<std::size_t>(c.d_model);
  const double w_std = 1.0 / std::sqrt(static_cast<double>(d));
  const double out_std = w_std / std::sqrt(2.0 * c.n_blocks);
  Trunk t;
  t.tok_emb = random_tensor({static_cast<std::size_t>(c.vocab_size), d}, 0.02, rng);
  t.pos_emb = random_tensor({static_cast<std::size_t>(c.max_seq), d}, 0.02, rng);
  for (int b = 0; b < c.n_blocks; ++b) {
    SharedBlock blk;
    blk.attn_norm = Tensor({d}, 1.0);
    blk.wq = random_tensor({d, d}, w_std, rng);
    blk.wk = random_tensor({d, d}, w_std, rng);
    blk.wv = random_tensor({d, d}, w_std, rng);
    blk.wo = random_tensor({d, d}, out_std, rng);
    blk.ffn_norm = Tensor({d}, 1.0);
    t.blocks.push_back(std::move(blk));
  }
  t.final_norm = Tensor({d}, 1.0);
  return t;
}

FfnWeights init_ffn(const ModelConfig& c, std::uint64_t seed) {
  Rng rng(seed);
  const auto d = static_cast<std::size_t>(c.d_model), f = static_cast<std::size_t>(c.d_ffn);
  FfnWeights w;
  w.w_in = random_tensor({d, f}, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  w.b_in = Tensor({f}, 0.0);
  w.w_out = random_tensor({f, d}, 1.0 / std::sqrt(static_cast<double>(f)) / std::sqrt(2.0 * c.n_blocks), rng);
  w.b_out = Tensor({d}, 0.0);
  return w;
}

DenseParams DenseParams::init(const ModelConfig& config) {
  DenseParams p;
  p.config = config;
  p.trunk = init_trunk(config, config.seed);
  for (int b = 0; b < config.n_blocks; ++b) {
    p.ffn.push_back(init_ffn(config, hash_seed(config.seed, 0x66666eULL, static_cast<std::uint64_t>(b))));
  }
  return p;
}

StackView DenseParams::view() const {
  StackView v{&config, &trunk, {}};
  for (const auto& f : ffn) v.ffn.push_back(&f);
  return v;
}

template <typename TrunkT, typename Out>
static void collect_trunk(TrunkT& t, Out& out) {
  out.emplace_back("tok_emb", &t.tok_emb);
  out.emplace_back("pos_emb", &t.pos_emb);
  for (std::size_t b = 0; b < t.blocks.size(); ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    auto& blk = t.blocks[b];
    out.emplace_back(p + "attn_norm", &blk.attn_norm);
    out.emplace_back(p + "attn.wq", &blk.wq);
    out.emplace_back(p + "attn.wk", &blk.wk);
    out.emplace_back(p + "attn.wv", &blk.wv);
    out.emplace_back(p + "attn.wo", &blk.wo);
    out.emplace_back(p + "ffn_norm", &blk.ffn_norm);
  }
  out.emplace_back("final_norm", &t.final_norm);
}

template <typename FfnT, typename Out>
static void collect_ffn(FfnT& f, const std::string& prefix, Out& out) {
  out.emplace_back(prefix + "w_in", &f.w_in);
  out.emplace_back(prefix + "b_in", &f.b_in);
  out.emplace_back(prefix + "w_out", &f.w_out);
  out.emplace_back(prefix + "b_out", &f.b_out);
}

std::vector<std::pair<std::string, const Tensor*>> trunk_tensors(const Trunk& trunk) {
  std::vector<std::pair<std::string, const Tensor*>> out;
  collect_trunk(trunk, out);
  return out;
}

std::vector<std::pair<std::string, Tensor*>> trunk_tensors(Trunk& trunk) {
  std::vector<std::pair<std::string, Tensor*>> out;
  collect_trunk(trunk, out);
  return out;
}

std::vector<std::pair<std::string, Tensor*>> ffn_tensors(FfnWeights& ffn, const std::string& prefix) {
  std::vector<std::pair<std::string, Tensor*>> out;
  collect_ffn(ffn, prefix, out);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> ffn_tensors(const FfnWeights& ffn, const std::string& prefix) {
  std::vector<std::pair<std::string, const Tensor*>> out;
  collect_ffn(ffn, prefix, out);
  return out;
}

std::vector<std::pair<std::string, Tensor*>> DenseParams::named_tensors() {
  auto out = trunk_tensors(trunk);
  for (std::size_t b = 0; b < ffn.size(); ++b) {
    auto part = ffn_tensors(ffn[b], "block" + std::to_string(b) + ".ffn.");
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> DenseParams::named_tensors() const {
  auto out = trunk_tensors(trunk);
  for (std::size_t b = 0; b < ffn.size(); ++b) {
    auto part = ffn_tensors(ffn[b], "block" + std::to_string(b) + ".ffn.");
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

std::vector<Tensor*> DenseParams::parameters() {
  std::vector<Tensor*> out;
  for (auto& [name, t] : named_tensors()) out.push_back(t);
  return out;
}

std::size_t DenseParams::param_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_tensors()) n += t->size();
  return n;
}

bool DenseParams::all_finite() const {
  for (const auto& [name, t] : named_tensors()) {
    if (!t->all_finite()) return false;
  }
  return true;
}

// ------------------------------------------------------------------ forward

ag::Var forward_tape(ag::Tape& tape, const StackView& view, std::span<const int> ids) {
  check_ids(view, ids);
  const ModelConfig& c = *view.config;
  const Trunk& tr = *view.trunk;
  if (view.ffn.size() != tr.blocks.size()) throw ContractError("stack view has mismatched FFN count");
  const std::size_t len = ids.size();
  ag::Var emb = tape.parameter(tr.tok_emb);
  ag::Var x = ag::add(ag::embedding(emb, ids), ag::slice(tape.parameter(tr.pos_emb), 0, 0, len));
  for (std::size_t b = 0; b < tr.blocks.size(); ++b) {
    const SharedBlock& blk = tr.blocks[b];
    ag::Var a = ag::rms_norm(x, tape.parameter(blk.attn_norm), kNormEps);
    ag::Var q = ag::matmul(a, tape.parameter(blk.wq));
    ag::Var k = ag::matmul(a, tape.parameter(blk.wk));
    ag::Var v = ag::matmul(a, tape.parameter(blk.wv));
    ag::Var att = ag::causal_attention(q, k, v, static_cast<std::size_t>(c.n_heads));
    x = ag::add(x, ag::matmul(att, tape.parameter(blk.wo)));
    const FfnWeights& f = *view.ffn[b];
    ag::Var h = ag::rms_norm(x, tape.parameter(blk.ffn_norm), kNormEps);
    h = ag::gelu(ag::add(ag::matmul(h, tape.parameter(f.w_in)), tape.parameter(f.b_in)));
    h = ag::add(ag::matmul(h, tape.parameter(f.w_out)), tape.parameter(f.b_out));
    x = ag::add(x, h);
  }
  x = ag::rms_norm(x, tape.parameter(tr.final_norm), kNormEps);
  return ag::matmul(x, ag::transpose(emb));
}

ag::Var response_logprobs_tape(ag::Tape& tape, const StackView& view, std::span<const int> prompt_ids,
                               std::span<const int> response_ids) {
  if (prompt_ids.empty()) throw ContractError("scoring requires a nonempty prompt");
  if (response_ids.empty()) throw ContractError("scoring requires a nonempty response");
  const std::size_t total = prompt_ids.size() + response_ids.size();
  if (static_cast<int>(total) > view.config->max_seq) {
    throw LengthError("prompt + response of " + std::to_string(total) + " tokens exceeds max_seq " +
                      std::to_string(view.config->max_seq));
  }
  std::vector<int> ids(prompt_ids.begin(), prompt_ids.end());
  ids.insert(ids.end(), response_ids.begin(), response_ids.end() - 1);
  ag::Var logits = forward_tape(tape, view, ids);
  ag::Var rows = ag::slice(logits, 0, prompt_ids.size() - 1, ids.size());
  return ag::gather_logprobs(rows, response_ids);
}

Tensor forward_logits(const StackView& view, std::span<const int> ids) {
  ag::Tape tape(false);
  ag::Var logits = forward_tape(tape, view, ids);
  return Tensor(logits.shape(), std::vector<double>(logits.values().begin(), logits.values().end()));
}

Tensor forward_logits(const DenseParams& params, std::span<const int> ids) {
  return forward_logits(params.view(), ids);
}

std::vector<double> score_logprobs(const StackView& view, std::span<const int> prompt_ids,
                                   std::span<const int> response_ids) {
  ag::Tape tape(false);
  ag::Var lp = response_logprobs_tape(tape, view, prompt_ids, response_ids);
  return {lp.values().begin(), lp.values().end()};
}

std::vector<double> score_logprobs(const DenseParams& params, std::span<const int> prompt_ids,
                                   std::span<const int> response_ids) {
  return score_logprobs(params.view(), prompt_ids, response_ids);
}

// ------------------------------------------------------------------ decoder

Decoder::Decoder(const StackView& view) : view_(view) {
  view.config->validate();
  keys_.resize(view.trunk->blocks.size());
  vals_.resize(view.trunk->blocks.size());
}

const std::vector<double>& Decoder::step(int token) {
  const ModelConfig& c = *view_.config;
  const Trunk& tr = *view_.trunk;
  if (pos_ >= c.max_seq) throw LengthError("decoder exceeded max_seq " + std::to_string(c.max_seq));
  if (token < 0 || token >= c.vocab_size) throw ContractError("token id " + std::to_string(token) + " outside vocabulary");
  const auto d = static_cast<std::size_t>(c.d_model);
  const auto heads = static_cast<std::size_t>(c.n_heads);
  const std::size_t dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto t = static_cast<std::size_t>(pos_);

  x_.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    x_[j] = tr.tok_emb.values[static_cast<std::size_t>(token) * d + j] + tr.pos_emb.values[t * d + j];
  }
  for (std::size_t b = 0; b < tr.blocks.size(); ++b) {
    const SharedBlock& blk = tr.blocks[b];
    rms_norm_vec(x_, blk.attn_norm, a_);
    matvec(a_, blk.wq, q_);
    matvec(a_, blk.wk, k_);
    matvec(a_, blk.wv, v_);
    keys_[b].insert(keys_[b].end(), k_.begin(), k_.end());
    vals_[b].insert(vals_[b].end(), v_.begin(), v_.end());
    att_.assign(d, 0.0);
    scores_.resize(t + 1);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * dh;
      double mx = -INFINITY;
      for (std::size_t j = 0; j <= t; ++j) {
        double s = 0.0;
        const double* kr = keys_[b].data() + j * d + off;
        for (std::size_t cc = 0; cc < dh; ++cc) s += q_[off + cc] * kr[cc];
        scores_[j] = s * sc;
        mx = std::max(mx, scores_[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j <= t; ++j) {
        scores_[j] = std::exp(scores_[j] - mx);
        z += scores_[j];
      }
      for (std::size_t j = 0; j <= t; ++j) {
        const double p = scores_[j] / z;
        const double* vr = vals_[b].data() + j * d + off;
        for (std::size_t cc = 0; cc < dh; ++cc) att_[off + cc] += p * vr[cc];
      }
    }
    matvec(att_, blk.wo, tmp_);
    for (std::size_t j = 0; j < d; ++j) x_[j] += tmp_[j];
    const FfnWeights& f = *view_.ffn[b];
    rms_norm_vec(x_, blk.ffn_norm, a_);
    matvec(a_, f.w_in, hid_);
    for (std::size_t j = 0; j < hid_.size(); ++j) hid_[j] = gelu(hid_[j] + f.b_in.values[j]);
    matvec(hid_, f.w_out, tmp_);
    for (std::size_t j = 0; j < d; ++j) x_[j] += tmp_[j] + f.b_out.values[j];
  }
  rms_norm_vec(x_, tr.final_norm, a_);
  const auto vocab = static_cast<std::size_t>(c.vocab_size);
  logits_.assign(vocab, 0.0);
  for (std::size_t v = 0; v < vocab; ++v) {
    const double* er = tr.tok_emb.values.data() + v * d;
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += a_[j] * er[j];
    logits_[v] = s;
  }
  ++pos_;
  return logits_;
}

int argmax(std::span<const double> xs) {
  if (xs.empty()) throw ContractError("argmax of an empty vector");
  return static_cast<int>(std::max_element(xs.begin(), xs.end()) - xs.begin());
}

Trajectory generate(const StackView& view, std::span<const int> prompt_ids, const SamplingConfig& cfg,
                    std::uint64_t rng_seed) {
  if (prompt_ids.empty()) throw ContractError("generate requires a nonempty prompt");
  if (cfg.max_new < 1) throw ContractError("generate requires max_new >= 1");
  if (!cfg.greedy && !(cfg.temperature > 0.0)) throw ContractError("temperature must be positive unless greedy");
  const int max_seq = view.config->max_seq;
  if (static_cast<int>(prompt_ids.size()) > max_seq) {
    throw LengthError("prompt of " + std::to_string(prompt_ids.size()) + " tokens exceeds max_seq " +
                      std::to_string(max_seq));
  }
  Trajectory tr;
  tr.prompt_ids.assign(prompt_ids.begin(), prompt_ids.end());
  Decoder dec(view);
  const std::vector<double>* logits = nullptr;
  for (int id : prompt_ids) logits = &dec.step(id);

  Rng rng(rng_seed);
  const std::size_t vocab = logits->size();
  std::vector<double> probs(vocab);
  std::vector<int> order(vocab);
  const int budget = std::min(cfg.max_new, max_seq - static_cast<int>(prompt_ids.size()));
  for (int n = 0; n < budget; ++n) {
    const auto& lg = *logits;
    const double mx = *std::max_element(lg.begin(), lg.end());
    double z = 0.0;
    for (double x : lg) z += std::exp(x - mx);
    const double lse = mx + std::log(z);

    int token = 0;
    if (cfg.greedy) {
      token = argmax(lg);
    } else {
      std::iota(order.begin(), order.end(), 0);
      std::size_t keep = vocab;
      if (cfg.top_k > 0 && static_cast<std::size_t>(cfg.top_k) < vocab) {
        keep = static_cast<std::size_t>(cfg.top_k);
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                          [&](int a, int b) { return lg[a] > lg[b] || (lg[a] == lg[b] && a < b); });
        std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep));
      }
      double tz = 0.0;
      for (std::size_t i = 0; i < keep; ++i) {
        probs[i] = std::exp((lg[order[i]] - mx) / cfg.temperature);
        tz += probs[i];
      }
      double u = rng.uniform() * tz;
      token = order[keep - 1];
      for (std::size_t i = 0; i < keep; ++i) {
        u -= probs[i];
        if (u < 0.0) {
          token = order[i];
          break;
        }
      }
    }
    tr.response_ids.push_back(token);
    tr.old_logprobs.push_back(lg[token] - lse);
    if (token == Tokenizer::kEos) {
      tr.hit_eos = true;
      break;
    }
    if (n + 1 < budget) logits = &dec.step(token);
  }
  tr.text = Tokenizer::decode(tr.response_ids);
  return tr;
}

Trajectory generate(const DenseParams& params, std::span<const int> prompt_ids, const SamplingConfig& cfg,
                    std::uint64_t rng_seed) {
  return generate(params.view(), prompt_ids, cfg, rng_seed);
}

TrajectorySampler model_sampler(StackView view, SamplingConfig cfg) {
  return [view = std::move(view), cfg](std::span<const int> prompt_ids, std::uint64_t seed) {
    return generate(view, prompt_ids, cfg, seed);
  };
}

}  // namespace home
