#include "home/curation.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <set>

#include "home/parallel.hpp"
#include "home/tokenizer.hpp"

namespace home {

std::string disposition_name(Disposition d) {
  switch (d) {
    case Disposition::Discard: return "Discard";
    case Disposition::SelfDistill: return "SelfDistill";
    case Disposition::OracleInject: return "OracleInject";
  }
  return "?";
}

Disposition disposition_for(int k, int n) {
  if (n < 1 || k < 0 || k > n) throw ContractError("invalid passrate " + std::to_string(k) + "/" + std::to_string(n));
  if (k == n) return Disposition::Discard;
  if (k == 0) return Disposition::OracleInject;
  return Disposition::SelfDistill;
}

PassrateEstimate estimate_passrate(const TrajectorySampler& sampler, const PromptRecord& record, int n_samples,
                                   std::uint64_t run_seed) {
  if (n_samples < 1) throw ContractError("passrate estimation needs at least one sample");
  const auto prompt_ids = Tokenizer::encode_prompt(record.prompt);
  PassrateEstimate est;
  est.n = n_samples;
  for (int i = 0; i < n_samples; ++i) {
    Trajectory t = sampler(prompt_ids, hash_seed(run_seed, record.id, static_cast<std::uint64_t>(i)));
    RewardResult r = compute_reward(t.text, record.gt);
    if (r.total == 1.0) ++est.k;
    est.trajectories.push_back(std::move(t));
    est.rewards.push_back(r);
  }
  return est;
}

CurationResult curate(const TrajectorySampler& sampler, const std::vector<PromptRecord>& prompts,
                      const CurationConfig& cfg) {
  std::vector<PassrateEstimate> estimates(prompts.size());
  parallel_for(prompts.size(), [&](std::size_t i) {
    estimates[i] = estimate_passrate(sampler, prompts[i], cfg.n_samples, cfg.seed);
  });

  CurationResult out;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const PromptRecord& rec = prompts[i];
    const PassrateEstimate& est = estimates[i];
    PassrateBucket b;
    b.prompt_id = rec.id;
    b.k = est.k;
    b.n = est.n;
    b.disposition = disposition_for(est.k, est.n);
    if (b.disposition == Disposition::SelfDistill) {
      std::set<std::string> seen;
      for (std::size_t t = 0; t < est.trajectories.size(); ++t) {
        if (static_cast<int>(b.kept_trajectories.size()) >= cfg.self_distill_cap) break;
        if (est.rewards[t].total != 1.0) continue;
        const std::string& text = est.trajectories[t].text;
        // Thinking data only: a correct answer with an empty think block is not a reasoning trace.
        if (mode_label(text) != 1) continue;
        if (!seen.insert(canonicalize(text)).second) continue;
        b.kept_trajectories.push_back(text);
      }
    } else if (b.disposition == Disposition::OracleInject) {
      b.kept_trajectories.push_back(rec.reference_trajectory ? *rec.reference_trajectory
                                                             : oracle_solve(rec.prompt).reference_trajectory);
    }
    for (const auto& text : b.kept_trajectories) {
      SftSample s;
      s.id = rec.id;
      s.prompt = rec.prompt;
      s.target = text;
      s.mode = mode_label(text) == 1 ? Mode::Thinking : Mode::NonThinking;
      s.family = rec.family;
      s.subfamily = rec.subfamily;
      s.gt = rec.gt;
      out.samples.push_back(std::move(s));
    }
    out.buckets.push_back(std::move(b));
  }
  return out;
}

std::size_t balanced_count(std::size_t thinking_count, double thinking_weight, double nonthinking_weight) {
  if (!(thinking_weight > 0.0) || !(nonthinking_weight > 0.0)) throw ContractError("mix weights must be positive");
  return static_cast<std::size_t>(
      std::llround(static_cast<double>(thinking_count) * nonthinking_weight / thinking_weight));
}

std::vector<SftSample> nonthinking_samples(std::size_t thinking_count, double thinking_weight,
                                           double nonthinking_weight, const std::vector<PromptRecord>& simple_pool) {
  const std::size_t count = balanced_count(thinking_count, thinking_weight, nonthinking_weight);
  if (count > simple_pool.size()) {
    throw ContractError("need " + std::to_string(count) + " non-thinking prompts, pool has " +
                        std::to_string(simple_pool.size()));
  }
  std::vector<SftSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(sample_from_reference(simple_pool[i]));
  return out;
}

void write_curation_report(const std::vector<PassrateBucket>& buckets, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& b : buckets) {
    nlohmann::json j;
    j["id"] = b.prompt_id;
    j["passrate"] = b.passrate();
    j["disposition"] = disposition_name(b.disposition);
    j["n_emitted"] = b.kept_trajectories.size();
    out << j.dump() << '\n';
  }
}

}  // namespace home
