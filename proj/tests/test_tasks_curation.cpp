#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <set>
#include <stdexcept>

#include "home/curation.hpp"
#include "home/parallel.hpp"
#include "home/tasks.hpp"
#include "home/tokenizer.hpp"
#include "home/verifier.hpp"

using namespace home;

namespace {

int count_lines(const std::string& s) {
  if (s.empty()) return 0;
  return 1 + static_cast<int>(std::count(s.begin(), s.end(), '\n'));
}

/// Scripted policy: for each prompt, sample i is correct iff i < k, where k
/// is looked up by prompt text. Seeds are mapped back to sample indices the
/// same way estimate_passrate derives them.
struct ScriptedPolicy {
  std::map<std::string, std::pair<const PromptRecord*, int>> plan;
  std::uint64_t run_seed = 0;
  int n = 8;
  bool distinct = true;

  Trajectory operator()(std::span<const int> prompt_ids, std::uint64_t seed) const {
    std::vector<int> ids(prompt_ids.begin() + 1, prompt_ids.end());
    const auto& [rec, k] = plan.at(Tokenizer::decode(ids));
    int index = -1;
    for (int i = 0; i < n; ++i) {
      if (hash_seed(run_seed, rec->id, static_cast<std::uint64_t>(i)) == seed) index = i;
    }
    if (index < 0) throw std::logic_error("unexpected seed");
    Trajectory t;
    const std::string think = distinct ? "attempt " + std::to_string(index) : "attempt";
    t.text = index < k ? format_thinking(think, "\\boxed{" + rec->gt + "}") : format_thinking(think, "\\boxed{x}");
    return t;
  }
};

}  // namespace

TEST_SUITE("tasks") {
  TEST_CASE("generators are deterministic") {
    auto a = gen_reasoning_task(42, 3), b = gen_reasoning_task(42, 3);
    CHECK(a.prompt == b.prompt);
    CHECK(a.gt == b.gt);
    CHECK(a.reference_trajectory == b.reference_trajectory);
    CHECK(gen_simple_task(7).prompt == gen_simple_task(7).prompt);
    CHECK(gen_reasoning_task(42, 3).prompt != gen_reasoning_task(43, 3).prompt);
  }

  TEST_CASE("expression evaluator") {
    CHECK(evaluate_expression("((3+5)*2)") == 16);
    CHECK(evaluate_expression("((3+5)*2)-4") == 12);
    CHECK(evaluate_expression("2+3*4") == 14);
    std::vector<std::string> steps;
    evaluate_expression("((3+5)*2)-4", &steps);
    CHECK(steps == std::vector<std::string>{"3+5=8", "8*2=16", "16-4=12"});
    auto s = oracle_solve("Compute ((3+5)*2).");
    CHECK(s.gt == "16");
    CHECK(s.reference_trajectory == "<think>3+5=8\n8*2=16</think><answer>\\boxed{16}</answer>");
  }

  TEST_CASE("reasoning tasks carry one step line per operation") {
    for (int depth = 2; depth <= 6; ++depth) {
      for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto r = gen_reasoning_task(seed, depth);
        REQUIRE(r.reference_trajectory);
        auto p = parse_tags(*r.reference_trajectory);
        REQUIRE(p.format_ok);
        CHECK(count_lines(p.think_content) == depth);
        CHECK(r.difficulty == depth);
        CHECK(r.subfamily == "arith-d" + std::to_string(depth));
        const long long v = std::stoll(r.gt);
        CHECK((v >= 0 && v <= 99));
        std::istringstream lines(p.think_content);
        for (std::string line; std::getline(lines, line);) {
          const long long step = std::stoll(line.substr(line.find('=') + 1));
          CHECK((step >= 0 && step <= 99));
        }
      }
    }
    CHECK_THROWS_AS(gen_reasoning_task(1, 1), ContractError);
    CHECK_THROWS_AS(gen_reasoning_task(1, 7), ContractError);
  }

  TEST_CASE("simple task examples") {
    CHECK(oracle_solve("Reverse 'abc'.").gt == "cba");
    CHECK(oracle_solve("Uppercase 'dog'.").gt == "DOG");
    CHECK(oracle_solve("Character 2 of 'dog'.").gt == "o");
    CHECK(oracle_solve("Copy 'dog'.").gt == "dog");
    auto s = oracle_solve("Reverse 'abc'.");
    auto p = parse_tags(s.reference_trajectory);
    CHECK(p.format_ok);
    CHECK(p.think_content.empty());
    CHECK_THROWS_AS(oracle_solve("What is love?"), UnsupportedFamilyError);
    CHECK_THROWS_AS(oracle_solve("Character 9 of 'dog'."), UnsupportedFamilyError);
  }

  TEST_CASE("oracle soundness over generated records") {
    std::vector<PromptRecord> all = gen_reasoning_set(3, 300, 2, 6);
    for (auto& r : gen_simple_set(4, 300)) all.push_back(r);
    for (auto& r : gen_mixed_benchmark(5, 100)) all.push_back(r);
    for (const auto& r : all) {
      REQUIRE(r.reference_trajectory);
      CHECK(compute_reward(*r.reference_trajectory, r.gt).total == 1.0);
      auto o = oracle_solve(r.prompt);
      CHECK(o.gt == r.gt);
      CHECK(Tokenizer::supports(r.prompt));
      CHECK(Tokenizer::supports(*r.reference_trajectory));
      CHECK(mode_label(*r.reference_trajectory) == (expected_mode(r) == Mode::Thinking ? 1 : 0));
    }
  }

  TEST_CASE("mixed benchmark is an even split with subfamilies") {
    auto m = gen_mixed_benchmark(11, 100);
    REQUIRE(m.size() == 100);
    int reasoning = 0;
    std::set<std::string> subs;
    for (const auto& r : m) {
      reasoning += is_reasoning_subfamily(r.subfamily);
      CHECK(r.family == Family::MixedSubjects);
      subs.insert(r.subfamily);
    }
    CHECK(reasoning == 50);
    CHECK(subs.size() >= 5);
    CHECK_THROWS_AS(gen_mixed_benchmark(1, 7), ContractError);
  }

  TEST_CASE("corpus jsonl round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "home_moe_tasks_test";
    std::filesystem::create_directories(dir);
    auto recs = gen_mixed_benchmark(2, 20);
    write_records(recs, dir / "r.jsonl");
    auto back = read_records(dir / "r.jsonl");
    REQUIRE(back.size() == recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) {
      CHECK(back[i].id == recs[i].id);
      CHECK(back[i].prompt == recs[i].prompt);
      CHECK(back[i].gt == recs[i].gt);
      CHECK(back[i].subfamily == recs[i].subfamily);
      CHECK(back[i].difficulty == recs[i].difficulty);
    }
    std::vector<SftSample> samples;
    for (const auto& r : recs) samples.push_back(sample_from_reference(r));
    write_sft_samples(samples, dir / "s.jsonl");
    auto sb = read_sft_samples(dir / "s.jsonl");
    REQUIRE(sb.size() == samples.size());
    for (std::size_t i = 0; i < sb.size(); ++i) {
      CHECK(sb[i].target == samples[i].target);
      CHECK(sb[i].mode == samples[i].mode);
    }
    CHECK(file_hash(dir / "s.jsonl") == file_hash(dir / "s.jsonl"));
    CHECK(file_hash(dir / "s.jsonl").size() == 16);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("mode label bijection") {
    CHECK(mode_label(format_thinking("a", "b")) == 1);
    CHECK(mode_label(format_nonthinking("b")) == 0);
    CHECK(mode_label(format_thinking("  \n ", "b")) == 0);
    CHECK_THROWS_AS(mode_label(std::string_view("<answer>b</answer>")), ContractError);
  }
}

TEST_SUITE("curation") {
  TEST_CASE("disposition rules") {
    CHECK(disposition_for(8, 8) == Disposition::Discard);
    CHECK(disposition_for(0, 8) == Disposition::OracleInject);
    for (int k = 1; k < 8; ++k) CHECK(disposition_for(k, 8) == Disposition::SelfDistill);
    CHECK_THROWS_AS(disposition_for(9, 8), ContractError);
    CHECK_THROWS_AS(disposition_for(0, 0), ContractError);
    CHECK(CurationConfig{}.n_samples == 8);
  }

  TEST_CASE("passrate estimation") {
    auto recs = gen_reasoning_set(1, 1, 2, 2);
    ScriptedPolicy policy;
    policy.plan[recs[0].prompt] = {&recs[0], 8};
    auto est = estimate_passrate(policy, recs[0], 8, 0);
    CHECK(est.k == 8);
    CHECK(est.passrate() == 1.0);
    policy.plan[recs[0].prompt].second = 3;
    auto a = estimate_passrate(policy, recs[0], 8, 0), b = estimate_passrate(policy, recs[0], 8, 0);
    CHECK(a.k == 3);
    CHECK(a.k == b.k);
    for (std::size_t i = 0; i < 8; ++i) CHECK(a.trajectories[i].text == b.trajectories[i].text);
    CHECK_THROWS_AS(estimate_passrate(policy, recs[0], 0, 0), ContractError);
  }

  TEST_CASE("all three dispositions with exact conformance") {
    auto recs = gen_reasoning_set(9, 12, 2, 4, 500);
    ScriptedPolicy policy;
    policy.run_seed = 31;
    const std::vector<int> ks = {8, 0, 3, 1, 7, 8, 0, 2, 5, 0, 8, 4};
    for (std::size_t i = 0; i < recs.size(); ++i) policy.plan[recs[i].prompt] = {&recs[i], ks[i]};
    CurationConfig cfg;
    cfg.seed = 31;
    auto res = curate(policy, recs, cfg);
    REQUIRE(res.buckets.size() == recs.size());
    std::map<std::uint64_t, int> emitted;
    for (const auto& s : res.samples) ++emitted[s.id];
    std::set<Disposition> seen;
    for (std::size_t i = 0; i < recs.size(); ++i) {
      const auto& b = res.buckets[i];
      CHECK(b.prompt_id == recs[i].id);
      CHECK(b.k == ks[i]);
      seen.insert(b.disposition);
      if (ks[i] == 8) {
        CHECK(b.disposition == Disposition::Discard);
        CHECK(emitted[recs[i].id] == 0);
      } else if (ks[i] == 0) {
        CHECK(b.disposition == Disposition::OracleInject);
        CHECK(emitted[recs[i].id] == 1);
        REQUIRE(b.kept_trajectories.size() == 1);
        CHECK(b.kept_trajectories[0] == *recs[i].reference_trajectory);
      } else {
        CHECK(b.disposition == Disposition::SelfDistill);
        CHECK(emitted[recs[i].id] == std::min(ks[i], 2));
        for (const auto& t : b.kept_trajectories) CHECK(extract_answer(parse_tags(t).answer_content) == recs[i].gt);
      }
    }
    CHECK(seen.size() == 3);
    for (const auto& s : res.samples) {
      CHECK(parse_tags(s.target).format_ok);
      CHECK(mode_label(s) == (s.mode == Mode::Thinking ? 1 : 0));
      CHECK(compute_reward(s.target, s.gt).total == 1.0);
    }
  }

  TEST_CASE("self distillation deduplicates identical responses") {
    auto recs = gen_reasoning_set(2, 1, 3, 3);
    ScriptedPolicy policy;
    policy.distinct = false;
    policy.plan[recs[0].prompt] = {&recs[0], 5};
    auto res = curate(policy, recs, CurationConfig{});
    CHECK(res.buckets[0].disposition == Disposition::SelfDistill);
    CHECK(res.samples.size() == 1);
  }

  TEST_CASE("balanced non-thinking volume") {
    auto pool = gen_simple_set(3, 400);
    for (std::size_t t : {0u, 1u, 37u, 120u, 301u}) {
      for (auto [tw, nw] : {std::pair{1.0, 1.0}, {2.0, 1.0}, {1.0, 0.75}}) {
        auto ns = nonthinking_samples(t, tw, nw, pool);
        const double target = static_cast<double>(t) * nw / tw;
        CHECK(std::abs(static_cast<double>(ns.size()) - target) <= 1.0);
        for (const auto& s : ns) {
          CHECK(s.mode == Mode::NonThinking);
          CHECK(mode_label(s) == 0);
          CHECK(compute_reward(s.target, s.gt).total == 1.0);
        }
      }
    }
    CHECK_THROWS_AS(nonthinking_samples(500, 1.0, 1.0, pool), ContractError);
  }

  TEST_CASE("curation report lines") {
    auto recs = gen_reasoning_set(4, 3, 2, 2);
    ScriptedPolicy policy;
    for (std::size_t i = 0; i < 3; ++i) policy.plan[recs[i].prompt] = {&recs[i], static_cast<int>(i) * 4};
    auto res = curate(policy, recs, CurationConfig{});
    const auto path = std::filesystem::temp_directory_path() / "home_moe_curation_report.jsonl";
    write_curation_report(res.buckets, path);
    std::ifstream in(path);
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(in, line)) lines.push_back(line);
    REQUIRE(lines.size() == 3);
    CHECK(lines[0].find("\"disposition\":\"OracleInject\"") != std::string::npos);
    CHECK(lines[1].find("\"passrate\":0.5") != std::string::npos);
    CHECK(lines[2].find("\"n_emitted\":0") != std::string::npos);
    std::filesystem::remove(path);
  }
}
