#include <doctest.h>

#include <cmath>
#include <algorithm>
#include <set>

#include "home/model.hpp"
#include "home/parallel.hpp"
#include "home/rng.hpp"
#include "home/tokenizer.hpp"

using namespace home;

namespace {

ModelConfig small_config(int vocab = 103, std::uint64_t seed = 3) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = 16;
  c.n_blocks = 2;
  c.n_heads = 2;
  c.d_ffn = 24;
  c.max_seq = 32;
  c.seed = seed;
  return c;
}

std::vector<int> random_ids(Rng& rng, int n, int vocab) {
  std::vector<int> ids;
  for (int i = 0; i < n; ++i) ids.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab))));
  return ids;
}

double row_entropy(const Tensor& logits, std::size_t row, std::size_t vocab) {
  double mx = -1e300;
  for (std::size_t j = 0; j < vocab; ++j) mx = std::max(mx, logits.values[row * vocab + j]);
  double z = 0;
  for (std::size_t j = 0; j < vocab; ++j) z += std::exp(logits.values[row * vocab + j] - mx);
  double h = 0;
  for (std::size_t j = 0; j < vocab; ++j) {
    const double p = std::exp(logits.values[row * vocab + j] - mx) / z;
    if (p > 0) h -= p * std::log(p);
  }
  return h;
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("config validation") {
    ModelConfig c;
    CHECK_NOTHROW(c.validate());
    c.n_heads = 3;
    CHECK_THROWS(c.validate());
    c = ModelConfig{};
    c.max_seq = 1;
    CHECK_THROWS(c.validate());
    c = ModelConfig{};
    c.d_ffn = 0;
    CHECK_THROWS(c.validate());
  }

  TEST_CASE("default config matches the tokenizer") {
    CHECK(ModelConfig{}.vocab_size == Tokenizer::vocab_size());
  }

  TEST_CASE("tokenizer round trip over the task alphabet and tags") {
    std::string all = "\n";
    for (char ch = 32; ch < 127; ++ch) all += ch;
    CHECK(Tokenizer::decode(Tokenizer::encode(all)) == all);
    const std::string tagged = "<think>3+5=8\n8*2=16</think><answer>16</answer>";
    auto ids = Tokenizer::encode(tagged);
    CHECK(Tokenizer::decode(ids) == tagged);
    CHECK(ids.front() == Tokenizer::kThink);
    CHECK(std::count(ids.begin(), ids.end(), Tokenizer::kThinkEnd) == 1);
    CHECK(std::count(ids.begin(), ids.end(), Tokenizer::kAnswer) == 1);
    CHECK(std::count(ids.begin(), ids.end(), Tokenizer::kAnswerEnd) == 1);
    std::set<int> tag_ids;
    for (const char* t : {"<think>", "</think>", "<answer>", "</answer>"}) {
      auto one = Tokenizer::encode(t);
      REQUIRE(one.size() == 1);
      tag_ids.insert(one[0]);
    }
    CHECK(tag_ids.size() == 4);
    CHECK_THROWS_AS(Tokenizer::encode("caf\xc3\xa9"), ContractError);
    CHECK(Tokenizer::encode_response("x").back() == Tokenizer::kEos);
    CHECK(Tokenizer::encode_prompt("x").front() == Tokenizer::kBos);
  }

  TEST_CASE("forward is causal under random perturbations") {
    auto p = DenseParams::init(small_config());
    Rng rng(17);
    for (int trial = 0; trial < 10; ++trial) {
      const int n = 4 + static_cast<int>(rng.below(12));
      auto ids = random_ids(rng, n, 103);
      const int t = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
      auto base = forward_logits(p, ids);
      ids[static_cast<std::size_t>(t)] = (ids[static_cast<std::size_t>(t)] + 1 + static_cast<int>(rng.below(100))) % 103;
      auto pert = forward_logits(p, ids);
      const std::size_t cut = static_cast<std::size_t>(t) * 103;
      CHECK(std::equal(base.values.begin(), base.values.begin() + static_cast<std::ptrdiff_t>(cut), pert.values.begin()));
      bool changed = false;
      for (std::size_t i = cut; i < base.size(); ++i) changed |= base.values[i] != pert.values[i];
      CHECK(changed);
    }
  }

  TEST_CASE("fixed seed and input give fixed logits") {
    std::vector<int> ids = {1, 40, 41, 42, 3};
    auto a = forward_logits(DenseParams::init(small_config()), ids);
    auto b = forward_logits(DenseParams::init(small_config()), ids);
    CHECK(a.values == b.values);
    auto c = forward_logits(DenseParams::init(small_config(103, 4)), ids);
    CHECK(a.values != c.values);
  }

  TEST_CASE("fresh default model is near uniform") {
    auto p = DenseParams::init(ModelConfig{});
    auto ids = Tokenizer::encode_prompt("Compute ((3+5)*2)-4.");
    auto logits = forward_logits(p, ids);
    const double bound = 0.9 * std::log(103.0);
    for (std::size_t r = 0; r < ids.size(); ++r) CHECK(row_entropy(logits, r, 103) >= bound);
  }

  TEST_CASE("overlong input is a length error") {
    auto p = DenseParams::init(small_config());
    std::vector<int> ids(33, 7);
    CHECK_THROWS_AS(forward_logits(p, ids), LengthError);
    std::vector<int> prompt(20, 7), resp(14, 8);
    CHECK_THROWS_AS(score_logprobs(p, prompt, resp), LengthError);
  }

  TEST_CASE("kv-cache decoder matches teacher-forced forward") {
    auto p = DenseParams::init(small_config());
    Rng rng(2);
    auto ids = random_ids(rng, 20, 103);
    auto full = forward_logits(p, ids);
    Decoder dec(p.view());
    for (std::size_t t = 0; t < ids.size(); ++t) {
      const auto& row = dec.step(ids[t]);
      for (std::size_t j = 0; j < 103; ++j) CHECK(std::abs(row[j] - full.values[t * 103 + j]) < 1e-10);
    }
  }

  TEST_CASE("generate rescoring reproduces old logprobs") {
    auto p = DenseParams::init(small_config());
    auto prompt = Tokenizer::encode_prompt("abc");
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      SamplingConfig sc;
      sc.max_new = 20;
      sc.temperature = 0.7 + 0.1 * static_cast<double>(seed);
      auto t = generate(p, prompt, sc, seed);
      REQUIRE(t.old_logprobs.size() == t.response_ids.size());
      auto s = score_logprobs(p, prompt, t.response_ids);
      REQUIRE(s.size() == t.old_logprobs.size());
      for (std::size_t i = 0; i < s.size(); ++i) {
        CHECK(std::abs(s[i] - t.old_logprobs[i]) < 1e-10);
        CHECK(s[i] <= 0.0);
        CHECK(std::exp(s[i]) <= 1.0);
      }
      CHECK(t.text == Tokenizer::decode(t.response_ids));
      CHECK((t.hit_eos || static_cast<int>(t.response_ids.size()) == sc.max_new ||
             prompt.size() + t.response_ids.size() == 32));
    }
  }

  TEST_CASE("sampling determinism") {
    auto p = DenseParams::init(small_config());
    auto prompt = Tokenizer::encode_prompt("abc");
    SamplingConfig sc;
    sc.max_new = 16;
    CHECK(generate(p, prompt, sc, 5).response_ids == generate(p, prompt, sc, 5).response_ids);
    std::set<std::vector<int>> distinct;
    for (std::uint64_t s = 0; s < 8; ++s) distinct.insert(generate(p, prompt, sc, s).response_ids);
    CHECK(distinct.size() > 1);
  }

  TEST_CASE("greedy decoding follows the argmax") {
    auto p = DenseParams::init(small_config());
    auto prompt = Tokenizer::encode_prompt("xyz");
    SamplingConfig sc;
    sc.greedy = true;
    sc.max_new = 10;
    auto t = generate(p, prompt, sc, 1);
    CHECK(t.response_ids == generate(p, prompt, sc, 99).response_ids);
    std::vector<int> ids = prompt;
    for (int tok : t.response_ids) {
      auto logits = forward_logits(p, ids);
      std::span<const double> last(logits.values.data() + (ids.size() - 1) * 103, 103);
      CHECK(argmax(last) == tok);
      ids.push_back(tok);
    }
  }

  TEST_CASE("single-token vocabulary has logprob zero") {
    auto p = DenseParams::init(small_config(1));
    std::vector<int> prompt = {0, 0}, resp = {0, 0, 0};
    for (double lp : score_logprobs(p, prompt, resp)) CHECK(lp == 0.0);
  }

  TEST_CASE("chain rule matches enumeration on a two-token vocabulary") {
    auto p = DenseParams::init(small_config(2));
    std::vector<int> prompt = {1, 0};
    double total = 0.0;
    for (int code = 0; code < 8; ++code) {
      std::vector<int> resp = {code & 1, (code >> 1) & 1, (code >> 2) & 1};
      double chain = 0.0;
      for (double lp : score_logprobs(p, prompt, resp)) chain += lp;
      // Brute force: one full forward, softmax at each predicting position.
      std::vector<int> ids = prompt;
      ids.insert(ids.end(), resp.begin(), resp.end());
      auto logits = forward_logits(p, ids);
      double brute = 0.0;
      for (std::size_t t = 0; t < 3; ++t) {
        const std::size_t row = prompt.size() - 1 + t;
        const double a = logits.values[row * 2], b = logits.values[row * 2 + 1];
        const double chosen = resp[t] == 0 ? a : b;
        brute += chosen - std::log(std::exp(a) + std::exp(b));
      }
      CHECK(std::abs(chain - brute) < 1e-12);
      total += std::exp(chain);
    }
    CHECK(std::abs(total - 1.0) < 1e-12);
  }

  TEST_CASE("parameter count and finiteness") {
    auto c = small_config();
    auto p = DenseParams::init(c);
    const std::size_t d = 16, f = 24, v = 103, s = 32;
    const std::size_t per_block = 2 * d + 4 * d * d + (d * f + f + f * d + d);
    CHECK(p.param_count() == v * d + s * d + 2 * per_block + d);
    CHECK(p.all_finite());
  }
}
