#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "gradcheck.hpp"
#include "home/checkpoint.hpp"
#include "home/hybrid.hpp"
#include "home/optim.hpp"
#include "home/rng.hpp"
#include "home/tokenizer.hpp"

using namespace home;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.d_model = 16;
  c.n_blocks = 2;
  c.n_heads = 2;
  c.d_ffn = 24;
  c.max_seq = 48;
  c.seed = 9;
  return c;
}

std::vector<int> random_prompt(Rng& rng) {
  std::string s = "Compute ";
  const int n = 3 + static_cast<int>(rng.below(12));
  for (int i = 0; i < n; ++i) s += static_cast<char>('!' + rng.below(90));
  return Tokenizer::encode_prompt(s);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.values[i] - b.values[i]));
  return m;
}

/// Loss through one mode's stack; used for gradient-routing checks.
ag::Var stack_loss(ag::Tape& tape, const HybridParams& h, Mode m, std::span<const int> ids) {
  return ag::sum(ag::log_softmax(forward_tape(tape, h.view(m), ids)));
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("home_moe_test_" + name);
}

}  // namespace

TEST_SUITE("hybrid") {
  TEST_CASE("expansion identity for both modes") {
    auto dense = DenseParams::init(small_config());
    auto hybrid = expand(dense, 77);
    Rng rng(1);
    for (int i = 0; i < 10; ++i) {
      auto ids = random_prompt(rng);
      auto ref = forward_logits(dense, ids);
      for (Mode m : {Mode::Thinking, Mode::NonThinking}) {
        RouteDecision d;
        d.mode = m;
        CHECK(max_abs_diff(forward_hybrid(hybrid, ids, d), ref) <= 1e-12);
      }
    }
    for (std::size_t b = 0; b < hybrid.experts.size(); ++b) {
      CHECK(hybrid.experts[b].think.w_in.values == dense.ffn[b].w_in.values);
      CHECK(hybrid.experts[b].nonthink.w_out.values == dense.ffn[b].w_out.values);
    }
  }

  TEST_CASE("parameter count closed form") {
    ModelConfig c;  // default desk-scale config
    auto dense = DenseParams::init(c);
    auto hybrid = expand(dense, 1);
    const std::size_t d = 64, f = 128, h = 32;
    const std::size_t ffn = d * f + f + f * d + d;
    const std::size_t router = d * h + h + h * 2 + 2;
    CHECK(hybrid.param_count() == dense.param_count() + 4 * ffn + router);
    CHECK(hybrid.router.param_count() == router);
  }

  TEST_CASE("router probabilities and tie rule") {
    auto hybrid = expand(DenseParams::init(small_config()), 5);
    Rng rng(4);
    for (int i = 0; i < 10; ++i) {
      auto ids = random_prompt(rng);
      auto d = route(hybrid, ids);
      CHECK(std::abs(d.probs[0] + d.probs[1] - 1.0) < 1e-12);
      CHECK(d.probability >= 0.5);
      ag::Tape tape(false);
      auto lv = router_logits(tape, hybrid, ids).values();
      const double p1 = 1.0 / (1.0 + std::exp(lv[0] - lv[1]));
      CHECK(std::abs(d.probs[1] - p1) < 1e-12);
      auto again = route(hybrid, ids);
      CHECK(again.mode == d.mode);
      CHECK(again.probs == d.probs);
    }
    for (Tensor* t : {&hybrid.router.w1, &hybrid.router.b1, &hybrid.router.w2, &hybrid.router.b2}) {
      std::fill(t->values.begin(), t->values.end(), 0.0);
    }
    auto ids = random_prompt(rng);
    ag::Tape tape(false);
    auto lv = router_logits(tape, hybrid, ids).values();
    CHECK(lv[0] == 0.0);
    CHECK(lv[1] == 0.0);
    auto d = route(hybrid, ids);
    CHECK(d.probs[0] == 0.5);
    CHECK(d.probs[1] == 0.5);
    CHECK(d.mode == Mode::NonThinking);
    CHECK(decision_from_logits(1.0, 1.0).mode == Mode::NonThinking);
    CHECK_THROWS_AS(route(hybrid, std::vector<int>{}), ContractError);
  }

  TEST_CASE("router config validation") {
    RouterConfig rc;
    rc.hidden = 0;
    CHECK_THROWS_AS(rc.validate(), ContractError);
    rc = RouterConfig{};
    rc.pooling = "last_token";
    CHECK_THROWS_AS(rc.validate(), ContractError);
  }

  TEST_CASE("router cross entropy matches finite differences") {
    auto hybrid = expand(DenseParams::init(small_config()), 5);
    Rng rng(8);
    // Spread the second layer so the check is not dominated by tiny values.
    for (double& x : hybrid.router.w2.values) x = rng.normal();
    auto ids = random_prompt(rng);
    std::vector<int> target = {1};
    std::vector<std::uint8_t> mask = {1};
    auto f = [&](ag::Tape& tape) {
      return ag::cross_entropy(ag::reshape(router_logits(tape, hybrid, ids), {1, 2}), target, mask);
    };
    auto r = gradcheck::check_params(f, {&hybrid.router.w1, &hybrid.router.b1, &hybrid.router.w2, &hybrid.router.b2,
                                         &hybrid.trunk.tok_emb},
                                     200, 3);
    CHECK(r.rel_error < 1e-4);
  }

  TEST_CASE("gradients touch only the selected expert") {
    auto hybrid = expand(DenseParams::init(small_config()), 5);
    Rng rng(6);
    auto ids = random_prompt(rng);
    for (Mode m : {Mode::Thinking, Mode::NonThinking}) {
      ag::Tape tape;
      tape.backward(stack_loss(tape, hybrid, m, ids));
      std::set<const Tensor*> touched;
      for (const auto& [src, g] : tape.parameter_grads()) touched.insert(src);
      for (const auto& e : hybrid.experts) {
        const FfnWeights& on = e.get(m);
        const FfnWeights& off = e.get(m == Mode::Thinking ? Mode::NonThinking : Mode::Thinking);
        for (const Tensor* t : {&on.w_in, &on.b_in, &on.w_out, &on.b_out}) CHECK(touched.count(t) == 1);
        for (const Tensor* t : {&off.w_in, &off.b_in, &off.w_out, &off.b_out}) CHECK(touched.count(t) == 0);
      }
      // The inactive expert's finite-difference gradient is zero as well.
      const FfnWeights& off = hybrid.experts[0].get(m == Mode::Thinking ? Mode::NonThinking : Mode::Thinking);
      Tensor* probe = const_cast<Tensor*>(&off.w_in);
      auto r = gradcheck::check_params([&](ag::Tape& t) { return stack_loss(t, hybrid, m, ids); }, {probe}, 20, 1);
      CHECK(r.rel_error < 1e-4);
    }
  }

  TEST_CASE("a step on one expert leaves the other bitwise unchanged") {
    auto hybrid = expand(DenseParams::init(small_config()), 5);
    const auto nonthink_before = hybrid.experts;
    const auto emb_before = hybrid.trunk.tok_emb.values;
    Rng rng(2);
    auto ids = random_prompt(rng);
    ag::Tape tape;
    tape.backward(stack_loss(tape, hybrid, Mode::Thinking, ids));
    auto params = hybrid.parameters();
    accumulate_grads(tape, params);
    AdamWState st;
    AdamWConfig cfg;
    cfg.weight_decay = 0.1;
    adamw_step(params, st, cfg);
    for (std::size_t b = 0; b < hybrid.experts.size(); ++b) {
      CHECK(hybrid.experts[b].nonthink.w_in.values == nonthink_before[b].nonthink.w_in.values);
      CHECK(hybrid.experts[b].nonthink.b_out.values == nonthink_before[b].nonthink.b_out.values);
      CHECK(hybrid.experts[b].think.w_in.values != nonthink_before[b].think.w_in.values);
    }
    CHECK(hybrid.trunk.tok_emb.values != emb_before);
    // Experts have now diverged, so the two modes disagree.
    RouteDecision t, n;
    t.mode = Mode::Thinking;
    n.mode = Mode::NonThinking;
    CHECK(max_abs_diff(forward_hybrid(hybrid, ids, t), forward_hybrid(hybrid, ids, n)) > 1e-6);
  }

  TEST_CASE("one routing decision per episode") {
    auto hybrid = expand(DenseParams::init(small_config()), 5);
    // Diverge the experts so the mode matters for decoding.
    for (double& x : hybrid.experts[0].think.w_out.values) x *= 3.0;
    Rng rng(3);
    for (int i = 0; i < 5; ++i) {
      auto ids = random_prompt(rng);
      SamplingConfig sc;
      sc.max_new = 12;
      auto [d, traj] = generate_hybrid(hybrid, ids, sc, 42);
      CHECK(d.mode == route(hybrid, ids).mode);
      auto fixed = generate(hybrid.view(d.mode), ids, sc, 42);
      CHECK(traj.response_ids == fixed.response_ids);
      CHECK(traj.old_logprobs == fixed.old_logprobs);
    }
  }

  TEST_CASE("expand rejects non-finite dense weights") {
    auto dense = DenseParams::init(small_config());
    dense.ffn[0].b_in.values[0] = std::nan("");
    CHECK_THROWS_AS(expand(dense, 1), NumericError);
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("dense save load save is byte identical") {
    auto dense = DenseParams::init(small_config());
    const auto path = temp_file("dense.ckpt");
    save_checkpoint(dense, path);
    auto first = read_file_bytes(path);
    auto loaded = load_dense(path);
    save_checkpoint(loaded, path);
    CHECK(read_file_bytes(path) == first);
    CHECK(loaded.config == dense.config);
    CHECK(checkpoint_kind(path) == CheckpointKind::Dense);
    std::filesystem::remove(path);
  }

  TEST_CASE("hybrid save load save is byte identical") {
    auto hybrid = expand(DenseParams::init(small_config()), 3);
    for (double& x : hybrid.experts[1].think.b_in.values) x += 0.25;
    auto bytes = serialize_checkpoint(hybrid);
    auto loaded = deserialize_hybrid(bytes);
    CHECK(serialize_checkpoint(loaded) == bytes);
    CHECK(checkpoint_kind(bytes) == CheckpointKind::Hybrid);
    CHECK(loaded.router_config.hidden == 32);
    CHECK(loaded.experts[1].think.b_in.values != loaded.experts[1].nonthink.b_in.values);
  }

  TEST_CASE("kind flag is honored") {
    auto dense = DenseParams::init(small_config());
    auto hybrid = expand(dense, 3);
    CHECK_THROWS_AS(deserialize_hybrid(serialize_checkpoint(dense)), CheckpointError);
    CHECK_THROWS_AS(deserialize_dense(serialize_checkpoint(hybrid)), CheckpointError);
  }

  TEST_CASE("corrupt files are rejected") {
    auto bytes = serialize_checkpoint(DenseParams::init(small_config()));
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(deserialize_dense(bad), CheckpointError);
    bad = bytes;
    bad.resize(bytes.size() - 5);
    CHECK_THROWS_AS(deserialize_dense(bad), CheckpointError);
    CHECK_THROWS_AS(load_dense(temp_file("does_not_exist.ckpt")), CheckpointError);
  }

  TEST_CASE("loaded weights round through float32") {
    auto dense = DenseParams::init(small_config());
    auto loaded = deserialize_dense(serialize_checkpoint(dense));
    for (std::size_t i = 0; i < dense.trunk.tok_emb.size(); ++i) {
      CHECK(loaded.trunk.tok_emb.values[i] == static_cast<double>(static_cast<float>(dense.trunk.tok_emb.values[i])));
    }
  }
}
