#include <doctest.h>

#include <cmath>
#include <limits>

#include "gradcheck.hpp"
#include "home/autograd.hpp"
#include "home/optim.hpp"
#include "primitive_suite.hpp"

using namespace home;

namespace {

Tensor mat(std::size_t r, std::size_t c, std::vector<double> v) { return Tensor({r, c}, std::move(v)); }

std::vector<double> vals(ag::Var v) { return {v.values().begin(), v.values().end()}; }

}  // namespace

TEST_SUITE("autograd") {
  TEST_CASE("tensor shape invariants") {
    Tensor t({2, 3}, 1.5);
    CHECK(t.size() == 6);
    CHECK(!t.grad);
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
    t.accumulate_grad(std::vector<double>(6, 1.0));
    t.accumulate_grad(std::vector<double>(6, 2.0));
    CHECK(t.grad->at(5) == 3.0);
    CHECK_THROWS_AS(t.accumulate_grad(std::vector<double>(5, 1.0)), ShapeError);
  }

  TEST_CASE("matmul examples") {
    ag::Tape tape(false);
    Tensor b = mat(3, 3, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor eye = mat(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    CHECK(vals(ag::matmul(tape.constant(eye), tape.constant(b))) == b.values);
    CHECK(vals(ag::matmul(tape.constant(mat(2, 2, {1, 2, 3, 4})), tape.constant(mat(2, 1, {0, 1})))) ==
          std::vector<double>{2, 4});
    CHECK(vals(ag::matmul(tape.constant(Tensor({3, 3}, 0.0)), tape.constant(b))) == std::vector<double>(9, 0.0));
    CHECK_THROWS_AS(ag::matmul(tape.constant(Tensor({2, 3})), tape.constant(Tensor({2, 3}))), ShapeError);
  }

  TEST_CASE("softmax examples") {
    ag::Tape tape(false);
    auto s = vals(ag::softmax(tape.constant(Tensor({2}, std::vector<double>{0, 0})), 0));
    CHECK(s[0] == doctest::Approx(0.5).epsilon(1e-15));
    s = vals(ag::softmax(tape.constant(Tensor({2}, std::vector<double>{0, std::log(3.0)})), 0));
    CHECK(std::abs(s[0] - 0.25) < 1e-12);
    CHECK(std::abs(s[1] - 0.75) < 1e-12);
    s = vals(ag::softmax(tape.constant(Tensor({2}, std::vector<double>{1000, 0})), 0));
    CHECK(std::isfinite(s[0]));
    CHECK(s[0] == doctest::Approx(1.0));
    CHECK(s[1] < 1e-300);
  }

  TEST_CASE("softmax rows sum to one") {
    Rng rng(3);
    ag::Tape tape(false);
    for (int trial = 0; trial < 20; ++trial) {
      Tensor x = gradcheck::random_tensor({5, 7}, rng, -20, 20);
      auto s = vals(ag::softmax(tape.constant(x), 1));
      for (int i = 0; i < 5; ++i) {
        double sum = 0;
        for (int j = 0; j < 7; ++j) {
          CHECK(s[i * 7 + j] >= 0.0);
          sum += s[i * 7 + j];
        }
        CHECK(std::abs(sum - 1.0) < 1e-12);
      }
    }
  }

  TEST_CASE("cross entropy examples") {
    ag::Tape tape(false);
    std::vector<int> t = {2};
    std::vector<std::uint8_t> m = {1};
    CHECK(ag::cross_entropy(tape.constant(Tensor({1, 4}, 0.0)), t, m).item() == doctest::Approx(1.3862944).epsilon(1e-7));
    CHECK(ag::cross_entropy(tape.constant(mat(1, 4, {0, 0, 60, 0})), t, m).item() < 1e-20);
    // Masking picks exactly one position's term.
    Tensor logits = mat(3, 3, {0.1, 0.5, -0.2, 1.0, 2.0, 0.3, -1.0, 0.0, 0.4});
    std::vector<int> targets = {0, 1, 2};
    std::vector<std::uint8_t> one = {0, 1, 0};
    std::vector<std::uint8_t> only1 = {1};
    std::vector<int> tgt1 = {1};
    const double whole = ag::cross_entropy(tape.constant(logits), targets, one).item();
    const double alone = ag::cross_entropy(tape.constant(mat(1, 3, {1.0, 2.0, 0.3})), tgt1, only1).item();
    CHECK(std::abs(whole - alone) < 1e-15);
    std::vector<std::uint8_t> none = {0, 0, 0};
    CHECK_THROWS_AS(ag::cross_entropy(tape.constant(logits), targets, none), ContractError);
  }

  TEST_CASE("backward closed forms") {
    ag::Tape tape;
    Tensor p({4}, std::vector<double>{1, -2, 3, 0.5});
    ag::Var v = tape.input(p);
    tape.backward(ag::sum(v));
    CHECK(std::vector<double>(tape.grad(v).begin(), tape.grad(v).end()) == std::vector<double>(4, 1.0));

    ag::Tape tape2;
    ag::Var w = tape2.input(p);
    tape2.backward(ag::sum(ag::mul(w, w)));
    for (std::size_t i = 0; i < 4; ++i) CHECK(tape2.grad(w)[i] == 2.0 * p.values[i]);
  }

  TEST_CASE("backward contract errors") {
    ag::Tape tape;
    ag::Var v = tape.input(Tensor({3}, 1.0));
    CHECK_THROWS_AS(tape.backward(v), ContractError);  // not a scalar
    ag::Var loss = ag::sum(v);
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), ContractError);  // second backward without re-forward
    ag::Tape other;
    ag::Var foreign = ag::sum(other.input(Tensor({2}, 1.0)));
    ag::Tape third;
    CHECK_THROWS_AS(third.backward(foreign), ContractError);
  }

  TEST_CASE("non-finite forward values are rejected") {
    ag::Tape tape;
    ag::Var v = tape.input(Tensor({2}, std::vector<double>{0.0, 1.0}));
    CHECK_THROWS_AS(ag::log(v), NumericError);
  }

  TEST_CASE("shared parameter leaves accumulate one gradient") {
    Tensor p({2}, std::vector<double>{1.0, 2.0});
    ag::Tape tape;
    ag::Var a = tape.parameter(p), b = tape.parameter(p);
    CHECK(a.id() == b.id());
    tape.backward(ag::sum(ag::mul(a, b)));
    auto grads = tape.parameter_grads();
    REQUIRE(grads.size() == 1);
    CHECK(grads[0].second[0] == 2.0);
    CHECK(grads[0].second[1] == 4.0);
  }

  TEST_CASE("forward is bitwise deterministic") {
    Rng r1(11), r2(11);
    Tensor a = gradcheck::random_tensor({6, 5}, r1), b = gradcheck::random_tensor({6, 5}, r2);
    ag::Tape t1(false), t2(false);
    auto f = [](ag::Tape& t, const Tensor& x) {
      ag::Var v = t.constant(x);
      return vals(ag::causal_attention(v, v, v, 1));
    };
    CHECK(f(t1, a) == f(t2, b));
  }

  TEST_CASE("every primitive matches central finite differences") {
    for (const auto& o : gradcheck::run_primitive_suite(20)) {
      INFO(o.name);
      CHECK(o.instances == 20);
      CHECK(o.worst < 1e-4);
    }
  }

  TEST_CASE("composite loss matches finite differences") {
    Rng rng(5);
    auto r = gradcheck::check_inputs(
        [](ag::Tape&, const auto& v) {
          ag::Var h = ag::gelu(ag::matmul(ag::rms_norm(v[0], v[2]), v[1]));
          return ag::log_softmax(h);
        },
        {gradcheck::random_tensor({4, 6}, rng), gradcheck::random_tensor({6, 3}, rng),
         gradcheck::random_tensor({6}, rng, 0.5, 1.5)});
    CHECK(r.rel_error < 1e-4);
  }

  TEST_CASE("adamw hand computed step") {
    Tensor p({1}, std::vector<double>{1.0});
    p.grad = std::vector<double>{0.5};
    AdamWState st;
    AdamWConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.01;
    adamw_step({&p}, st, cfg);
    // m = 0.05, v = 0.00025; mhat = 0.5, vhat = 0.25; step = 0.5 / (0.5 + 1e-8).
    const double expected = 1.0 - 0.1 * (0.5 / (0.5 + 1e-8) + 0.01 * 1.0);
    CHECK(std::abs(p.values[0] - expected) < 1e-15);
    CHECK(st.slots[0].step == 1);
  }

  TEST_CASE("adamw zero gradient leaves parameters") {
    Tensor p({3}, std::vector<double>{1.0, -2.0, 0.25});
    const auto before = p.values;
    p.grad = std::vector<double>(3, 0.0);
    AdamWState st;
    adamw_step({&p}, st, AdamWConfig{});
    CHECK(p.values == before);
    CHECK(st.slots[0].step == 1);
  }

  TEST_CASE("adamw absent gradient skips the tensor entirely") {
    Tensor p({2}, std::vector<double>{1.0, 2.0}), q({2}, std::vector<double>{3.0, 4.0});
    q.grad = std::vector<double>{1.0, 1.0};
    AdamWState st;
    AdamWConfig cfg;
    cfg.weight_decay = 0.1;
    adamw_step({&p, &q}, st, cfg);
    CHECK(p.values == std::vector<double>{1.0, 2.0});
    CHECK(st.slots[0].step == 0);
    CHECK(st.slots[1].step == 1);
  }

  TEST_CASE("adamw rejects non-finite gradients before writing") {
    Tensor p({2}, std::vector<double>{1.0, 2.0}), q({1}, std::vector<double>{3.0});
    p.grad = std::vector<double>{1.0, 1.0};
    q.grad = std::vector<double>{std::numeric_limits<double>::quiet_NaN()};
    AdamWState st;
    CHECK_THROWS_AS(adamw_step({&p, &q}, st, AdamWConfig{}), NumericError);
    CHECK(p.values == std::vector<double>{1.0, 2.0});
  }

  TEST_CASE("adamw is deterministic") {
    auto run = [] {
      Tensor p({3}, std::vector<double>{0.3, -0.1, 2.0});
      AdamWState st;
      for (int i = 0; i < 3; ++i) {
        p.grad = std::vector<double>{0.1 * i, -0.2, 0.05};
        adamw_step({&p}, st, AdamWConfig{});
      }
      return p.values;
    };
    CHECK(run() == run());
  }
}
