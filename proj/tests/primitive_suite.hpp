// Finite-difference checks of every differentiable tape primitive over
// seeded random instances (shapes up to 8x8).
#pragma once

#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "home/parallel.hpp"

namespace gradcheck {

struct PrimitiveOutcome {
  std::string name;
  double worst = 0.0;
  int instances = 0;
};

inline std::vector<PrimitiveOutcome> run_primitive_suite(int instances = 20) {
  using home::Rng;
  using home::Shape;
  struct Case {
    std::string name;
    std::function<Result(Rng&)> run;
  };
  auto dim = [](Rng& r) { return static_cast<std::size_t>(r.range(1, 8)); };
  // Values kept away from kinks (clamp bounds, minimum ties) by construction.
  std::vector<Case> cases = {
      {"add", [&](Rng& r) {
         const std::size_t m = dim(r), n = dim(r);
         return check_inputs([](ag::Tape&, const auto& v) { return ag::add(v[0], v[1]); },
                             {random_tensor({m, n}, r), random_tensor({m, n}, r)});
       }},
      {"add_broadcast", [&](Rng& r) {
         const std::size_t m = dim(r), n = dim(r);
         return check_inputs([](ag::Tape&, const auto& v) { return ag::add(v[0], v[1]); },
                             {random_tensor({m, n}, r), random_tensor({n}, r)});
       }},
      {"sub", [&](Rng& r) {
         const std::size_t m = dim(r), n = dim(r);
         return check_inputs([](ag::Tape&, const auto& v) { return ag::sub(v[0], v[1]); },
                             {random_tensor({m, n}, r), random_tensor({n}, r)});
       }},
      {"mul_broadcast", [&](Rng& r) {
         const std::size_t m = dim(r), n = dim(r);
         return check_inputs([](ag::Tape&, const auto& v) { return ag::mul(v[0], v[1]); },
                             {random_tensor({m, n}, r), random_tensor({n}, r)});
       }},
      {"scale_add_scalar", [&](Rng& r) {
         const double c = r.uniform() * 4 - 2;
         return check_inputs([c](ag::Tape&, const auto& v) { return ag::add_scalar(ag::scale(v[0], c), 0.5); },
                             {random_tensor({dim(r), dim(r)}, r)});
       }},
      {"exp", [&](Rng& r) {
         return check_inputs([](ag::Tape&, const auto& v) { return ag::exp(v[0]); }, {random_tensor({dim(r), dim(r)}, r)});
       }},
      {"log", [&](Rng& r) {
         return check_inputs([](ag::Tape&, const auto& v) { return ag::log(v[0]); },
                             {random_tensor({dim(r), dim(r)}, r, 0.2, 3.0)});
       }},
      {"clamp", [&](Rng& r) {
         Tensor x = random_tensor({dim(r), dim(r)}, r, -2.0, 2.0);
         for (double& v : x.values) {
           if (std::abs(std::abs(v) - 0.7) < 0.01) v += 0.05;
         }
         return check_inputs([](ag::Tape&, const auto& v) { return ag::clamp(v[0], -0.7, 0.7); }, {x});
       }},
      {"minimum", [&](Rng& r) {
         const std::size_t m = dim(r), n = dim(r);
         Tensor a = random_tensor({m, n}, r), b = random_tensor({m, n}, r);
         for (std::size_t i = 0; i < a.size(); ++i) {
           if (std::abs(a.values[i] - b.values[i]) < 0.01) b.values[i] += 0.05;
         }
         return check_inputs([](ag::Tape&, const auto& v) { return ag::minimum(v[0], v[1]); }, {a, b});
       }},
      {"sum_mean", [&](Rng& r) {
         return check_inputs([](ag::Tape&, const auto& v) { return ag::add(ag::sum(v[0]), ag::mean(ag::mul(v[0], v[0]))); },
                             {random_tensor({dim(r), dim(r)}, r)});
       }},
      {"gelu", [&](Rng& r) {
         return check_inputs([](ag::Tape&, const auto& v) { return ag::gelu(v[0]); },
                             {random_tensor({dim(r), dim(r)}, r, -3.0, 3.0)});
       }},
      {"matmul", [&](Rng& r) {
         const std::size_t m = dim(r), k = dim(r), n = dim(r);
         return check_inputs([](ag::Tape&, const auto& v) { return ag::matmul(v[0], v[1]); },
                             {random_tensor({m, k}, r), random_tensor({k, n}, r)});
       }},
      {"transpose_reshape", [&](Rng& r) {
         const std::size_t m = dim(r), n = dim(r);
         return check_inputs(
             [m, n](ag::Tape&, const auto& v) { return ag::mul(ag::reshape(ag::transpose(v[0]), {m * n}), ag::reshape(v[1], {m * n})); },
             {random_tensor({m, n}, r), random_tensor({n, m}, r)});
       }},
      {"concat_slice", [&](Rng& r) {
         const std::size_t m = dim(r), n1 = dim(r), n2 = dim(r);
         const std::size_t axis = r.below(2);
         return check_inputs(
             [=](ag::Tape&, const auto& v) {
               ag::Var a = axis == 1 ? v[0] : ag::transpose(v[0]);
               ag::Var b = axis == 1 ? v[1] : ag::transpose(v[1]);
               ag::Var c = ag::concat({a, b}, axis);
               const std::size_t len = c.shape()[axis];
               return ag::gelu(ag::slice(c, axis, len / 3, len));
             },
             {random_tensor({m, n1}, r), random_tensor({m, n2}, r)});
       }},
      {"softmax", [&](Rng& r) {
         const std::size_t axis = r.below(2);
         return check_inputs([axis](ag::Tape&, const auto& v) { return ag::softmax(v[0], axis); },
                             {random_tensor({dim(r), dim(r)}, r, -3.0, 3.0)});
       }},
      {"log_softmax", [&](Rng& r) {
         return check_inputs([](ag::Tape&, const auto& v) { return ag::log_softmax(v[0]); },
                             {random_tensor({dim(r), dim(r)}, r, -3.0, 3.0)});
       }},
      {"rms_norm", [&](Rng& r) {
         const std::size_t m = dim(r), n = dim(r);
         return check_inputs([](ag::Tape&, const auto& v) { return ag::rms_norm(v[0], v[1]); },
                             {random_tensor({m, n}, r, -2.0, 2.0), random_tensor({n}, r, 0.5, 1.5)});
       }},
      {"embedding", [&](Rng& r) {
         const std::size_t vocab = dim(r) + 1, d = dim(r), len = dim(r);
         std::vector<int> ids;
         for (std::size_t i = 0; i < len; ++i) ids.push_back(static_cast<int>(r.below(vocab)));
         return check_inputs([ids](ag::Tape&, const auto& v) { return ag::embedding(v[0], ids); },
                             {random_tensor({vocab, d}, r)});
       }},
      {"causal_attention", [&](Rng& r) {
         const std::size_t heads = 1 + r.below(2), t = dim(r), d = heads * (1 + r.below(4));
         return check_inputs([heads](ag::Tape&, const auto& v) { return ag::causal_attention(v[0], v[1], v[2], heads); },
                             {random_tensor({t, d}, r), random_tensor({t, d}, r), random_tensor({t, d}, r)});
       }},
      {"cross_entropy", [&](Rng& r) {
         const std::size_t n = dim(r), vocab = dim(r) + 1;
         std::vector<int> targets;
         std::vector<std::uint8_t> mask;
         for (std::size_t i = 0; i < n; ++i) {
           targets.push_back(static_cast<int>(r.below(vocab)));
           mask.push_back(i == 0 ? 1 : static_cast<std::uint8_t>(r.below(2)));
         }
         return check_inputs([=](ag::Tape&, const auto& v) { return ag::cross_entropy(v[0], targets, mask); },
                             {random_tensor({n, vocab}, r, -3.0, 3.0)});
       }},
      {"gather_logprobs", [&](Rng& r) {
         const std::size_t n = dim(r), vocab = dim(r) + 1;
         std::vector<int> targets;
         for (std::size_t i = 0; i < n; ++i) targets.push_back(static_cast<int>(r.below(vocab)));
         return check_inputs([=](ag::Tape&, const auto& v) { return ag::gather_logprobs(v[0], targets); },
                             {random_tensor({n, vocab}, r, -3.0, 3.0)});
       }},
  };
  std::vector<PrimitiveOutcome> out;
  for (std::size_t c = 0; c < cases.size(); ++c) {
    PrimitiveOutcome o{cases[c].name, 0.0, 0};
    for (int s = 0; s < instances; ++s) {
      Rng rng(home::hash_seed(0x6772616443ULL, c, static_cast<std::uint64_t>(s)));
      o.worst = std::max(o.worst, cases[c].run(rng).rel_error);
      ++o.instances;
    }
    out.push_back(o);
  }
  return out;
}

}  // namespace gradcheck
