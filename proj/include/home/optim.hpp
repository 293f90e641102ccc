#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "home/autograd.hpp"
#include "home/tensor.hpp"

namespace home {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// First/second moment estimates and step count of one parameter tensor.
struct AdamSlot {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;
};

struct AdamWState {
  std::vector<AdamSlot> slots;
};

/// Decoupled-weight-decay Adam over a fixed, ordered parameter list.
///
/// A parameter whose `grad` is absent was not reached by backward and is left
/// untouched (no decay, no moment update, no step increment). All gradients are
/// validated before any parameter is written, so a non-finite gradient rejects
/// the whole step.
void adamw_step(const std::vector<Tensor*>& params, AdamWState& state, const AdamWConfig& cfg);

/// Same update for a single tensor and explicit gradient buffer.
void adamw_update(std::vector<double>& param, const std::vector<double>& grad, AdamSlot& slot,
                  const AdamWConfig& cfg);

/// Adds `scale` times each parameter-leaf gradient of a finished tape into the
/// matching tensor in `params`. Leaves not listed in `params` are ignored.
void accumulate_grads(const ag::Tape& tape, const std::vector<Tensor*>& params, double scale = 1.0);

class AdamW {
 public:
  AdamW(std::vector<Tensor*> params, AdamWConfig cfg);

  void step();
  void zero_grad();
  AdamWConfig& config() { return cfg_; }
  const AdamWState& state() const { return state_; }
  const std::vector<Tensor*>& params() const { return params_; }

 private:
  std::vector<Tensor*> params_;
  AdamWConfig cfg_;
  AdamWState state_;
};

}  // namespace home
