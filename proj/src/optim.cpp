#include "home/optim.hpp"

#include <cmath>
#include <unordered_map>

namespace home {

void adamw_update(std::vector<double>& param, const std::vector<double>& grad, AdamSlot& slot,
                  const AdamWConfig& cfg) {
  if (grad.size() != param.size()) throw ShapeError("adamw: gradient length differs from parameter");
  if (slot.m.empty()) {
    slot.m.assign(param.size(), 0.0);
    slot.v.assign(param.size(), 0.0);
  }
  if (slot.m.size() != param.size() || slot.v.size() != param.size()) {
    throw ShapeError("adamw: optimizer state does not match parameter");
  }
  ++slot.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(slot.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(slot.step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * g;
    slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = slot.m[i] / bc1;
    const double vhat = slot.v[i] / bc2;
    param[i] -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * param[i]);
  }
}

void adamw_step(const std::vector<Tensor*>& params, AdamWState& state, const AdamWConfig& cfg) {
  if (state.slots.empty()) state.slots.resize(params.size());
  if (state.slots.size() != params.size()) {
    throw ShapeError("adamw: state has " + std::to_string(state.slots.size()) + " slots for " +
                     std::to_string(params.size()) + " parameters");
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    const Tensor& t = *params[p];
    if (!t.grad) continue;
    for (std::size_t i = 0; i < t.grad->size(); ++i) {
      if (!std::isfinite((*t.grad)[i])) {
        throw NumericError("adamw: non-finite gradient in parameter " + std::to_string(p) + " element " +
                           std::to_string(i) + "; step rejected");
      }
    }
    if (!state.slots[p].m.empty() && state.slots[p].m.size() != t.size()) {
      throw ShapeError("adamw: state dimension mismatch for parameter " + std::to_string(p));
    }
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& t = *params[p];
    if (!t.grad) continue;
    adamw_update(t.values, *t.grad, state.slots[p], cfg);
  }
}

AdamW::AdamW(std::vector<Tensor*> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  state_.slots.resize(params_.size());
}

void accumulate_grads(const ag::Tape& tape, const std::vector<Tensor*>& params, double scale) {
  std::unordered_map<const Tensor*, Tensor*> lookup;
  for (Tensor* p : params) lookup.emplace(p, p);
  std::vector<double> buf;
  for (const auto& [src, g] : tape.parameter_grads()) {
    auto it = lookup.find(src);
    if (it == lookup.end()) continue;
    if (scale == 1.0) {
      it->second->accumulate_grad(g);
    } else {
      buf.assign(g.begin(), g.end());
      for (double& x : buf) x *= scale;
      it->second->accumulate_grad(buf);
    }
  }
}

void AdamW::step() { adamw_step(params_, state_, cfg_); }

void AdamW::zero_grad() {
  for (Tensor* t : params_) t->zero_grad();
}

}  // namespace home
