#include "home/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace home::ag {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

Tape& same_tape(Var a, Var b) {
  if (!a.valid() || a.tape() != b.tape()) throw ContractError("operands live on different tapes");
  return *a.tape();
}

Tape& tape_of(Var a) {
  if (!a.valid()) throw ContractError("operation on an empty Var");
  return *a.tape();
}

// Broadcast layout: `big` has `repeat` copies of a block of length `block`.
struct Broadcast {
  bool swapped = false;  // true when the first operand is the small one
  std::size_t repeat = 1;
  std::size_t block = 0;
};

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

Broadcast broadcast_layout(const Shape& a, const Shape& b, const char* op) {
  Broadcast bc;
  if (is_suffix(b, a)) {
    bc.block = numel(b);
    bc.repeat = bc.block == 0 ? 0 : numel(a) / bc.block;
  } else if (is_suffix(a, b)) {
    bc.swapped = true;
    bc.block = numel(a);
    bc.repeat = bc.block == 0 ? 0 : numel(b) / bc.block;
  } else {
    throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                     shape_str(b));
  }
  return bc;
}

// Splits a shape around `axis` into (outer, axis length, inner).
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

void require_2d(const Shape& s, const char* op) {
  if (s.size() != 2) throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " + shape_str(s));
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_deriv(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

}  // namespace

// ---------------------------------------------------------------- Var / Tape

const Shape& Var::shape() const { return tape_->node(id_).data.shape; }
std::span<const double> Var::values() const { return tape_->node(id_).data.values; }
std::size_t Var::size() const { return tape_->node(id_).data.values.size(); }

double Var::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return values()[0];
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn) {
  if (backward_done_) throw ContractError("tape already consumed by backward; re-run the forward pass");
  value.check_finite("forward output");
  Node n;
  n.data = std::move(value);
  n.inputs = std::move(inputs);
  if (grad_enabled_) {
    n.requires_grad = std::any_of(n.inputs.begin(), n.inputs.end(),
                                  [&](std::size_t i) { return nodes_[i].requires_grad; });
  }
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor t) {
  if (backward_done_) throw ContractError("tape already consumed by backward");
  t.check_finite("constant");
  t.grad.reset();
  Node n;
  n.data = std::move(t);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::input(Tensor t) {
  Var v = constant(std::move(t));
  nodes_[v.id()].requires_grad = grad_enabled_;
  return v;
}

Var Tape::parameter(const Tensor& source) {
  if (auto it = param_index_.find(&source); it != param_index_.end()) return Var(this, it->second);
  Tensor copy(source.shape, source.values);
  if (!copy.all_finite()) throw NumericError("non-finite parameter of shape " + shape_str(copy.shape));
  Var v = constant(std::move(copy));
  nodes_[v.id()].requires_grad = grad_enabled_;
  nodes_[v.id()].source = &source;
  param_index_.emplace(&source, v.id());
  return v;
}

std::vector<double>& Tape::grad_buffer(std::size_t id) {
  auto& g = grads_[id];
  if (g.empty()) g.assign(nodes_[id].data.values.size(), 0.0);
  return g;
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw ContractError("loss does not belong to this tape");
  if (backward_done_) throw ContractError("backward already ran on this tape; re-run the forward pass");
  if (nodes_[loss.id()].data.values.size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_str(nodes_[loss.id()].data.shape));
  }
  backward_done_ = true;
  grads_.assign(nodes_.size(), {});
  if (!nodes_[loss.id()].requires_grad) return;
  grad_buffer(loss.id())[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || grads_[i].empty()) continue;
    n.backward(*this, i);
  }
  for (std::size_t i = 0; i <= loss.id(); ++i) {
    for (double g : grads_[i]) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient at tape node " + std::to_string(i));
    }
  }
}

std::span<const double> Tape::grad(Var v) const {
  if (!backward_done_) throw ContractError("gradients requested before backward");
  const auto& g = grads_.at(v.id());
  if (g.empty()) {
    static const std::vector<double> kEmpty;
    return kEmpty;
  }
  return g;
}

std::vector<std::pair<const Tensor*, std::span<const double>>> Tape::parameter_grads() const {
  std::vector<std::pair<const Tensor*, std::span<const double>>> out;
  if (!backward_done_) return out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].source && !grads_[i].empty()) out.emplace_back(nodes_[i].source, grads_[i]);
  }
  return out;
}

// ---------------------------------------------------------- elementwise ops

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Broadcast bc = broadcast_layout(a.shape(), b.shape(), "add");
  const Var big = bc.swapped ? b : a;
  const Var small = bc.swapped ? a : b;
  Tensor out(big.shape(), std::vector<double>(big.values().begin(), big.values().end()));
  auto sv = small.values();
  for (std::size_t r = 0; r < bc.repeat; ++r) {
    double* dst = out.values.data() + r * bc.block;
    for (std::size_t j = 0; j < bc.block; ++j) dst[j] += sv[j];
  }
  const std::size_t bi = big.id(), si = small.id();
  return t.record(std::move(out), {a.id(), b.id()}, [bi, si, bc](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_buffer(self);
    if (tp.node(bi).requires_grad) {
      auto& gb = tp.grad_buffer(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
    if (tp.node(si).requires_grad) {
      auto& gs = tp.grad_buffer(si);
      for (std::size_t r = 0; r < bc.repeat; ++r) {
        for (std::size_t j = 0; j < bc.block; ++j) gs[j] += g[r * bc.block + j];
      }
    }
  });
}

Var scale(Var a, double c) {
  Tape& t = tape_of(a);
  Tensor out(a.shape(), std::vector<double>(a.values().begin(), a.values().end()));
  for (double& x : out.values) x *= c;
  const std::size_t ai = a.id();
  return t.record(std::move(out), {ai}, [ai, c](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_buffer(self);
    auto& ga = tp.grad_buffer(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
  });
}

Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Broadcast bc = broadcast_layout(a.shape(), b.shape(), "mul");
  const Var big = bc.swapped ? b : a;
  const Var small = bc.swapped ? a : b;
  Tensor out(big.shape(), std::vector<double>(big.values().begin(), big.values().end()));
  auto sv = small.values();
  for (std::size_t r = 0; r < bc.repeat; ++r) {
    double* dst = out.values.data() + r * bc.block;
    for (std::size_t j = 0; j < bc.block; ++j) dst[j] *= sv[j];
  }
  const std::size_t bi = big.id(), si = small.id();
  return t.record(std::move(out), {a.id(), b.id()}, [bi, si, bc](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_buffer(self);
    const auto& bv = tp.node(bi).data.values;
    const auto& sv2 = tp.node(si).data.values;
    if (tp.node(bi).requires_grad) {
      auto& gb = tp.grad_buffer(bi);
      for (std::size_t r = 0; r < bc.repeat; ++r) {
        for (std::size_t j = 0; j < bc.block; ++j) gb[r * bc.block + j] += g[r * bc.block + j] * sv2[j];
      }
    }
    if (tp.node(si).requires_grad) {
      auto& gs = tp.grad_buffer(si);
      for (std::size_t r = 0; r < bc.repeat; ++r) {
        for (std::size_t j = 0; j < bc.block; ++j) gs[j] += g[r * bc.block + j] * bv[r * bc.block + j];
      }
    }
  });
}

Var add_scalar(Var a, double c) {
  Tape& t = tape_of(a);
  Tensor out(a.shape(), std::vector<double>(a.values().begin(), a.values().end()));
  for (double& x : out.values) x += c;
  const std::size_t ai = a.id();
  return t.record(std::move(out), {ai}, [ai](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_buffer(self);
    auto& ga = tp.grad_buffer(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var exp(Var a) {
  Tape& t = tape_of(a);
  Tensor out(a.shape());
  auto av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) out.values[i] = std::exp(av[i]);
  const std::size_t ai = a.id();
  return t.record(std::move(out), {ai}, [ai](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_buffer(self);
    const auto& y = tp.node(self).data.values;
    auto& ga = tp.grad_buffer(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
  });
}

Var log(Var a) {
  Tape& t = tape_of(a);
  Tensor out(a.shape());
  auto av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) out.values[i] = std::log(av[i]);
  const std::size_t ai = a.id();
  return t.record(std::move(out), {ai}, [ai](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_buffer(self);
    const auto& x = tp.node(ai).data.values;
    auto& ga = tp.grad_buffer(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i];
  });
}

Var clamp(Var a, double lo, double hi) {
  if (lo > hi) throw ContractError("clamp: lo > hi");
  Tape& t = tape_of(a);
  Tensor out(a.shape());
  auto av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) out.values[i] = std::clamp(av[i], lo, hi);
  const std::size_t ai = a.id();
  return t.record(std::move(out), {ai}, [ai, lo, hi](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_buffer(self);
    const auto& x = tp.node(ai).data.values;
    auto& ga = tp.grad_buffer(ai);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] >= lo && x[i] <= hi) ga[i] += g[i];
    }
  });
}

Var minimum(Var a, Var b) {
  Tape& t = same_tape(a, b);
  if (a.shape() != b.shape()) {
    throw ShapeError("minimum: shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor out(a.shape());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) out.values[i] = std::min(av[i], bv[i]);
  const std::size_t ai = a.id(), bi = b.id();
  return t.record(std::move(out), {ai, bi}, [ai, bi](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_buffer(self);
    const auto& x = tp.node(ai).data.values;
    const auto& y = tp.node(bi).data.values;
    const bool ga_on = tp.node(ai).requires_grad, gb_on = tp.node(bi).requires_grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] <= y[i]) {
        if (ga_on) tp.grad_buffer(ai)[i] += g[i];
      } else if (gb_on) {
        tp.grad_buffer(bi)[i] += g[i];
      }
    }
  });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  double s = 0.0;
  for (double x : a.values()) s += x;
  const std::size_t ai = a.id();
  return t.record(Tensor({1}, {s}), {ai}, [ai](Tape& tp, std::size_t self) {
    const double g = tp.grad_buffer(self)[0];
    for (double& x : tp.grad_buffer(ai)) x += g;
  });
}

Var mean(Var a) {
  if (a.size() == 0) throw ContractError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Var gelu(Var a) {
  Tape& t = tape_of(a);
  Tensor out(a.shape());
  auto av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) out.values[i] = gelu_value(av[i]);
  const std::size_t ai = a.id();
  return t.record(std::move(out), {ai}, [ai](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_buffer(self);
    const auto& x = tp.node(ai).data.values;
    auto& ga = tp.grad_buffer(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * gelu_deriv(x[i]);
  });
}

// ------------------------------------------------------------ linear algebra

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_2d(a.shape(), "matmul");
  require_2d(b.shape(), "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  Tensor out({m, n});
  {
    CMapMat A(a.values().data(), m, k), B(b.values().data(), k, n);
    MapMat C(out.values.data(), m, n);
    C.noalias() = A * B;
  }
  const std::size_t ai = a.id(), bi = b.id();
  return t.record(std::move(out), {ai, bi}, [ai, bi, m, k, n](Tape& tp, std::size_t self) {
    CMapMat G(tp.grad_buffer(self).data(), m, n);
    if (tp.node(ai).requires_grad) {
      CMapMat B(tp.node(bi).data.values.data(), k, n);
      MapMat GA(tp.grad_buffer(ai).data(), m, k);
      GA.noalias() += G * B.transpose();
    }
    if (tp.node(bi).requires_grad) {
      CMapMat A(tp.node(ai).data.values.data(), m, k);
      MapMat GB(tp.grad_buffer(bi).data(), k, n);
      GB.noalias() += A.transpose() * G;
    }
  });
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  require_2d(a.shape(), "transpose");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  Tensor out({n, m});
  auto av = a.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out.values[j * m + i] = av[i * n + j];
  }
  const std::size_t ai = a.id();
  return t.record(std::move(out), {ai}, [ai, m, n](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_buffer(self);
    auto& ga = tp.grad_buffer(ai);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
    }
  });
}

Var reshape(Var a, Shape shape) {
  Tape& t = tape_of(a);
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  Tensor out(std::move(shape), std::vector<double>(a.values().begin(), a.values().end()));
  const std::size_t ai = a.id();
  return t.record(std::move(out), {ai}, [ai](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_buffer(self);
    auto& ga = tp.grad_buffer(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  Tape& t = tape_of(parts[0]);
  Shape out_shape = parts[0].shape();
  if (axis >= out_shape.size()) throw ShapeError("concat: axis out of range");
  std::vector<std::size_t> lens;
  std::vector<std::size_t> ids;
  out_shape[axis] = 0;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw ContractError("concat: operands live on different tapes");
    Shape s = p.shape();
    if (s.size() != out_shape.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != out_shape[d]) throw ShapeError("concat: shape " + shape_str(s) + " mismatch");
    }
    lens.push_back(s[axis]);
    ids.push_back(p.id());
    out_shape[axis] += s[axis];
  }
  const AxisSplit sp = split_axis(out_shape, axis);
  Tensor out(out_shape);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto pv = parts[p].values();
    const std::size_t row = lens[p] * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * row), row,
                  out.values.begin() + static_cast<std::ptrdiff_t>(o * sp.len * sp.inner + offset * sp.inner));
    }
    offset += lens[p];
  }
  return t.record(std::move(out), ids, [ids, lens, sp](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_buffer(self);
    std::size_t off = 0;
    for (std::size_t p = 0; p < ids.size(); ++p) {
      const std::size_t row = lens[p] * sp.inner;
      if (tp.node(ids[p]).requires_grad) {
        auto& gp = tp.grad_buffer(ids[p]);
        for (std::size_t o = 0; o < sp.outer; ++o) {
          const double* src = g.data() + o * sp.len * sp.inner + off * sp.inner;
          for (std::size_t j = 0; j < row; ++j) gp[o * row + j] += src[j];
        }
      }
      off += lens[p];
    }
  });
}

Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
  Tape& t = tape_of(a);
  const AxisSplit sp = split_axis(a.shape(), axis);
  if (begin > end || end > sp.len) {
    throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
                     shape_str(a.shape()));
  }
  Shape out_shape = a.shape();
  out_shape[axis] = end - begin;
  Tensor out(out_shape);
  const std::size_t row = (end - begin) * sp.inner;
  auto av = a.values();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(o * sp.len * sp.inner + begin * sp.inner), row,
                out.values.begin() + static_cast<std::ptrdiff_t>(o * row));
  }
  const std::size_t ai = a.id();
  return t.record(std::move(out), {ai}, [ai, sp, begin, row](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_buffer(self);
    auto& ga = tp.grad_buffer(ai);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      double* dst = ga.data() + o * sp.len * sp.inner + begin * sp.inner;
      for (std::size_t j = 0; j < row; ++j) dst[j] += g[o * row + j];
    }
  });
}

// ------------------------------------------------------------- normalizers

Var softmax(Var a, std::size_t axis) {
  Tape& t = tape_of(a);
  const AxisSplit sp = split_axis(a.shape(), axis);
  Tensor out(a.shape());
  auto av = a.values();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.len * sp.inner + in;
      double mx = -INFINITY;
      for (std::size_t j = 0; j < sp.len; ++j) mx = std::max(mx, av[base + j * sp.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < sp.len; ++j) {
        const double e = std::exp(av[base + j * sp.inner] - mx);
        out.values[base + j * sp.inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < sp.len; ++j) out.values[base + j * sp.inner] /= z;
    }
  }
  const std::size_t ai = a.id();
  return t.record(std::move(out), {ai}, [ai, sp](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_buffer(self);
    const auto& y = tp.node(self).data.values;
    auto& ga = tp.grad_buffer(ai);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t in = 0; in < sp.inner; ++in) {
        const std::size_t base = o * sp.len * sp.inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < sp.len; ++j) dot += g[base + j * sp.inner] * y[base + j * sp.inner];
        for (std::size_t j = 0; j < sp.len; ++j) {
          const std::size_t idx = base + j * sp.inner;
          ga[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

Var log_softmax(Var a) {
  Tape& t = tape_of(a);
  require_2d(a.shape(), "log_softmax");
  const std::size_t n = a.shape()[0], v = a.shape()[1];
  Tensor out(a.shape());
  auto av = a.values();
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = av.data() + i * v;
    const double mx = *std::max_element(row, row + v);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < v; ++j) out.values[i * v + j] = row[j] - lse;
  }
  const std::size_t ai = a.id();
  return t.record(std::move(out), {ai}, [ai, n, v](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_buffer(self);
    const auto& y = tp.node(self).data.values;
    auto& ga = tp.grad_buffer(ai);
    for (std::size_t i = 0; i < n; ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < v; ++j) gs += g[i * v + j];
      for (std::size_t j = 0; j < v; ++j) ga[i * v + j] += g[i * v + j] - std::exp(y[i * v + j]) * gs;
    }
  });
}

Var rms_norm(Var x, Var scale_v, double eps) {
  Tape& t = same_tape(x, scale_v);
  require_2d(x.shape(), "rms_norm");
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  if (scale_v.shape() != Shape{d}) {
    throw ShapeError("rms_norm: scale " + shape_str(scale_v.shape()) + " for input " + shape_str(x.shape()));
  }
  Tensor out(x.shape());
  std::vector<double> inv(n);
  auto xv = x.values(), gv = scale_v.values();
  for (std::size_t i = 0; i < n; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += xv[i * d + j] * xv[i * d + j];
    inv[i] = 1.0 / std::sqrt(ss / static_cast<double>(d) + eps);
    for (std::size_t j = 0; j < d; ++j) out.values[i * d + j] = xv[i * d + j] * inv[i] * gv[j];
  }
  const std::size_t xi = x.id(), si = scale_v.id();
  return t.record(std::move(out), {xi, si}, [xi, si, n, d, inv = std::move(inv)](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_buffer(self);
    const auto& xs = tp.node(xi).data.values;
    const auto& sc = tp.node(si).data.values;
    if (tp.node(xi).requires_grad) {
      auto& gx = tp.grad_buffer(xi);
      for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += g[i * d + j] * sc[j] * xs[i * d + j];
        const double r = inv[i];
        const double coef = r * r * r * dot / static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += r * sc[j] * g[i * d + j] - xs[i * d + j] * coef;
      }
    }
    if (tp.node(si).requires_grad) {
      auto& gs = tp.grad_buffer(si);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) gs[j] += g[i * d + j] * xs[i * d + j] * inv[i];
      }
    }
  });
}

Var embedding(Var table, std::span<const int> ids) {
  Tape& t = tape_of(table);
  require_2d(table.shape(), "embedding");
  const std::size_t v = table.shape()[0], d = table.shape()[1];
  std::vector<int> idv(ids.begin(), ids.end());
  Tensor out({idv.size(), d});
  auto tv = table.values();
  for (std::size_t i = 0; i < idv.size(); ++i) {
    if (idv[i] < 0 || static_cast<std::size_t>(idv[i]) >= v) {
      throw ContractError("embedding: id " + std::to_string(idv[i]) + " outside vocabulary of " + std::to_string(v));
    }
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(idv[i] * d), d,
                out.values.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  const std::size_t ti = table.id();
  return t.record(std::move(out), {ti}, [ti, d, idv = std::move(idv)](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_buffer(self);
    auto& gt = tp.grad_buffer(ti);
    for (std::size_t i = 0; i < idv.size(); ++i) {
      double* dst = gt.data() + static_cast<std::size_t>(idv[i]) * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += g[i * d + j];
    }
  });
}

Var causal_attention(Var q, Var k, Var v, std::size_t n_heads) {
  Tape& t = same_tape(q, k);
  if (v.tape() != &t) throw ContractError("attention operands live on different tapes");
  require_2d(q.shape(), "causal_attention");
  if (k.shape() != q.shape() || v.shape() != q.shape()) {
    throw ShapeError("causal_attention: q/k/v shapes differ");
  }
  const std::size_t len = q.shape()[0], d = q.shape()[1];
  if (n_heads == 0 || d % n_heads != 0) throw ShapeError("causal_attention: width not divisible by heads");
  const std::size_t dh = d / n_heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  auto qv = q.values(), kv = k.values(), vv = v.values();
  // probs[h][i][j] for j <= i, stored densely [h, len, len]
  std::vector<double> probs(n_heads * len * len, 0.0);
  Tensor out({len, d});
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < len; ++i) {
      double* p = probs.data() + (h * len + i) * len;
      double mx = -INFINITY;
      for (std::size_t j = 0; j <= i; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += qv[i * d + off + c] * kv[j * d + off + c];
        p[j] = s * sc;
        mx = std::max(mx, p[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j <= i; ++j) {
        p[j] = std::exp(p[j] - mx);
        z += p[j];
      }
      double* o = out.values.data() + i * d + off;
      for (std::size_t j = 0; j <= i; ++j) {
        p[j] /= z;
        const double* vr = vv.data() + j * d + off;
        for (std::size_t c = 0; c < dh; ++c) o[c] += p[j] * vr[c];
      }
    }
  }
  const std::size_t qi = q.id(), ki = k.id(), vi = v.id();
  return t.record(std::move(out), {qi, ki, vi},
                  [qi, ki, vi, len, d, dh, n_heads, sc, probs = std::move(probs)](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_buffer(self);
    const auto& qs = tp.node(qi).data.values;
    const auto& ks = tp.node(ki).data.values;
    const auto& vs = tp.node(vi).data.values;
    std::vector<double> gq(len * d, 0.0), gk(len * d, 0.0), gv(len * d, 0.0);
    std::vector<double> dp(len);
    for (std::size_t h = 0; h < n_heads; ++h) {
      const std::size_t off = h * dh;
      for (std::size_t i = 0; i < len; ++i) {
        const double* p = probs.data() + (h * len + i) * len;
        const double* go = g.data() + i * d + off;
        double dot = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          const double* vr = vs.data() + j * d + off;
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += go[c] * vr[c];
          dp[j] = s;
          dot += p[j] * s;
          double* gvr = gv.data() + j * d + off;
          for (std::size_t c = 0; c < dh; ++c) gvr[c] += p[j] * go[c];
        }
        for (std::size_t j = 0; j <= i; ++j) {
          const double ds = p[j] * (dp[j] - dot) * sc;
          const double* kr = ks.data() + j * d + off;
          const double* qr = qs.data() + i * d + off;
          double* gqr = gq.data() + i * d + off;
          double* gkr = gk.data() + j * d + off;
          for (std::size_t c = 0; c < dh; ++c) {
            gqr[c] += ds * kr[c];
            gkr[c] += ds * qr[c];
          }
        }
      }
    }
    const std::size_t ids[3] = {qi, ki, vi};
    const std::vector<double>* parts[3] = {&gq, &gk, &gv};
    for (int p = 0; p < 3; ++p) {
      if (!tp.node(ids[p]).requires_grad) continue;
      auto& dst = tp.grad_buffer(ids[p]);
      for (std::size_t x = 0; x < dst.size(); ++x) dst[x] += (*parts[p])[x];
    }
  });
}

// ------------------------------------------------------------------ losses

Var cross_entropy(Var logits, std::span<const int> targets, std::span<const std::uint8_t> mask) {
  Tape& t = tape_of(logits);
  require_2d(logits.shape(), "cross_entropy");
  const std::size_t n = logits.shape()[0], v = logits.shape()[1];
  if (targets.size() != n || mask.size() != n) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets / " +
                     std::to_string(mask.size()) + " mask entries for " + std::to_string(n) + " rows");
  }
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= v) {
      throw ContractError("cross_entropy: target " + std::to_string(targets[i]) + " out of range");
    }
    ++count;
  }
  if (count == 0) throw ContractError("cross_entropy: every position is masked; loss undefined");
  auto lv = logits.values();
  std::vector<double> probs(n * v, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const double* row = lv.data() + i * v;
    const double mx = *std::max_element(row, row + v);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      probs[i * v + j] = std::exp(row[j] - mx);
      z += probs[i * v + j];
    }
    for (std::size_t j = 0; j < v; ++j) probs[i * v + j] /= z;
    total += (mx + std::log(z)) - row[targets[i]];
  }
  const double inv_count = 1.0 / static_cast<double>(count);
  std::vector<int> tgt(targets.begin(), targets.end());
  std::vector<std::uint8_t> msk(mask.begin(), mask.end());
  const std::size_t li = logits.id();
  return t.record(Tensor({1}, {total * inv_count}), {li},
                  [li, n, v, inv_count, probs = std::move(probs), tgt = std::move(tgt),
                   msk = std::move(msk)](Tape& tp, std::size_t self) {
    const double g = tp.grad_buffer(self)[0] * inv_count;
    auto& gl = tp.grad_buffer(li);
    for (std::size_t i = 0; i < n; ++i) {
      if (!msk[i]) continue;
      for (std::size_t j = 0; j < v; ++j) gl[i * v + j] += g * probs[i * v + j];
      gl[i * v + static_cast<std::size_t>(tgt[i])] -= g;
    }
  });
}

Var gather_logprobs(Var logits, std::span<const int> targets) {
  Tape& t = tape_of(logits);
  require_2d(logits.shape(), "gather_logprobs");
  const std::size_t n = logits.shape()[0], v = logits.shape()[1];
  if (targets.size() != n) throw ShapeError("gather_logprobs: target count mismatch");
  auto lv = logits.values();
  std::vector<double> probs(n * v);
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= v) {
      throw ContractError("gather_logprobs: target " + std::to_string(targets[i]) + " out of range");
    }
    const double* row = lv.data() + i * v;
    const double mx = *std::max_element(row, row + v);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      probs[i * v + j] = std::exp(row[j] - mx);
      z += probs[i * v + j];
    }
    for (std::size_t j = 0; j < v; ++j) probs[i * v + j] /= z;
    out.values[i] = row[targets[i]] - (mx + std::log(z));
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  const std::size_t li = logits.id();
  return t.record(std::move(out), {li}, [li, n, v, probs = std::move(probs), tgt = std::move(tgt)](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_buffer(self);
    auto& gl = tp.grad_buffer(li);
    for (std::size_t i = 0; i < n; ++i) {
      if (g[i] == 0.0) continue;
      for (std::size_t j = 0; j < v; ++j) gl[i * v + j] -= g[i] * probs[i * v + j];
      gl[i * v + static_cast<std::size_t>(tgt[i])] += g[i];
    }
  });
}

}  // namespace home::ag
