#include "home/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace home {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), values(numel(shape), fill) {}

Tensor::Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
  if (numel(shape) != values.size()) {
    throw ShapeError("tensor shape " + shape_str(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
}

bool Tensor::all_finite() const {
  for (double x : values) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

void Tensor::check_finite(const std::string& what) const {
  if (!all_finite()) throw NumericError("non-finite value in " + what);
}

void Tensor::accumulate_grad(std::span<const double> g) {
  if (g.size() != values.size()) {
    throw ShapeError("gradient length " + std::to_string(g.size()) + " for tensor " +
                     shape_str(shape));
  }
  if (!grad) {
    grad.emplace(g.begin(), g.end());
    return;
  }
  auto& dst = *grad;
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

}  // namespace home
