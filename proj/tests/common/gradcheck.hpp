#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "advmark/autograd.hpp"
#include "advmark/rng.hpp"

namespace advmark::testing {

/// Scalar probe sum(w ⊙ f(x)) with fixed random weights, so the check does not
/// depend on a particular reduction.
inline std::function<Var<double>(const Var<double>&)> weighted_sum(
    std::function<Var<double>(const Var<double>&)> f, const Shape& out_shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<double> w(Shape{1, out_shape.c, out_shape.h, out_shape.w});
  for (Eigen::Index i = 0; i < w.array().size(); ++i) w.array()[i] = rng.normal();
  return [f, w](const Var<double>& x) { return sum(mul_broadcast(f(x), w)); };
}

inline double relative_error(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-6});
  return std::abs(a - b) / scale;
}

struct GradCheck {
  std::vector<double> analytic;
  std::vector<double> numeric;
  double max_rel_error = 0;
};

/// Central differences of a scalar function at `coords` random input
/// coordinates against the reverse-mode gradient.
inline GradCheck check_input_gradient(const std::function<Var<double>(const Var<double>&)>& f,
                                      const Tensor<double>& x0, std::uint64_t seed, int coords = 5,
                                      double eps = 1e-6) {
  Var<double> x(x0, true);
  backward(f(x));
  const Tensor<double> g = x.grad();
  Rng rng(seed);
  GradCheck out;
  for (int k = 0; k < coords; ++k) {
    const auto i = static_cast<Eigen::Index>(rng.uniform_int(0, static_cast<int>(x0.numel()) - 1));
    Tensor<double> hi = x0, lo = x0;
    hi.array()[i] += eps;
    lo.array()[i] -= eps;
    const double num = (f(Var<double>(hi)).item() - f(Var<double>(lo)).item()) / (2 * eps);
    out.analytic.push_back(g.array()[i]);
    out.numeric.push_back(num);
    out.max_rel_error = std::max(out.max_rel_error, relative_error(g.array()[i], num));
  }
  return out;
}

/// Same check on the coordinates of a graph leaf the function closes over.
inline GradCheck check_leaf_gradient(const std::function<Var<double>()>& f, const Var<double>& leaf,
                                     std::uint64_t seed, int coords = 5, double eps = 1e-6) {
  leaf.node()->grad = Tensor<double>();
  backward(f());
  const Tensor<double> g = leaf.grad();
  Rng rng(seed);
  GradCheck out;
  auto& value = leaf.node()->value;
  for (int k = 0; k < coords; ++k) {
    const auto i = static_cast<Eigen::Index>(rng.uniform_int(0, static_cast<int>(value.numel()) - 1));
    const double orig = value.array()[i];
    value.array()[i] = orig + eps;
    const double up = f().item();
    value.array()[i] = orig - eps;
    const double down = f().item();
    value.array()[i] = orig;
    const double num = (up - down) / (2 * eps);
    out.analytic.push_back(g.array()[i]);
    out.numeric.push_back(num);
    out.max_rel_error = std::max(out.max_rel_error, relative_error(g.array()[i], num));
  }
  return out;
}

}  // namespace advmark::testing
