#pragma once

#include <map>
#include <string>

#include "advmark/autograd.hpp"
#include "advmark/rng.hpp"

namespace advmark {

/// Named parameter arrays; float storage matches the checkpoint format.
using ParamMap = std::map<std::string, Tensor<float>>;

template <class S>
using VarMap = std::map<std::string, Var<S>>;

/// Graph leaves holding the parameters cast to S.
template <class S>
VarMap<S> make_leaves(const ParamMap& params, bool requires_grad) {
  VarMap<S> out;
  for (const auto& [name, t] : params) out.emplace(name, Var<S>(t.template cast<S>(), requires_grad));
  return out;
}

template <class S>
const Var<S>& param(const VarMap<S>& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw DimensionError("missing parameter '" + name + "'");
  return it->second;
}

/// conv2d with "<name>.w" / "<name>.b".
template <class S>
Var<S> conv(const VarMap<S>& p, const std::string& name, const Var<S>& x, int stride = 1) {
  const Var<S>& w = param(p, name + ".w");
  return conv2d(x, w, param(p, name + ".b"), stride, w.shape().h / 2);
}

template <class S>
Var<S> dense(const VarMap<S>& p, const std::string& name, const Var<S>& x) {
  return linear(x, param(p, name + ".w"), param(p, name + ".b"));
}

/// He-normal conv weights scaled by `gain`, zero bias.
void add_conv(ParamMap& p, const std::string& name, int cout, int cin, int k, Rng& rng, double gain = 1.0);
void add_linear(ParamMap& p, const std::string& name, int out, int in, Rng& rng, double gain = 1.0);

bool all_finite(const ParamMap& p);
std::size_t parameter_count(const ParamMap& p);

/// Adaptive-moment optimiser over a ParamMap; state is keyed by parameter name.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// Applies one update using the gradients accumulated on `leaves`.
  /// Parameters whose leaf received no gradient are left untouched.
  void step(ParamMap& params, const VarMap<float>& leaves);

  long steps() const { return t_; }
  double learning_rate() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::map<std::string, Eigen::ArrayXf> m_, v_;
};

}  // namespace advmark
