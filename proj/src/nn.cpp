#include "advmark/nn.hpp"

#include <cmath>

namespace advmark {

void add_conv(ParamMap& p, const std::string& name, int cout, int cin, int k, Rng& rng, double gain) {
  Tensor<float> w(Shape{cout, cin, k, k});
  const double std = gain * std::sqrt(2.0 / (cin * k * k));
  for (Eigen::Index i = 0; i < w.array().size(); ++i) w.array()(i) = static_cast<float>(std * rng.normal());
  p[name + ".w"] = std::move(w);
  p[name + ".b"] = Tensor<float>(Shape{1, cout, 1, 1});
}

void add_linear(ParamMap& p, const std::string& name, int out, int in, Rng& rng, double gain) {
  Tensor<float> w(Shape{out, in, 1, 1});
  const double std = gain * std::sqrt(1.0 / in);
  for (Eigen::Index i = 0; i < w.array().size(); ++i) w.array()(i) = static_cast<float>(std * rng.normal());
  p[name + ".w"] = std::move(w);
  p[name + ".b"] = Tensor<float>(Shape{1, out, 1, 1});
}

bool all_finite(const ParamMap& p) {
  for (const auto& [name, t] : p)
    if (!t.array().isFinite().all()) return false;
  return true;
}

std::size_t parameter_count(const ParamMap& p) {
  std::size_t n = 0;
  for (const auto& [name, t] : p) n += t.numel();
  return n;
}

void Adam::step(ParamMap& params, const VarMap<float>& leaves) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const auto step = static_cast<float>(lr_ * std::sqrt(c2) / c1);
  for (auto& [name, value] : params) {
    auto it = leaves.find(name);
    if (it == leaves.end() || !it->second.has_grad()) continue;
    const auto& g = it->second.node()->grad.array();
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.size() == 0) {
      m = Eigen::ArrayXf::Zero(g.size());
      v = Eigen::ArrayXf::Zero(g.size());
    }
    m = static_cast<float>(beta1_) * m + static_cast<float>(1 - beta1_) * g;
    v = static_cast<float>(beta2_) * v + static_cast<float>(1 - beta2_) * g.square();
    value.array() -= step * m / (v.sqrt() + static_cast<float>(eps_));
  }
}

}  // namespace advmark
