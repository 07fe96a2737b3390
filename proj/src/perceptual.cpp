#include "advmark/perceptual.hpp"

namespace advmark {

namespace {
constexpr int kWidths[] = {8, 16, 32};
}

PerceptualMetric::PerceptualMetric(std::uint64_t feature_seed) : seed_(feature_seed) {
  Rng rng = Rng(feature_seed).child("perceptual");
  int cin = 3;
  for (int l = 0; l < 3; ++l) {
    add_conv(params_, "f" + std::to_string(l), kWidths[l], cin, 3, rng);
    cin = kWidths[l];
  }
}

template <class S>
std::vector<Var<S>> PerceptualMetric::features(const VarMap<S>& p, const Var<S>& x) const {
  std::vector<Var<S>> out;
  Var<S> h = x * S(2) + S(-1);
  for (int l = 0; l < 3; ++l) {
    h = leaky_relu(conv(p, "f" + std::to_string(l), h, 2), S(0.2));
    out.push_back(channel_normalize(h, S(1e-8)));
  }
  return out;
}

template <class S>
Var<S> PerceptualMetric::distance(const Var<S>& a, const Var<S>& b) const {
  require_same_shape(a.shape(), b.shape(), "perceptual_distance");
  const VarMap<S> p = make_leaves<S>(params_, false);
  const auto fa = features(p, a);
  const auto fb = features(p, b);
  Var<S> total;
  for (std::size_t l = 0; l < fa.size(); ++l) {
    // mse averages over channels too; scale back to a per-pixel squared norm.
    const S scale = static_cast<S>(fa[l].shape().c) / static_cast<S>(fa.size());
    Var<S> term = mse(fa[l], fb[l]) * scale;
    total = total ? total + term : term;
  }
  return total;
}

double PerceptualMetric::operator()(const Image& a, const Image& b) const {
  return distance(Var<double>(a.cast<double>()), Var<double>(b.cast<double>())).item();
}

template Var<float> PerceptualMetric::distance<float>(const Var<float>&, const Var<float>&) const;
template Var<double> PerceptualMetric::distance<double>(const Var<double>&, const Var<double>&) const;

}  // namespace advmark
