#include "advmark/theorem.hpp"

#include <algorithm>
#include <cmath>

namespace advmark {

double robustness_radius(const ModelBundle& bundle, const Image& x, const RadiusConfig& cfg) {
  if (x.n() != 1) throw DimensionError("robustness_radius works on one image");
  if (cfg.directions < 1 || cfg.bisections < 1 || !(cfg.max_radius > 0)) throw ConfigError("invalid radius config");
  const Message ref = decode_messages(bundle, x)[0];
  const int d = cfg.directions;
  const auto numel = static_cast<Eigen::Index>(x.numel());
  // Unit-RMSE directions: ||u||_2 = sqrt(numel).
  Rng rng = Rng(cfg.seed).child("radius-directions");
  Eigen::ArrayXXf dirs(numel, d);
  for (int j = 0; j < d; ++j) {
    for (Eigen::Index i = 0; i < numel; ++i) dirs(i, j) = static_cast<float>(rng.normal());
    dirs.col(j) *= static_cast<float>(1.0 / std::sqrt(dirs.col(j).square().mean()));
  }
  Eigen::Map<const Eigen::ArrayXf> base(x.data(), numel);
  auto flips = [&](const std::vector<double>& radius) {
    Image batch(Shape{d, x.c(), x.h(), x.w()});
    for (int j = 0; j < d; ++j) {
      Eigen::Map<Eigen::ArrayXf>(batch.data() + j * numel, numel) = base + static_cast<float>(radius[j]) * dirs.col(j);
    }
    const auto decoded = decode_messages(bundle, batch);
    std::vector<bool> out(d);
    for (int j = 0; j < d; ++j) out[j] = !(decoded[j] == ref);
    return out;
  };
  std::vector<double> lo(d, 0.0), hi(d, cfg.max_radius);
  const auto at_max = flips(hi);
  for (int t = 0; t < cfg.bisections; ++t) {
    std::vector<double> mid(d);
    for (int j = 0; j < d; ++j) mid[j] = 0.5 * (lo[j] + hi[j]);
    const auto f = flips(mid);
    for (int j = 0; j < d; ++j) (f[j] ? hi[j] : lo[j]) = mid[j];
  }
  double radius = cfg.max_radius;
  for (int j = 0; j < d; ++j) {
    if (at_max[j]) radius = std::min(radius, lo[j]);
  }
  return radius;
}

TheoremReport verify_theorem(const ModelBundle& bundle, const Image& xw1, const Image& xw2, const RadiusConfig& cfg) {
  require_same_shape(xw1.shape(), xw2.shape(), "verify_theorem");
  TheoremReport r;
  r.samples = cfg.directions;
  r.alpha = robustness_radius(bundle, xw1, cfg);
  r.delta = rmse(xw2, xw1);
  r.eta2_bound = robustness_radius(bundle, xw2, cfg);
  if (r.alpha > 0) r.holds = r.eta2_bound >= r.alpha - r.delta - kTheoremTolerance;
  return r;
}

}  // namespace advmark
