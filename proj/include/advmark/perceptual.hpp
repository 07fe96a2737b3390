#pragma once

#include <cstdint>

#include "advmark/imaging.hpp"
#include "advmark/nn.hpp"

namespace advmark {

inline constexpr std::uint64_t kDefaultFeatureSeed = 1234;

/// Perceptual distance from a frozen, seed-deterministic stack of three
/// strided 3×3 convolutions. Each layer's feature vectors are unit-normalised
/// per pixel and compared with squared L2, layers weighted equally.
class PerceptualMetric {
 public:
  explicit PerceptualMetric(std::uint64_t feature_seed = kDefaultFeatureSeed);

  /// Differentiable distance, averaged over the batch.
  template <class S>
  Var<S> distance(const Var<S>& a, const Var<S>& b) const;

  double operator()(const Image& a, const Image& b) const;

  std::uint64_t feature_seed() const { return seed_; }

 private:
  template <class S>
  std::vector<Var<S>> features(const VarMap<S>& p, const Var<S>& x) const;

  std::uint64_t seed_;
  ParamMap params_;
};

}  // namespace advmark
