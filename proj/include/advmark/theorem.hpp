#pragma once

#include <cstdint>
#include <optional>

#include "advmark/models.hpp"

namespace advmark {

struct RadiusConfig {
  int directions = 32;
  int bisections = 20;
  /// Largest RMSE radius probed; directions that never flip report this value.
  double max_radius = 0.25;
  std::uint64_t seed = 41;
};

/// Smallest RMSE radius, over seeded random directions, at which the rounded
/// decode of x + ρ·u first differs from that of x (bisection per direction).
double robustness_radius(const ModelBundle& bundle, const Image& x, const RadiusConfig& config);

struct TheoremReport {
  double alpha = 0;       // radius of x_w1
  double delta = 0;       // RMSE(x_w2, x_w1)
  double eta2_bound = 0;  // radius of x_w2
  int samples = 0;
  /// eta2_bound >= alpha - delta within 1e-4; empty when alpha = 0.
  std::optional<bool> holds;
};

inline constexpr double kTheoremTolerance = 1e-4;

TheoremReport verify_theorem(const ModelBundle& bundle, const Image& xw1, const Image& xw2,
                             const RadiusConfig& config);

}  // namespace advmark
