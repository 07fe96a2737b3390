#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "advmark/distortion.hpp"
#include "advmark/models.hpp"
#include "advmark/perceptual.hpp"
#include "advmark/regeneration.hpp"

namespace advmark {

struct Stage2Config {
  int iter_o = 10;
  double alpha_x = 5e-3;
  double p = 34.0;
  double lambda_w2 = 0.1;
  double lambda_i2 = 5.0;
  /// Attacks k = 2..K+2 with their weights λ_ak.
  std::vector<AttackSpec> attacks;
  double tau2 = 0.95;
  std::uint64_t seed = 31;

  void validate() const;
};

/// JPEG 1.0, noise/blur/brightness 0.1 and regeneration proxy A 0.1.
std::vector<AttackSpec> default_stage2_attacks();

template <class S>
struct Stage2Loss {
  Var<S> total;
  Var<S> attack;     // L_a2, empty when no attack is active
  Var<S> watermark;  // L_w2
  Var<S> image;      // L_i2
  /// Decoder logits per evaluated attack, in `active` order.
  std::vector<Var<S>> decoded;
};

/// L2 = L_a2 + λ_w2·L_w2 + λ_i2·L_i2 with L_a2 the λ-weighted mean of the
/// message losses under the active attacks. Throws ContractError on a
/// non-differentiable or evaluation-only attack.
template <class S>
Stage2Loss<S> stage2_loss(const DecoderNet<S>& dec, const Var<S>& xw2, const Var<S>& xw1, const Var<S>& xo,
                          const Var<S>& m, const std::vector<AttackSpec>& active, const DenoiserBundle* denoiser,
                          const PerceptualMetric& perceptual, double lambda_w2, double lambda_i2, std::uint64_t seed);

struct Stage2LossValue {
  double total = 0, attack = 0, watermark = 0, image = 0;
};
Stage2LossValue loss_stage2(const ModelBundle& bundle, const Image& xw2, const Image& xw1, const Image& xo,
                            const Message& m, const std::vector<AttackSpec>& active, const DenoiserBundle* denoiser,
                            std::uint64_t seed, double lambda_w2 = 0.1, double lambda_i2 = 5.0);

/// Sign step followed by the quality mapping: the candidate is kept iff its
/// PSNR to x_o is at least p.
std::pair<Image, bool> pgd_step_quality(const Image& x, const Image& gradient, const Image& xo, double alpha_x,
                                        double p);

struct Stage2Iterate {
  int iteration = 0;
  std::map<std::string, double> attack_ba;
  double psnr = 0;
  bool accepted = false;
};

struct Stage2Result {
  Image image;
  std::vector<Stage2Iterate> log;
  /// x_w1 was already below the PSNR floor and was returned unchanged.
  bool degenerate = false;
  int accepted_steps = 0;
};

Stage2Result optimize_image(const ModelBundle& bundle, const Image& xo, const Message& m, const Image& xw1,
                            const Stage2Config& config, const DenoiserBundle* denoiser);

/// Applies one training-time attack (distortion or regeneration) in-graph.
template <class S>
Var<S> apply_training_attack(const Var<S>& x, const AttackSpec& spec, const DenoiserBundle* denoiser,
                             std::uint64_t seed);

}  // namespace advmark
