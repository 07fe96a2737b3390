#include "advmark/stage2.hpp"

#include <cmath>

namespace advmark {

void Stage2Config::validate() const {
  if (iter_o < 0) throw ConfigError("stage2 iter_o must be >= 0");
  if (!(alpha_x > 0)) throw ConfigError("stage2 alpha_x must be positive");
  if (!(p > 0)) throw ConfigError("stage2 p must be positive");
  if (lambda_w2 < 0 || lambda_i2 < 0) throw ConfigError("stage2 loss weights must be >= 0");
  if (!(tau2 > 0.5 && tau2 <= 1.0)) throw ConfigError("stage2 tau2 must lie in (0.5, 1]");
  if (attacks.empty()) throw ConfigError("stage2 needs at least one attack (K >= 1)");
  for (const auto& a : attacks) {
    if (!(a.weight >= 0) || !std::isfinite(a.weight)) throw ConfigError("attack weights must be finite and >= 0");
  }
}

std::vector<AttackSpec> default_stage2_attacks() {
  auto v = default_training_distortions();
  AttackSpec regen = parse_attack("regeneration:proxy=A");
  regen.weight = 0.1;
  v.push_back(regen);
  return v;
}

template <class S>
Var<S> apply_training_attack(const Var<S>& x, const AttackSpec& spec, const DenoiserBundle* denoiser,
                             std::uint64_t seed) {
  if (spec.unknown()) throw ContractError("attack '" + spec.id() + "' is reserved for evaluation");
  if (spec.kind == AttackKind::regeneration) {
    if (!denoiser) throw ContractError("regeneration attack needs a denoiser");
    return regenerate(x, *denoiser, seed);
  }
  if (!spec.differentiable()) throw ContractError("attack '" + spec.id() + "' is not differentiable");
  return apply_distortion(x, spec, seed);
}

template <class S>
Stage2Loss<S> stage2_loss(const DecoderNet<S>& dec, const Var<S>& xw2, const Var<S>& xw1, const Var<S>& xo,
                          const Var<S>& m, const std::vector<AttackSpec>& active, const DenoiserBundle* denoiser,
                          const PerceptualMetric& perceptual, double lambda_w2, double lambda_i2, std::uint64_t seed) {
  Stage2Loss<S> l;
  double wsum = 0;
  for (std::size_t k = 0; k < active.size(); ++k) {
    const Var<S> decoded = dec(apply_training_attack(xw2, active[k], denoiser, derive_seed(seed, "attack", k)));
    l.decoded.push_back(decoded);
    if (active[k].weight <= 0) continue;
    const Var<S> term = mse(decoded, m) * static_cast<S>(active[k].weight);
    l.attack = l.attack ? l.attack + term : term;
    wsum += active[k].weight;
  }
  if (l.attack) l.attack = l.attack * static_cast<S>(1.0 / wsum);
  l.watermark = mse(dec(xw2), m);
  l.image = (mse(xw2, xo) + perceptual.distance(xw2, xo) + mse(xw2, xw1) * S(2)) * S(0.25);
  l.total = l.watermark * static_cast<S>(lambda_w2) + l.image * static_cast<S>(lambda_i2);
  if (l.attack) l.total = l.attack + l.total;
  return l;
}

Stage2LossValue loss_stage2(const ModelBundle& bundle, const Image& xw2, const Image& xw1, const Image& xo,
                            const Message& m, const std::vector<AttackSpec>& active, const DenoiserBundle* denoiser,
                            std::uint64_t seed, double lambda_w2, double lambda_i2) {
  const DecoderNet<double> dec(bundle, false);
  const PerceptualMetric perceptual;
  const auto l = stage2_loss<double>(dec, Var<double>(xw2.cast<double>()), Var<double>(xw1.cast<double>()),
                                     Var<double>(xo.cast<double>()),
                                     Var<double>(message_tensor({m}).cast<double>()), active, denoiser, perceptual,
                                     lambda_w2, lambda_i2, seed);
  return {l.total.item(), l.attack ? l.attack.item() : 0.0, l.watermark.item(), l.image.item()};
}

std::pair<Image, bool> pgd_step_quality(const Image& x, const Image& gradient, const Image& xo, double alpha_x,
                                        double p) {
  require_same_shape(x.shape(), gradient.shape(), "pgd_step_quality");
  Image cand = x;
  cand.array() = (x.array() - static_cast<float>(alpha_x) * gradient.array().sign()).max(0.0f).min(1.0f);
  if (psnr(cand, xo) >= p) return {cand, true};
  return {x, false};
}

Stage2Result optimize_image(const ModelBundle& bundle, const Image& xo, const Message& m, const Image& xw1,
                            const Stage2Config& cfg, const DenoiserBundle* denoiser) {
  cfg.validate();
  if (xo.n() != 1 || xw1.n() != 1) throw DimensionError("optimize_image works on one image");
  Stage2Result res;
  res.image = xw1;
  if (psnr(xw1, xo) < cfg.p) {
    res.degenerate = true;
    return res;
  }
  const DecoderNet<float> dec(bundle, false);
  const PerceptualMetric perceptual;
  const Var<float> xo_v(xo), xw1_v(xw1), mv(message_tensor({m}));
  for (int t = 1; t <= cfg.iter_o; ++t) {
    const std::uint64_t seed = derive_seed(cfg.seed, "stage2-iteration", t);
    Stage2Iterate it;
    it.iteration = t;
    // Per-attack BA at the current iterate; robust attacks leave the loss.
    std::vector<AttackSpec> active;
    {
      for (std::size_t k = 0; k < cfg.attacks.size(); ++k) {
        const Image attacked =
            apply_training_attack(Var<float>(res.image), cfg.attacks[k], denoiser, derive_seed(seed, "attack", k))
                .value();
        const double ba = bit_accuracy(round_message(logits_row(dec(Var<float>(attacked)).value(), 0)), m);
        it.attack_ba[cfg.attacks[k].id()] = ba;
        if (ba < cfg.tau2) active.push_back(cfg.attacks[k]);
      }
    }
    const Var<float> x(res.image, true);
    const auto l = stage2_loss<float>(dec, x, xw1_v, xo_v, mv, active, denoiser, perceptual, cfg.lambda_w2,
                                      cfg.lambda_i2, seed);
    backward(l.total);
    auto [next, accepted] = pgd_step_quality(res.image, x.grad(), xo, cfg.alpha_x, cfg.p);
    it.accepted = accepted;
    it.psnr = psnr(accepted ? next : res.image, xo);
    res.log.push_back(it);
    if (!accepted) break;
    res.image = next;
    ++res.accepted_steps;
  }
  return res;
}

template Var<float> apply_training_attack<float>(const Var<float>&, const AttackSpec&, const DenoiserBundle*,
                                                 std::uint64_t);
template Var<double> apply_training_attack<double>(const Var<double>&, const AttackSpec&, const DenoiserBundle*,
                                                   std::uint64_t);
template Stage2Loss<float> stage2_loss<float>(const DecoderNet<float>&, const Var<float>&, const Var<float>&,
                                              const Var<float>&, const Var<float>&, const std::vector<AttackSpec>&,
                                              const DenoiserBundle*, const PerceptualMetric&, double, double,
                                              std::uint64_t);
template Stage2Loss<double> stage2_loss<double>(const DecoderNet<double>&, const Var<double>&, const Var<double>&,
                                                const Var<double>&, const Var<double>&, const std::vector<AttackSpec>&,
                                                const DenoiserBundle*, const PerceptualMetric&, double, double,
                                                std::uint64_t);

}  // namespace advmark
