#include "advmark/stage1.hpp"

#include <cmath>

#include "advmark/training.hpp"

namespace advmark {

void Stage1Config::validate() const {
  budget.validate();
  if (iter_e < 1 || epochs < 1 || batch_size < 1) throw ConfigError("stage1 iter_e, epochs and batch_size must be >= 1");
  if (!(lr_e > 0) || !(lr_d > 0)) throw ConfigError("stage1 learning rates must be positive");
  if (lambda_w1 < 0 || lambda_i1 < 0) throw ConfigError("stage1 loss weights must be >= 0");
  if (!(tau1 > 0.5 && tau1 <= 1.0)) throw ConfigError("stage1 tau1 must lie in (0.5, 1]");
}

namespace {

double batch_ba(const Tensor<float>& logits, const std::vector<Message>& msgs) {
  double s = 0;
  for (std::size_t i = 0; i < msgs.size(); ++i) {
    s += bit_accuracy(round_message(logits_row(logits, static_cast<int>(i))), msgs[i]);
  }
  return s / static_cast<double>(msgs.size());
}

template <class S>
Var<S> image_loss(const Var<S>& xw, const Var<S>& xo, const PerceptualMetric& perceptual) {
  return (mse(xw, xo) + perceptual.distance(xw, xo)) * S(0.5);
}

}  // namespace

template <class S>
Stage1Loss<S> stage1_loss(const EncoderNet<S>& enc, const DecoderNet<S>& dec, const ModelBundle& bundle,
                          const Var<S>& xo, const std::vector<Message>& msgs, const AdvBudget& budget,
                          const PerceptualMetric& perceptual, double lambda_w1, double lambda_i1) {
  Stage1Loss<S> l;
  const Var<S> m(message_tensor(msgs).template cast<S>());
  l.xw1 = enc(xo, m);
  const Image xw1_img = l.xw1.value().template cast<float>();
  const Image xa1_img = defender_attack(bundle, xw1_img, msgs, budget);
  Tensor<S> delta = xa1_img.template cast<S>();
  delta.array() -= l.xw1.value().array();
  l.xa1 = add_const(l.xw1, delta);
  l.decoded_adv = dec(l.xa1);
  l.adversarial = mse(l.decoded_adv, m);
  l.watermark = mse(dec(l.xw1), m);
  l.image = image_loss(l.xw1, xo, perceptual);
  l.total = l.adversarial + l.watermark * static_cast<S>(lambda_w1) + l.image * static_cast<S>(lambda_i1);
  return l;
}

Stage1LossValue loss_stage1(const ModelBundle& bundle, const Image& xo, const std::vector<Message>& msgs,
                            const AdvBudget& budget, double lambda_w1, double lambda_i1) {
  const EncoderNet<double> enc(bundle, false);
  const DecoderNet<double> dec(bundle, false);
  const PerceptualMetric perceptual;
  const auto l = stage1_loss<double>(enc, dec, bundle, Var<double>(xo.cast<double>()), msgs, budget, perceptual,
                                     lambda_w1, lambda_i1);
  return {l.total.item(), l.adversarial.item(), l.watermark.item(), l.image.item(), l.xa1.value().cast<float>()};
}

namespace {

enum class Mode { advmark, eat };

Stage1Result encoder_finetune(const ModelBundle& bundle, const Corpus& corpus, const Stage1Config& cfg, Mode mode,
                              const Stage1Callback& on_batch) {
  cfg.validate();
  if (corpus.size() == 0) throw TrainingError("stage1 corpus is empty");
  Stage1Result res;
  res.bundle = bundle;
  ModelBundle& b = res.bundle;
  ModelBundle last_good = b;
  Rng rng = Rng(cfg.seed).child(mode == Mode::advmark ? "stage1" : "eat");
  Adam enc_opt(cfg.lr_e), dec_opt(cfg.lr_d);
  const PerceptualMetric perceptual;
  for (int epoch = 1; epoch <= cfg.epochs && !res.aborted; ++epoch) {
    int bi = 0;
    for (const auto& idx : epoch_batches(corpus.size(), cfg.batch_size, rng)) {
      const Image xo_img = random_flips(gather(corpus.images, idx), rng);
      const auto msgs = random_messages(static_cast<int>(idx.size()), b.arch.n, rng);
      const Var<float> xo(xo_img);
      Stage1BatchLog rec;
      rec.epoch = epoch;
      rec.batch = ++bi;
      for (int i = 1; i <= cfg.iter_e; ++i) {
        const bool last = i == cfg.iter_e;
        const EncoderNet<float> enc(b, true);
        const DecoderNet<float> dec(b, last && mode == Mode::advmark);
        const auto l = stage1_loss<float>(enc, dec, b, xo, msgs, cfg.budget, perceptual, cfg.lambda_w1, cfg.lambda_i1);
        rec.loss = l.total.item();
        if (!std::isfinite(rec.loss)) {
          rec.diverged = true;
          res.aborted = true;
          b = last_good;
          break;
        }
        backward(l.total);
        enc_opt.step(b.encoder, enc.params());
        rec.adversarial = l.adversarial.item();
        rec.watermark = l.watermark.item();
        rec.image = l.image.item();
        if (last) {
          rec.adv_ba = batch_ba(l.decoded_adv.value(), msgs);
          if (mode == Mode::advmark && rec.adv_ba < cfg.tau1) {
            dec_opt.step(b.decoder, dec.params());
            rec.decoder_step = true;
            ++res.decoder_steps;
          }
        }
      }
      if (!res.aborted) {
        if (all_finite(b.encoder) && all_finite(b.decoder)) {
          last_good = b;
        } else {
          rec.diverged = true;
          res.aborted = true;
          b = last_good;
        }
      }
      ++res.batches;
      res.log.push_back(rec);
      if (on_batch) on_batch(rec);
      if (res.aborted) break;
    }
  }
  b.version = bundle.version + 1;
  return res;
}

}  // namespace

Stage1Result run_stage1(const ModelBundle& bundle, const Corpus& corpus, const Stage1Config& config,
                        const Stage1Callback& on_batch) {
  return encoder_finetune(bundle, corpus, config, Mode::advmark, on_batch);
}

Stage1Result train_eat_baseline(const ModelBundle& bundle, const Corpus& corpus, const Stage1Config& config,
                                const Stage1Callback& on_batch) {
  return encoder_finetune(bundle, corpus, config, Mode::eat, on_batch);
}

std::vector<AttackSpec> default_jat_attacks() {
  return {parse_attack("identity"), parse_attack("jpeg"), parse_attack("gaussian_noise"), parse_attack("defender")};
}

Stage1Result train_jat_baseline(const ModelBundle& bundle, const Corpus& corpus, const std::vector<AttackSpec>& attacks,
                                const Stage1Config& cfg, const Stage1Callback& on_batch) {
  cfg.validate();
  if (corpus.size() == 0) throw TrainingError("JAT corpus is empty");
  if (attacks.empty()) throw ConfigError("JAT needs at least one attack");
  for (const auto& a : attacks) {
    if (a.unknown()) throw ConfigError("attack '" + a.id() + "' is reserved for evaluation");
    if (a.kind != AttackKind::defender && a.kind != AttackKind::identity && !a.differentiable()) {
      throw ConfigError("JAT attack '" + a.id() + "' is not differentiable");
    }
  }
  Stage1Result res;
  res.bundle = bundle;
  ModelBundle& b = res.bundle;
  ModelBundle last_good = b;
  Rng rng = Rng(cfg.seed).child("jat");
  Adam enc_opt(cfg.lr_e), dec_opt(cfg.lr_d);
  const PerceptualMetric perceptual;
  for (int epoch = 1; epoch <= cfg.epochs && !res.aborted; ++epoch) {
    int bi = 0;
    for (const auto& idx : epoch_batches(corpus.size(), cfg.batch_size, rng)) {
      const Image xo_img = random_flips(gather(corpus.images, idx), rng);
      const auto msgs = random_messages(static_cast<int>(idx.size()), b.arch.n, rng);
      const Var<float> xo(xo_img), m(message_tensor(msgs));
      Stage1BatchLog rec;
      rec.epoch = epoch;
      rec.batch = ++bi;
      for (int i = 1; i <= cfg.iter_e; ++i) {
        const AttackSpec& a = attacks[rng.uniform_int(0, static_cast<int>(attacks.size()) - 1)];
        const EncoderNet<float> enc(b, true);
        const DecoderNet<float> dec(b, true);
        const Var<float> xw = enc(xo, m);
        Var<float> attacked = xw;
        if (a.kind == AttackKind::defender) {
          Tensor<float> delta = defender_attack(b, xw.value(), msgs, budget_from_spec(a));
          delta.array() -= xw.value().array();
          attacked = add_const(xw, delta);
        } else if (a.kind != AttackKind::identity) {
          attacked = apply_distortion(xw, a, rng.engine()());
        }
        const Var<float> decoded = dec(attacked);
        const Var<float> msg_loss = mse(decoded, m);
        const Var<float> img = image_loss(xw, xo, perceptual);
        const Var<float> loss = msg_loss + img * static_cast<float>(cfg.lambda_i1);
        rec.loss = loss.item();
        if (!std::isfinite(rec.loss)) {
          rec.diverged = true;
          res.aborted = true;
          b = last_good;
          break;
        }
        backward(loss);
        enc_opt.step(b.encoder, enc.params());
        dec_opt.step(b.decoder, dec.params());
        ++res.decoder_steps;
        rec.adversarial = msg_loss.item();
        rec.image = img.item();
        rec.adv_ba = batch_ba(decoded.value(), msgs);
        rec.decoder_step = true;
      }
      if (!res.aborted) {
        if (all_finite(b.encoder) && all_finite(b.decoder)) {
          last_good = b;
        } else {
          rec.diverged = true;
          res.aborted = true;
          b = last_good;
        }
      }
      ++res.batches;
      res.log.push_back(rec);
      if (on_batch) on_batch(rec);
      if (res.aborted) break;
    }
  }
  b.version = bundle.version + 1;
  return res;
}

template Stage1Loss<float> stage1_loss<float>(const EncoderNet<float>&, const DecoderNet<float>&, const ModelBundle&,
                                              const Var<float>&, const std::vector<Message>&, const AdvBudget&,
                                              const PerceptualMetric&, double, double);
template Stage1Loss<double> stage1_loss<double>(const EncoderNet<double>&, const DecoderNet<double>&,
                                                const ModelBundle&, const Var<double>&, const std::vector<Message>&,
                                                const AdvBudget&, const PerceptualMetric&, double, double);

}  // namespace advmark
