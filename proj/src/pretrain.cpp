#include "advmark/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "advmark/distortion.hpp"
#include "advmark/perceptual.hpp"
#include "advmark/training.hpp"

namespace advmark {

CleanStats clean_stats(const ModelBundle& bundle, const Image& images, std::uint64_t seed) {
  Rng rng(seed);
  const auto msgs = random_messages(images.n(), bundle.arch.n, rng);
  const Image xw = encode_batch(bundle, images, msgs);
  const auto ba = bit_accuracies(bundle, xw, msgs);
  CleanStats s;
  s.min_psnr = kPsnrCap;
  for (int i = 0; i < images.n(); ++i) {
    s.bit_accuracy += ba[i];
    s.perfect_fraction += ba[i] == 1.0 ? 1.0 : 0.0;
    const double p = psnr(xw.samples(i, 1), images.samples(i, 1));
    s.psnr += p;
    s.min_psnr = std::min(s.min_psnr, p);
  }
  s.bit_accuracy /= images.n();
  s.perfect_fraction /= images.n();
  s.psnr /= images.n();
  return s;
}

ModelBundle pretrain_base(const ModelBundle& bundle, const Corpus& train, const Corpus& heldout,
                          const PretrainConfig& cfg, std::vector<PretrainLog>* log,
                          const PretrainCallback& on_epoch) {
  if (train.size() == 0) throw TrainingError("pretraining corpus is empty");
  if (cfg.batch_size <= 0 || cfg.max_epochs <= 0 || cfg.lr <= 0) throw ConfigError("invalid pretraining config");
  const Corpus& check = heldout.size() > 0 ? heldout : train;
  ModelBundle b = bundle;
  Rng rng = Rng(cfg.seed).child("pretrain");
  Adam enc_opt(cfg.lr), dec_opt(cfg.lr);
  const PerceptualMetric perceptual;
  // Warm-up trains the message path alone, without noise layer or image loss,
  // until the held-out accuracy leaves chance level.
  bool warm = false;
  double weight = 0.0;
  PretrainLog last;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    PretrainLog rec;
    rec.epoch = epoch;
    int batches = 0;
    for (const auto& idx : epoch_batches(train.size(), cfg.batch_size, rng)) {
      const Image xo_img = random_flips(gather(train.images, idx), rng);
      const auto msgs = random_messages(static_cast<int>(idx.size()), b.arch.n, rng);
      EncoderNet<float> enc(b, true);
      DecoderNet<float> dec(b, true);
      const Var<float> xo(xo_img), m(message_tensor(msgs));
      const Var<float> xw = enc(xo, m);
      Var<float> noised = xw;
      switch (warm ? rng.uniform_int(0, 2) : 0) {
        case 1:
          noised = gaussian_noise(xw, cfg.noise_sigma, rng.engine()());
          break;
        case 2:
          noised = jpeg_approx(xw, cfg.jpeg_quality);
          break;
        default:
          break;
      }
      const Var<float> msg_loss = mse(dec(noised), m);
      const Var<float> img_loss = (mse(xw, xo) + perceptual.distance(xw, xo)) * 0.5f;
      const Var<float> loss = msg_loss + img_loss * static_cast<float>(weight);
      backward(loss);
      enc_opt.step(b.encoder, enc.params());
      dec_opt.step(b.decoder, dec.params());
      if (!std::isfinite(loss.item())) throw TrainingError("pretraining diverged at epoch " + std::to_string(epoch));
      rec.loss += loss.item();
      rec.message_loss += msg_loss.item();
      rec.image_loss += img_loss.item();
      ++batches;
    }
    rec.loss /= batches;
    rec.message_loss /= batches;
    rec.image_loss /= batches;
    rec.image_weight = weight;
    bool done = false;
    if (!warm || epoch % cfg.eval_every == 0 || epoch == cfg.max_epochs) {
      const CleanStats s = clean_stats(b, check.images, derive_seed(cfg.seed, "pretrain-eval"));
      rec.heldout_ba = s.bit_accuracy;
      rec.heldout_psnr = s.psnr;
      if (!warm) {
        if (s.bit_accuracy >= cfg.warmup_ba) {
          warm = true;
          weight = cfg.image_weight;
        }
      } else {
        done = s.bit_accuracy >= cfg.target_ba && s.min_psnr >= cfg.target_psnr;
        if (s.bit_accuracy >= cfg.target_ba - 0.02 && s.min_psnr < cfg.target_psnr + 0.5) {
          weight *= cfg.weight_factor;
        } else if (s.bit_accuracy < cfg.target_ba - 0.05) {
          weight /= cfg.weight_factor;
        }
      }
    }
    if (log) log->push_back(rec);
    if (on_epoch) on_epoch(rec);
    last = rec;
    if (done) {
      b.version = bundle.version + 1;
      return b;
    }
  }
  std::ostringstream msg;
  msg << "pretraining did not converge in " << cfg.max_epochs << " epochs: held-out BA " << last.heldout_ba
      << " (target " << cfg.target_ba << "), PSNR " << last.heldout_psnr << " dB (target " << cfg.target_psnr
      << "), image weight " << weight;
  throw TrainingError(msg.str());
}

}  // namespace advmark
