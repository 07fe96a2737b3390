#pragma once

#include <functional>
#include <string>
#include <vector>

#include "advmark/corpus.hpp"
#include "advmark/models.hpp"

namespace advmark {

struct PretrainConfig {
  int max_epochs = 600;
  int batch_size = 16;
  double lr = 1e-3;
  /// Weight of (MSE + perceptual)/2 once warm-up ends; adapted toward
  /// target_psnr by weight_factor per evaluation.
  double image_weight = 1.0;
  double weight_factor = 1.3;
  /// Held-out BA that ends the message-only warm-up.
  double warmup_ba = 0.9;
  double target_ba = 0.99;
  double target_psnr = 37.0;
  int eval_every = 5;
  double noise_sigma = 0.05;
  double jpeg_quality = 50;
  std::uint64_t seed = 11;
};

struct PretrainLog {
  int epoch = 0;
  double loss = 0;
  double message_loss = 0;
  double image_loss = 0;
  double image_weight = 0;
  double heldout_ba = -1;
  double heldout_psnr = -1;
};

using PretrainCallback = std::function<void(const PretrainLog&)>;

/// Noise-layer training of encoder and decoder from `bundle`. Each batch goes
/// through identity, Gaussian noise or straight-through JPEG, picked uniformly.
/// Stops once held-out clean BA and PSNR reach their targets; throws
/// TrainingError with the last measurements otherwise.
ModelBundle pretrain_base(const ModelBundle& bundle, const Corpus& train, const Corpus& heldout,
                          const PretrainConfig& config, std::vector<PretrainLog>* log = nullptr,
                          const PretrainCallback& on_epoch = {});

/// Clean round-trip measurements on `images` with seeded messages.
struct CleanStats {
  double bit_accuracy = 0;
  double psnr = 0;
  double min_psnr = 0;
  double perfect_fraction = 0;
};
CleanStats clean_stats(const ModelBundle& bundle, const Image& images, std::uint64_t seed);

}  // namespace advmark
