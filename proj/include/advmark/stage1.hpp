#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "advmark/adversarial.hpp"
#include "advmark/corpus.hpp"
#include "advmark/models.hpp"
#include "advmark/perceptual.hpp"

namespace advmark {

struct Stage1Config {
  int iter_e = 10;
  double lr_e = 5e-4;
  double lr_d = 5e-4;
  AdvBudget budget;
  double lambda_w1 = 10.0;
  double lambda_i1 = 1000.0;
  double tau1 = 0.95;
  int epochs = 10;
  int batch_size = 16;
  std::uint64_t seed = 21;

  void validate() const;
};

template <class S>
struct Stage1Loss {
  Var<S> total;
  Var<S> adversarial;  // L_a1
  Var<S> watermark;    // L_w1
  Var<S> image;        // L_i1
  Var<S> xw1;
  Var<S> xa1;
  Var<S> decoded_adv;
};

/// Builds L1 = L_a1 + λ_w1·L_w1 + λ_i1·L_i1 over the given networks. The
/// adversarial example comes from defender_attack at the current parameters
/// and enters the graph as a constant offset from x_w1.
template <class S>
Stage1Loss<S> stage1_loss(const EncoderNet<S>& enc, const DecoderNet<S>& dec, const ModelBundle& bundle,
                          const Var<S>& xo, const std::vector<Message>& msgs, const AdvBudget& budget,
                          const PerceptualMetric& perceptual, double lambda_w1, double lambda_i1);

struct Stage1LossValue {
  double total = 0, adversarial = 0, watermark = 0, image = 0;
  Image xa1;
};
Stage1LossValue loss_stage1(const ModelBundle& bundle, const Image& xo, const std::vector<Message>& msgs,
                            const AdvBudget& budget, double lambda_w1 = 1.0, double lambda_i1 = 3.0);

struct Stage1BatchLog {
  int epoch = 0;
  int batch = 0;
  double loss = 0;
  double adversarial = 0;
  double watermark = 0;
  double image = 0;
  /// BA of the final adversarial example of the batch.
  double adv_ba = 0;
  bool decoder_step = false;
  bool diverged = false;
};

struct Stage1Result {
  ModelBundle bundle;
  std::vector<Stage1BatchLog> log;
  int batches = 0;
  int decoder_steps = 0;
  bool aborted = false;
};

using Stage1Callback = std::function<void(const Stage1BatchLog&)>;

/// Encoder fine-tuning with the conditional decoder step after every
/// iter_e-th encoder step. A non-finite loss restores the last good
/// parameters and ends the run with `aborted` set.
Stage1Result run_stage1(const ModelBundle& bundle, const Corpus& corpus, const Stage1Config& config,
                        const Stage1Callback& on_batch = {});

/// Decoder never updated.
Stage1Result train_eat_baseline(const ModelBundle& bundle, const Corpus& corpus, const Stage1Config& config,
                                const Stage1Callback& on_batch = {});

/// Joint encoder and decoder training; each step routes the batch through one
/// attack drawn uniformly from `attacks` ("defender" uses the current models).
Stage1Result train_jat_baseline(const ModelBundle& bundle, const Corpus& corpus, const std::vector<AttackSpec>& attacks,
                                const Stage1Config& config, const Stage1Callback& on_batch = {});

/// Default JAT pool: identity, JPEG, noise, defender.
std::vector<AttackSpec> default_jat_attacks();

}  // namespace advmark
