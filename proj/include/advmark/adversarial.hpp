#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "advmark/corpus.hpp"
#include "advmark/distortion.hpp"
#include "advmark/models.hpp"

namespace advmark {

enum class PgdInit { zero, random_in_ball };

struct AdvBudget {
  double r = 20.0 / 255.0;
  int steps = 10;
  /// Zero selects r/5.
  double step_size = 0.0;
  PgdInit init = PgdInit::zero;

  double step() const { return step_size > 0 ? step_size : r / 5.0; }
  void validate() const;
};

/// Budget from an attack spec's r/steps/step keys.
AdvBudget budget_from_spec(const AttackSpec& spec);

/// Scalar objective to minimise, built on a graph over the attacked batch.
using Objective = std::function<Var<float>(const Var<float>&)>;

/// Sign-gradient descent on `objective` inside the L∞ ball of radius r around
/// x0, with every iterate kept in [0,1]. `trace` receives the objective value
/// before each step and after the last one.
Image pgd_linf(const Image& x0, const AdvBudget& budget, const Objective& objective, std::uint64_t seed,
               std::vector<double>* trace = nullptr);

/// PGD toward seed-random target messages (one per sample).
Image wevade_attack(const ModelBundle& bundle, const Image& xw, const AdvBudget& budget, std::uint64_t seed,
                    std::vector<double>* trace = nullptr);

/// Per-sample |0.5 - MSE(clamp(D(x),0,1), m)| summed over the batch.
template <class S>
Var<S> defender_objective(const DecoderNet<S>& dec, const Var<S>& x, const Var<S>& m);

/// PGD on the defender objective with the true messages.
Image defender_attack(const ModelBundle& bundle, const Image& xw, const std::vector<Message>& msgs,
                      const AdvBudget& budget, std::vector<double>* trace = nullptr);

/// Batched decode oracle; each sample costs one query.
using QueryOracle = std::function<std::vector<Message>(const Image&)>;
QueryOracle decoder_oracle(const ModelBundle& bundle);

struct BlackQConfig {
  double tau = 0.75;
  int query_budget = 2000;
  int mc_samples = 50;
  int bisections = 20;
  int max_reseeds = 20;
};

struct BlackQResult {
  Image image;
  int queries = 0;
  double bit_accuracy = 0;
  /// Every evading point the walk accepted, in order.
  std::vector<double> accepted_ba;
};

/// Decision-based boundary walk on a single image. Throws AttackInfeasible when
/// no seeded random start evades.
BlackQResult black_q_attack(const QueryOracle& oracle, const Image& xw, const Message& m, const BlackQConfig& config,
                            std::uint64_t seed);

struct SurrogateConfig {
  int width = 8;
  int epochs = 150;
  int batch_size = 16;
  double lr = 5e-3;
  double holdout = 0.25;
  /// No-signal control: training labels balanced within each class.
  bool shuffle_labels = false;
  std::uint64_t seed = 202;
};

/// Watermarked-vs-clean classifier; score > 0.5 means "watermarked".
struct SurrogateBundle {
  ParamMap params;
  int width = 8;
  double validation_accuracy = 0;
  bool trained = false;
};

template <class S>
Var<S> surrogate_score(const SurrogateBundle& s, const Var<S>& x);

/// Trains on the paired corpora; the trailing `holdout` fraction of pairs is
/// the validation split.
SurrogateBundle train_surrogate(const Image& clean, const Image& watermarked, const SurrogateConfig& config);
double surrogate_accuracy(const SurrogateBundle& s, const Image& clean, const Image& watermarked);

/// PGD lowering the surrogate's watermarked score.
Image black_s_attack(const SurrogateBundle& surrogate, const Image& xw, const AdvBudget& budget,
                     std::vector<double>* trace = nullptr);

}  // namespace advmark
