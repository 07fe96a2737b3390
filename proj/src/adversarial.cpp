#include "advmark/adversarial.hpp"

#include <algorithm>
#include <cmath>

#include "advmark/training.hpp"

namespace advmark {

void AdvBudget::validate() const {
  if (!(r > 0)) throw ParameterError("attack radius r must be positive");
  if (steps < 0) throw ParameterError("attack steps must be >= 0");
  if (!(step() > 0)) throw ParameterError("attack step size must be positive");
}

AdvBudget budget_from_spec(const AttackSpec& spec) {
  AdvBudget b;
  b.r = spec.get("r");
  b.steps = static_cast<int>(spec.get("steps"));
  b.step_size = spec.get("step");
  b.validate();
  return b;
}

Image pgd_linf(const Image& x0, const AdvBudget& budget, const Objective& objective, std::uint64_t seed,
               std::vector<double>* trace) {
  budget.validate();
  const auto r = static_cast<float>(budget.r);
  const auto step = static_cast<float>(budget.step());
  Image x = x0;
  if (budget.init == PgdInit::random_in_ball) {
    Rng rng = Rng(seed).child("pgd-init");
    for (std::size_t i = 0; i < x.numel(); ++i) x.data()[i] += static_cast<float>(rng.uniform(-r, r));
    x.array() = x.array().max(x0.array() - r).min(x0.array() + r).max(0.0f).min(1.0f);
  }
  for (int t = 0; t < budget.steps; ++t) {
    const Var<float> xv(x, true);
    const Var<float> loss = objective(xv);
    if (trace) trace->push_back(loss.item());
    backward(loss);
    const auto g = xv.grad();
    x.array() -= step * g.array().sign();
    x.array() = x.array().max(x0.array() - r).min(x0.array() + r).max(0.0f).min(1.0f);
  }
  if (trace && budget.steps > 0) trace->push_back(objective(Var<float>(x)).item());
  return x;
}

Image wevade_attack(const ModelBundle& bundle, const Image& xw, const AdvBudget& budget, std::uint64_t seed,
                    std::vector<double>* trace) {
  Rng rng = Rng(seed).child("wevade-target");
  const Var<float> target(message_tensor(random_messages(xw.n(), bundle.arch.n, rng)));
  const DecoderNet<float> dec(bundle, false);
  return pgd_linf(
      xw, budget, [&](const Var<float>& x) { return mse(dec(x), target) * static_cast<float>(xw.n()); }, seed, trace);
}

template <class S>
Var<S> defender_objective(const DecoderNet<S>& dec, const Var<S>& x, const Var<S>& m) {
  const Var<S> per = mse_per_sample(clamp(dec(x), S(0), S(1)), m);
  return sum(abs(S(0.5) - per));
}

Image defender_attack(const ModelBundle& bundle, const Image& xw, const std::vector<Message>& msgs,
                      const AdvBudget& budget, std::vector<double>* trace) {
  if (static_cast<int>(msgs.size()) != xw.n()) throw DimensionError("one message per image required");
  const Var<float> m(message_tensor(msgs));
  const DecoderNet<float> dec(bundle, false);
  return pgd_linf(
      xw, budget, [&](const Var<float>& x) { return defender_objective(dec, x, m); }, 0, trace);
}

QueryOracle decoder_oracle(const ModelBundle& bundle) {
  return [bundle](const Image& x) { return decode_messages(bundle, x); };
}

namespace {

class BoundaryWalk {
 public:
  BoundaryWalk(const QueryOracle& oracle, const Image& xw, const Message& m, const BlackQConfig& cfg)
      : oracle_(oracle), xw_(xw), m_(m), cfg_(cfg) {}

  int queries() const { return queries_; }
  int remaining() const { return cfg_.query_budget - queries_; }

  /// BA per sample of a batch; counts queries.
  std::vector<double> query(const Image& batch) {
    queries_ += batch.n();
    std::vector<double> out;
    for (const auto& d : oracle_(batch)) out.push_back(bit_accuracy(d, m_));
    return out;
  }
  bool evades(double ba) const { return ba < cfg_.tau; }

  /// Bisection on the segment [xw, adv]; returns the evading end.
  std::pair<Image, double> bisect(const Image& adv, double adv_ba) {
    double lo = 0.0, hi = 1.0;  // fraction toward adv; hi always evades
    double hi_ba = adv_ba;
    for (int i = 0; i < cfg_.bisections && remaining() > 0; ++i) {
      const double mid = 0.5 * (lo + hi);
      const double ba = query(blend(mid, adv))[0];
      if (evades(ba)) {
        hi = mid;
        hi_ba = ba;
      } else {
        lo = mid;
      }
    }
    return {hi == 1.0 ? adv : blend(hi, adv), hi_ba};
  }

  Image blend(double t, const Image& adv) const {
    Image out = xw_;
    out.array() = xw_.array() + static_cast<float>(t) * (adv.array() - xw_.array());
    return out;
  }

  Image current_;

 private:
  const QueryOracle& oracle_;
  const Image& xw_;
  const Message& m_;
  const BlackQConfig& cfg_;
  int queries_ = 0;
};

double l2(const Image& a, const Image& b) { return std::sqrt((a.array() - b.array()).square().cast<double>().sum()); }

}  // namespace

BlackQResult black_q_attack(const QueryOracle& oracle, const Image& xw, const Message& m, const BlackQConfig& cfg,
                            std::uint64_t seed) {
  if (!(cfg.tau > 0.5 && cfg.tau < 1.0)) throw ParameterError("black_q tau must lie in (0.5, 1)");
  if (cfg.query_budget < 1 || cfg.mc_samples < 1 || cfg.bisections < 0) throw ParameterError("invalid black_q budget");
  if (xw.n() != 1) throw DimensionError("black_q_attack works on one image");
  BoundaryWalk walk(oracle, xw, m, cfg);
  Rng rng = Rng(seed).child("black_q");
  BlackQResult res;

  // Seeded random start that already evades.
  double start_ba = 1.0;
  bool found = false;
  for (int k = 0; k < cfg.max_reseeds && walk.remaining() > 0; ++k) {
    Image start(xw.shape());
    Rng srng = rng.child("start", k);
    for (std::size_t i = 0; i < start.numel(); ++i) start.data()[i] = static_cast<float>(srng.uniform());
    start_ba = walk.query(start)[0];
    if (walk.evades(start_ba)) {
      walk.current_ = start;
      found = true;
      break;
    }
  }
  if (!found) throw AttackInfeasible("black_q: no random start evades within " + std::to_string(cfg.max_reseeds) + " seeds");
  res.accepted_ba.push_back(start_ba);

  auto [x, x_ba] = walk.bisect(walk.current_, start_ba);
  walk.current_ = x;
  res.accepted_ba.push_back(x_ba);
  Image best = x;
  double best_ba = x_ba, best_dist = l2(x, xw);

  const double dim = static_cast<double>(xw.numel());
  for (int t = 1; walk.remaining() > 0; ++t) {
    const double dist = l2(walk.current_, xw);
    if (dist <= 0) break;
    // Gradient-direction estimate from sign queries around the boundary point.
    const int mc = std::min(cfg.mc_samples, walk.remaining());
    if (mc < 2) break;
    const double probe = std::max(1e-4, dist / std::sqrt(dim));
    Image batch(Shape{mc, 3, xw.h(), xw.w()});
    std::vector<Eigen::ArrayXf> dirs(mc);
    for (int i = 0; i < mc; ++i) {
      Eigen::ArrayXf u(xw.numel());
      for (Eigen::Index j = 0; j < u.size(); ++j) u(j) = static_cast<float>(rng.normal());
      u /= std::sqrt(u.square().sum());
      Eigen::ArrayXf cand = (walk.current_.array() + static_cast<float>(probe) * u).max(0.0f).min(1.0f);
      dirs[i] = cand - walk.current_.array();
      std::copy(cand.data(), cand.data() + cand.size(), batch.data() + static_cast<std::size_t>(i) * xw.numel());
    }
    const auto bas = walk.query(batch);
    std::vector<double> phi(mc);
    double mean_phi = 0;
    for (int i = 0; i < mc; ++i) mean_phi += phi[i] = walk.evades(bas[i]) ? 1.0 : -1.0;
    mean_phi /= mc;
    Eigen::ArrayXf v = Eigen::ArrayXf::Zero(xw.numel());
    for (int i = 0; i < mc; ++i) {
      const double w = std::abs(mean_phi) == 1.0 ? phi[i] : phi[i] - mean_phi;
      v += static_cast<float>(w) * dirs[i];
    }
    const double vn = std::sqrt(v.square().sum());
    if (!(vn > 0)) continue;
    v /= static_cast<float>(vn);

    // Geometric step search along the estimated direction, kept evading.
    double xi = dist / std::sqrt(static_cast<double>(t));
    bool stepped = false;
    Image cand(xw.shape());
    double cand_ba = 1.0;
    while (walk.remaining() > 0 && xi > 1e-6) {
      cand.array() = (walk.current_.array() + static_cast<float>(xi) * v).max(0.0f).min(1.0f);
      cand_ba = walk.query(cand)[0];
      if (walk.evades(cand_ba)) {
        stepped = true;
        break;
      }
      xi /= 2;
    }
    if (!stepped) break;
    res.accepted_ba.push_back(cand_ba);
    auto [nx, nba] = walk.bisect(cand, cand_ba);
    walk.current_ = nx;
    res.accepted_ba.push_back(nba);
    const double nd = l2(nx, xw);
    if (nd < best_dist) {
      best = nx;
      best_dist = nd;
      best_ba = nba;
    }
  }
  res.image = best;
  res.bit_accuracy = best_ba;
  res.queries = walk.queries();
  return res;
}

namespace {
void init_surrogate(SurrogateBundle& s, std::uint64_t seed) {
  Rng rng = Rng(seed).child("surrogate");
  const int w = s.width;
  add_conv(s.params, "sur.conv1", w, 3, 3, rng);
  add_conv(s.params, "sur.conv2", 2 * w, w, 3, rng);
  add_conv(s.params, "sur.conv3", 2 * w, 2 * w, 3, rng);
  add_linear(s.params, "sur.head", 1, 2 * w, rng);
}

template <class S>
Var<S> surrogate_graph(const VarMap<S>& p, const Var<S>& x) {
  const S slope = S(0.1);
  Var<S> h = leaky_relu(conv(p, "sur.conv1", x * S(2) + S(-1)), slope);
  h = leaky_relu(conv(p, "sur.conv2", h, 2), slope);
  h = leaky_relu(conv(p, "sur.conv3", h, 2), slope);
  const Shape s = h.shape();
  // Global average pool through a constant linear map.
  Tensor<S> pool(Shape{1, s.h * s.w, 1, 1}, S(1) / static_cast<S>(s.h * s.w));
  const Var<S> flat = reshape(h, Shape{s.n * s.c, s.h * s.w, 1, 1});
  const Var<S> pooled = reshape(linear(flat, Var<S>(pool.reshaped(Shape{1, s.h * s.w, 1, 1})), Var<S>()),
                                Shape{s.n, s.c, 1, 1});
  return sigmoid(dense(p, "sur.head", pooled));
}
}  // namespace

template <class S>
Var<S> surrogate_score(const SurrogateBundle& s, const Var<S>& x) {
  if (!s.trained) throw StateError("surrogate is not trained");
  return surrogate_graph(make_leaves<S>(s.params, false), x);
}

double surrogate_accuracy(const SurrogateBundle& s, const Image& clean, const Image& watermarked) {
  const Tensor<float> pc = surrogate_score(s, Var<float>(clean)).value();
  const Tensor<float> pw = surrogate_score(s, Var<float>(watermarked)).value();
  int correct = 0;
  for (int i = 0; i < clean.n(); ++i) correct += pc.data()[i] < 0.5f;
  for (int i = 0; i < watermarked.n(); ++i) correct += pw.data()[i] >= 0.5f;
  return static_cast<double>(correct) / (clean.n() + watermarked.n());
}

SurrogateBundle train_surrogate(const Image& clean, const Image& watermarked, const SurrogateConfig& cfg) {
  if (clean.n() == 0 || watermarked.n() == 0) throw TrainingError("surrogate corpora must be nonempty");
  if (!(clean.shape() == watermarked.shape())) throw TrainingError("surrogate corpora must be paired");
  const int n = clean.n();
  const int held = std::max(1, static_cast<int>(std::ceil(cfg.holdout * n)));
  if (held >= n) throw TrainingError("surrogate corpus too small for a validation split");
  const int ntrain = n - held;
  SurrogateBundle s;
  s.width = cfg.width;
  init_surrogate(s, cfg.seed);
  Rng rng = Rng(cfg.seed).child("surrogate-train");
  // Pool of (image, label) over the training pairs.
  Image pool = stack(std::vector<Image>{clean.samples(0, ntrain), watermarked.samples(0, ntrain)});
  std::vector<float> labels(2 * ntrain);
  for (int i = 0; i < 2 * ntrain; ++i) labels[i] = i < ntrain ? 0.0f : 1.0f;
  if (cfg.shuffle_labels) {
    // Half of each class gets each label, so labels carry no class information.
    for (int c = 0; c < 2; ++c) {
      const auto first = labels.begin() + c * ntrain;
      for (int i = 0; i < ntrain; ++i) first[i] = i < ntrain / 2 ? 0.0f : 1.0f;
      std::shuffle(first, first + ntrain, rng.engine());
    }
  }
  Adam opt(cfg.lr);
  for (int e = 0; e < cfg.epochs; ++e) {
    for (const auto& idx : epoch_batches(2 * ntrain, cfg.batch_size, rng)) {
      const Image xb = random_flips(gather(pool, idx), rng);
      Tensor<float> yb(Shape{static_cast<int>(idx.size()), 1, 1, 1});
      for (std::size_t i = 0; i < idx.size(); ++i) yb.data()[i] = labels[idx[i]];
      const VarMap<float> leaves = make_leaves<float>(s.params, true);
      const Var<float> loss = mse(surrogate_graph(leaves, Var<float>(xb)), Var<float>(yb));
      backward(loss);
      opt.step(s.params, leaves);
    }
  }
  s.trained = true;
  s.validation_accuracy = surrogate_accuracy(s, clean.samples(ntrain, held), watermarked.samples(ntrain, held));
  return s;
}

Image black_s_attack(const SurrogateBundle& surrogate, const Image& xw, const AdvBudget& budget,
                     std::vector<double>* trace) {
  return pgd_linf(
      xw, budget, [&](const Var<float>& x) { return sum(surrogate_score(surrogate, x)); }, 0, trace);
}

template Var<float> defender_objective<float>(const DecoderNet<float>&, const Var<float>&, const Var<float>&);
template Var<double> defender_objective<double>(const DecoderNet<double>&, const Var<double>&, const Var<double>&);
template Var<float> surrogate_score<float>(const SurrogateBundle&, const Var<float>&);
template Var<double> surrogate_score<double>(const SurrogateBundle&, const Var<double>&);

}  // namespace advmark
