#include <doctest.h>

#include <cmath>

#include "advmark/adversarial.hpp"
#include "advmark/corpus.hpp"
#include "advmark/stage2.hpp"
#include "advmark/theorem.hpp"

using namespace advmark;

namespace {

ModelBundle small_bundle() {
  ModelConfig c;
  c.arch.height = c.arch.width = 32;
  c.seed = 3;
  return init_models(c);
}

Image covers(int n) { return generate_corpus(CorpusConfig{n, 32, 32, 5, 0.25, ""}).images; }

// Bit i is set when the mean of the i-th row band of the red channel exceeds 0.5.
QueryOracle band_oracle(int n) {
  return [n](const Image& x) {
    std::vector<Message> out;
    for (int s = 0; s < x.n(); ++s) {
      Message m;
      const int rows = x.h() / n;
      for (int i = 0; i < n; ++i) m.bits.push_back(x.plane(s, 0).middleRows(i * rows, rows).mean() > 0.5f);
      out.push_back(m);
    }
    return out;
  };
}

}  // namespace

TEST_CASE("pgd stays inside the ball and the pixel range") {
  const ModelBundle b = small_bundle();
  const Image x = covers(2);
  AdvBudget budget;
  budget.r = 8.0 / 255;
  budget.steps = 5;
  std::vector<double> trace;
  const Image y = wevade_attack(b, x, budget, 9, &trace);
  CHECK((y.array() - x.array()).abs().maxCoeff() <= budget.r + 1e-6);
  CHECK(y.array().minCoeff() >= 0.f);
  CHECK(y.array().maxCoeff() <= 1.f);
  CHECK(trace.size() == 6);
  CHECK(trace.back() <= trace.front());
}

TEST_CASE("defender objective is minimised by the defender attack") {
  const ModelBundle b = small_bundle();
  const Image x = covers(2);
  Rng rng(1);
  const auto msgs = random_messages(2, 30, rng);
  AdvBudget budget;
  budget.steps = 5;
  std::vector<double> trace;
  const Image y = defender_attack(b, encode_batch(b, x, msgs), msgs, budget, &trace);
  CHECK(trace.back() <= trace.front() + 1e-9);
  CHECK(y.shape() == x.shape());
}

TEST_CASE("budget validation") {
  AdvBudget bad;
  bad.r = -1;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
  const AdvBudget from = budget_from_spec(parse_attack("wevade:r=0.05,steps=3"));
  CHECK(from.r == 0.05);
  CHECK(from.steps == 3);
  CHECK(from.step() == doctest::Approx(0.01));
}

TEST_CASE("black-q output always evades and respects the budget") {
  const QueryOracle oracle = band_oracle(8);
  Image xw(Shape{1, 3, 32, 32}, 0.8f);
  Message m;
  m.bits.assign(8, 1);
  BlackQConfig cfg;
  cfg.query_budget = 600;
  cfg.mc_samples = 20;
  int calls = 0;
  const QueryOracle counted = [&](const Image& x) {
    calls += x.n();
    return oracle(x);
  };
  const auto r = black_q_attack(counted, xw, m, cfg, 4);
  CHECK(r.bit_accuracy < cfg.tau);
  CHECK(bit_accuracy(oracle(r.image)[0], m) < cfg.tau);
  CHECK(calls <= cfg.query_budget);
  CHECK(r.queries == calls);
  for (double ba : r.accepted_ba) CHECK(ba < cfg.tau);
}

TEST_CASE("black-q reports infeasible starts") {
  const QueryOracle constant = [](const Image& x) {
    return std::vector<Message>(x.n(), Message{std::vector<std::uint8_t>(8, 1)});
  };
  Message m;
  m.bits.assign(8, 1);
  BlackQConfig cfg;
  cfg.max_reseeds = 3;
  CHECK_THROWS_AS(black_q_attack(constant, Image(Shape{1, 3, 32, 32}, 0.5f), m, cfg, 1), AttackInfeasible);
}

TEST_CASE("surrogate separates a planted pattern and not shuffled labels") {
  const Image clean = covers(48);
  Image marked = clean;
  Rng rng(12);
  Eigen::ArrayXf pattern(clean.shape().sample_size());
  for (Eigen::Index i = 0; i < pattern.size(); ++i) pattern(i) = rng.uniform() < 0.5 ? -0.06f : 0.06f;
  for (int s = 0; s < marked.n(); ++s) {
    Eigen::Map<Eigen::ArrayXf> v(marked.data() + s * clean.shape().sample_size(), pattern.size());
    v = (v + pattern).max(0.0f).min(1.0f);
  }
  SurrogateConfig cfg;
  cfg.epochs = 40;
  const SurrogateBundle real = train_surrogate(clean, marked, cfg);
  CHECK(real.validation_accuracy >= 0.9);
  cfg.shuffle_labels = true;
  const SurrogateBundle control = train_surrogate(clean, marked, cfg);
  CHECK(std::abs(control.validation_accuracy - 0.5) <= 0.1);
}

TEST_CASE("black-s stays inside the ball") {
  const Image clean = covers(8);
  Image marked = clean;
  marked.array() = (marked.array() + 0.05f).min(1.0f);
  SurrogateConfig cfg;
  cfg.epochs = 2;
  const SurrogateBundle s = train_surrogate(clean, marked, cfg);
  AdvBudget budget;
  budget.r = 4.0 / 255;
  budget.steps = 3;
  const Image y = black_s_attack(s, marked, budget);
  CHECK((y.array() - marked.array()).abs().maxCoeff() <= budget.r + 1e-6);
  CHECK(y.array().minCoeff() >= 0.f);
  CHECK(y.array().maxCoeff() <= 1.f);
}

TEST_CASE("untrained or degenerate surrogates are rejected") {
  SurrogateBundle s;
  CHECK_THROWS_AS(surrogate_score(s, Var<float>(covers(1))), StateError);
  CHECK_THROWS_AS(train_surrogate(covers(1), covers(1), SurrogateConfig{}), TrainingError);
  CHECK_THROWS_AS(train_surrogate(covers(2), covers(3), SurrogateConfig{}), TrainingError);
}

TEST_CASE("theorem check is exact in the degenerate case") {
  const ModelBundle b = small_bundle();
  const Image x = covers(1);
  RadiusConfig cfg;
  cfg.directions = 8;
  cfg.bisections = 12;
  const TheoremReport r = verify_theorem(b, x, x, cfg);
  CHECK(r.delta == 0);
  CHECK(r.eta2_bound == r.alpha);
  if (r.alpha > 0) {
    REQUIRE(r.holds.has_value());
    CHECK(*r.holds);
  } else {
    CHECK_FALSE(r.holds.has_value());
  }
}

TEST_CASE("robustness radius is bounded by the probe range") {
  const ModelBundle b = small_bundle();
  RadiusConfig cfg;
  cfg.directions = 4;
  cfg.bisections = 8;
  cfg.max_radius = 0.05;
  const double r = robustness_radius(b, covers(1), cfg);
  CHECK(r >= 0);
  CHECK(r <= 0.05);
}

TEST_CASE("quality step never crosses the PSNR floor") {
  const Image xo(Shape{1, 3, 16, 16}, 0.5f);
  Image g(Shape{1, 3, 16, 16}, 1.0f);
  auto [a, ok] = pgd_step_quality(xo, g, xo, 0.001, 34.0);
  CHECK(ok);
  CHECK(psnr(a, xo) >= 34.0);
  auto [b2, ok2] = pgd_step_quality(xo, g, xo, 0.05, 34.0);
  CHECK_FALSE(ok2);
  CHECK((b2.array() == xo.array()).all());
}

TEST_CASE("stage 2 returns x_w1 unchanged when it is already below the floor") {
  const ModelBundle b = small_bundle();
  const Image xo = covers(1);
  Image xw1 = xo;
  xw1.array() = (xw1.array() + 0.1f).min(1.0f);
  Rng rng(2);
  Stage2Config cfg;
  cfg.attacks = {parse_attack("jpeg")};
  const auto r = optimize_image(b, xo, random_message(30, rng), xw1, cfg, nullptr);
  CHECK(r.degenerate);
  CHECK((r.image.array() == xw1.array()).all());
}

TEST_CASE("stage 2 output respects the PSNR floor and logs iterates") {
  const ModelBundle b = small_bundle();
  const Image xo = covers(1);
  Rng rng(3);
  const Message m = random_message(30, rng);
  const Image xw1 = encode(b, xo, m);
  Stage2Config cfg;
  cfg.p = std::min(34.0, psnr(xw1, xo) - 0.5);
  cfg.iter_o = 4;
  cfg.attacks = {parse_attack("jpeg"), parse_attack("gaussian_blur")};
  const auto r = optimize_image(b, xo, m, xw1, cfg, nullptr);
  CHECK_FALSE(r.degenerate);
  CHECK(psnr(r.image, xo) >= cfg.p);
  CHECK(!r.log.empty());
  CHECK(r.log.front().attack_ba.size() == 2);
  cfg.attacks = {parse_attack("regeneration:proxy=A")};
  CHECK_THROWS_AS(optimize_image(b, xo, m, xw1, cfg, nullptr), ContractError);
  cfg.attacks = {parse_attack("combined")};
  CHECK_THROWS_AS(optimize_image(b, xo, m, xw1, cfg, nullptr), ContractError);
}
