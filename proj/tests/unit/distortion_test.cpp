#include <doctest.h>

#include <cmath>

#include "advmark/corpus.hpp"
#include "advmark/distortion.hpp"
#include "advmark/regeneration.hpp"
#include "gradcheck.hpp"

using namespace advmark;
using advmark::testing::check_input_gradient;
using advmark::testing::weighted_sum;

namespace {

Tensor<double> interior_image(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<double> x(Shape{1, 3, h, w});
  for (Eigen::Index i = 0; i < x.array().size(); ++i) x.array()[i] = rng.uniform(0.2, 0.8);
  return x;
}

}  // namespace

TEST_CASE("attack ids parse and print canonically") {
  CHECK(parse_attack("jpeg:Q=50").id() == "jpeg:Q=50");
  CHECK(parse_attack("jpeg").id() == "jpeg:Q=50");
  CHECK(parse_attack("wevade:r=0.078,steps=50").get("steps") == 50);
  CHECK(parse_attack("regeneration:proxy=B").id() == "regeneration:proxy=B");
  CHECK(parse_attack("regeneration:proxy=B").unknown());
  CHECK_FALSE(parse_attack("regeneration:proxy=A").unknown());
  CHECK(parse_attack("combined").unknown());
  CHECK(parse_attack(parse_attack("gaussian_noise:sigma=0.05").id()).get("sigma") == 0.05);
  CHECK_THROWS_AS(parse_attack("nope"), ParameterError);
  CHECK_THROWS_AS(parse_attack("jpeg:q=50"), ParameterError);
  CHECK_THROWS_AS(parse_attack("jpeg:Q=abc"), ParameterError);
  CHECK(parse_attack_chain("jpeg+gaussian_blur:sigma=1").size() == 2);
}

TEST_CASE("quantisation table follows the IJG scaling") {
  const auto q50 = jpeg_quant_table(false, 50);
  CHECK(q50[0] == 16);
  CHECK(q50[63] == 99);
  const auto q100 = jpeg_quant_table(false, 100);
  for (int v : q100) CHECK(v == 1);
  const auto q10 = jpeg_quant_table(true, 10);
  CHECK(q10[0] == std::clamp((17 * 500 + 50) / 100, 1, 255));
  CHECK_THROWS_AS(jpeg_quant_table(false, 0), ParameterError);
}

TEST_CASE("differentiable JPEG tracks libjpeg without chroma subsampling") {
  const Image x = generate_corpus(CorpusConfig{4, 64, 64, 3, 0.25, ""}).images;
  for (int q : {50, 75, 90}) {
    const Image approx = jpeg_approx(Var<float>(x), q).value();
    const Image real = jpeg_codec(x, q, false);
    CHECK(psnr(approx, real) >= 30.0);
  }
}

TEST_CASE("gaussian noise has the requested spread") {
  const Tensor<double> x(Shape{1, 3, 64, 64}, 0.5);
  const double sigma = 0.1;
  const auto y = gaussian_noise(Var<double>(x), sigma, 17).value();
  const double sd = std::sqrt((y.array() - x.array()).square().mean());
  CHECK(std::abs(sd - sigma) / sigma < 0.05);
  const auto y2 = gaussian_noise(Var<double>(x), sigma, 17).value();
  CHECK((y.array() == y2.array()).all());
}

TEST_CASE("blur and brightness identities") {
  const Tensor<double> x = interior_image(16, 16, 4);
  CHECK((gaussian_blur(Var<double>(x), 0.0).value().array() == x.array()).all());
  const auto b = brightness(Var<double>(x), 1.0).value();
  CHECK((b.array() - x.array()).abs().maxCoeff() < 1e-12);
  const Tensor<double> flat(Shape{1, 3, 16, 16}, 0.4);
  const auto bl = gaussian_blur(Var<double>(flat), 1.5).value();
  CHECK((bl.array() - 0.4).abs().maxCoeff() < 1e-9);
}

TEST_CASE("combined attack is the ordered composition") {
  const Tensor<double> x = interior_image(16, 16, 5);
  const auto spec = parse_attack("combined");
  const auto stages = expand_combined(spec);
  REQUIRE(stages.size() == 4);
  CHECK(stages[0].kind == AttackKind::jpeg);
  CHECK(stages[3].kind == AttackKind::brightness);
  const auto a = combined_distortion(Var<double>(x), stages, 9).value();
  CHECK(a.array().allFinite());
}

TEST_CASE("finite differences agree with every differentiable distortion") {
  const Tensor<double> x = interior_image(16, 16, 11);
  const std::vector<std::string> ids = {"gaussian_noise:sigma=0.05", "gaussian_blur:sigma=1", "brightness:a=1.2",
                                        "identity"};
  for (const auto& id : ids) {
    const auto spec = parse_attack(id);
    const auto f = weighted_sum([spec](const Var<double>& v) { return apply_distortion(v, spec, 3); }, x.shape(), 1);
    const auto r = check_input_gradient(f, x, 2);
    INFO(id);
    CHECK(r.max_rel_error < 1e-3);
  }
  SUBCASE("jpeg smooth path") {
    const auto f = weighted_sum([](const Var<double>& v) { return jpeg_approx(v, 50.0, false); }, x.shape(), 1);
    CHECK(check_input_gradient(f, x, 3).max_rel_error < 1e-3);
  }
  SUBCASE("straight-through rounding has an identity backward") {
    Var<double> a(x, true);
    backward(sum(round_ste(a * 255.0)));
    CHECK((a.grad().array() - 255.0).abs().maxCoeff() < 1e-12);
  }
  SUBCASE("jpeg straight-through backward equals the smooth backward away from the clamp") {
    Tensor<double> smooth = generate_corpus(CorpusConfig{1, 16, 16, 2, 0.25, ""}).images.cast<double>();
    smooth.array() = 0.3 + 0.4 * smooth.array();
    const auto f_ste = weighted_sum([](const Var<double>& v) { return jpeg_approx(v, 50.0, true); }, x.shape(), 1);
    const auto f_smooth = weighted_sum([](const Var<double>& v) { return jpeg_approx(v, 50.0, false); }, x.shape(), 1);
    Var<double> a(smooth, true), b(smooth, true);
    backward(f_ste(a));
    backward(f_smooth(b));
    CHECK((a.grad().array() - b.grad().array()).abs().maxCoeff() < 1e-9);
  }
  SUBCASE("combined smooth path") {
    const auto stages = expand_combined(parse_attack("combined:noise=0.05,blur=1,a=1.2"));
    const auto f = weighted_sum(
        [stages](const Var<double>& v) {
          Var<double> y = jpeg_approx(v, stages[0].get("Q"), false);
          for (std::size_t k = 1; k < stages.size(); ++k) y = apply_distortion(y, stages[k], 5 + k);
          return y;
        },
        x.shape(), 1);
    CHECK(check_input_gradient(f, x, 4).max_rel_error < 1e-3);
  }
  SUBCASE("regeneration") {
    DenoiserBundle d = init_denoiser(8, 12);
    d.trained = true;
    const auto f = weighted_sum([&d](const Var<double>& v) { return regenerate(v, d, 6); }, x.shape(), 1);
    CHECK(check_input_gradient(f, x, 5).max_rel_error < 1e-3);
  }
}

TEST_CASE("geometric attacks keep shape and range") {
  const Image x = generate_corpus(CorpusConfig{2, 64, 64, 8, 0.25, ""}).images;
  for (const char* id : {"crop", "resize", "dropout", "salt_pepper", "rotation", "hue"}) {
    const auto spec = parse_attack(id);
    const Image cover = x;
    const Image y = apply_geometric(x, spec, 1, &cover);
    INFO(id);
    CHECK(y.shape() == x.shape());
    CHECK(y.array().minCoeff() >= 0.f);
    CHECK(y.array().maxCoeff() <= 1.f);
  }
  CHECK_THROWS_AS(apply_geometric(x, parse_attack("jpeg"), 1), ParameterError);
}

TEST_CASE("regeneration refuses an untrained proxy") {
  const DenoiserBundle d = init_denoiser(8, 1);
  CHECK_THROWS_AS(regenerate(Image(Shape{1, 3, 16, 16}, 0.5f), d, 1), StateError);
}
