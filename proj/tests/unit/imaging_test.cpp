#include <doctest.h>

#include <cmath>

#include "advmark/imaging.hpp"

using namespace advmark;

namespace {

Image random_image(int n, int h, int w, std::uint64_t seed, float lo = 0.f, float hi = 1.f) {
  Rng rng(seed);
  Image x(Shape{n, 3, h, w});
  for (Eigen::Index i = 0; i < x.array().size(); ++i) x.array()[i] = static_cast<float>(rng.uniform(lo, hi));
  return x;
}

// Direct transcription of the windowed SSIM definition, no shared code.
double ssim_oracle(const Image& a, const Image& b) {
  const int r = 5;
  double wk[11];
  double wsum = 0;
  for (int i = -r; i <= r; ++i) wsum += wk[i + r] = std::exp(-(i * i) / (2 * 1.5 * 1.5));
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0;
  for (int n = 0; n < a.n(); ++n) {
    auto luma = [&](const Image& x, int y, int xx) {
      return 0.299 * x(n, 0, y, xx) + 0.587 * x(n, 1, y, xx) + 0.114 * x(n, 2, y, xx);
    };
    double acc = 0;
    int cnt = 0;
    for (int y = r; y < a.h() - r; ++y) {
      for (int x = r; x < a.w() - r; ++x) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx) {
            const double wgt = wk[dy + r] * wk[dx + r] / (wsum * wsum);
            const double va = luma(a, y + dy, x + dx), vb = luma(b, y + dy, x + dx);
            ma += wgt * va;
            mb += wgt * vb;
            saa += wgt * va * va;
            sbb += wgt * vb * vb;
            sab += wgt * va * vb;
          }
        const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
        acc += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++cnt;
      }
    }
    total += acc / cnt;
  }
  return total / a.n();
}

}  // namespace

TEST_CASE("psnr matches the mse definition") {
  const Image a = random_image(2, 16, 16, 1);
  const Image b = random_image(2, 16, 16, 2);
  double mse = 0;
  for (Eigen::Index i = 0; i < a.array().size(); ++i) mse += std::pow(double(a.array()[i]) - b.array()[i], 2);
  mse /= static_cast<double>(a.array().size());
  CHECK(psnr(a, b) == doctest::Approx(10 * std::log10(1 / mse)).epsilon(1e-6));
}

TEST_CASE("psnr of identical images is the cap") {
  const Image a = random_image(1, 8, 8, 3);
  CHECK(psnr(a, a) == kPsnrCap);
  CHECK(psnr(a, a, 60.0) == 60.0);
}

TEST_CASE("psnr of a uniform offset") {
  const Image a(Shape{1, 3, 8, 8}, 0.25f);
  const Image b(Shape{1, 3, 8, 8}, 0.35f);
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-5));
}

TEST_CASE("psnr is symmetric") {
  const Image a = random_image(1, 8, 8, 4), b = random_image(1, 8, 8, 5);
  CHECK(psnr(a, b) == psnr(b, a));
}

TEST_CASE("ssim identities and oracle") {
  const Image a = random_image(1, 24, 24, 6);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-9));
  Image b = a;
  Rng rng(9);
  for (Eigen::Index i = 0; i < b.array().size(); ++i)
    b.array()[i] = std::clamp(b.array()[i] + static_cast<float>(0.1 * rng.normal()), 0.f, 1.f);
  const double s = ssim(a, b);
  CHECK(s < 1.0);
  CHECK(s == doctest::Approx(ssim_oracle(a, b)).epsilon(1e-6));
  CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
}

TEST_CASE("bit accuracy and rounding") {
  Message a{{1, 0, 1, 1}}, b{{1, 1, 1, 0}};
  CHECK(bit_accuracy(a, a) == 1.0);
  CHECK(bit_accuracy(a, b) == 0.5);
  CHECK(bit_accuracy(a, complement(a)) == 0.0);
  CHECK_THROWS_AS(bit_accuracy(a, Message{{1, 0}}), DimensionError);
  MessageLogits y(5);
  y << -0.3, 0.49, 0.5, 0.9, 7.0;
  CHECK(round_message(y) == Message{{0, 0, 1, 1, 1}});
}

TEST_CASE("validate_image contract") {
  CHECK_NOTHROW(validate_image(random_image(1, 8, 8, 7)));
  CHECK_THROWS_AS(validate_image(Image(Shape{1, 3, 10, 8})), DimensionError);
  CHECK_THROWS_AS(validate_image(Image(Shape{1, 1, 8, 8})), DimensionError);
  Image bad = random_image(1, 8, 8, 8);
  bad(0, 1, 2, 3) = 1.5f;
  CHECK_THROWS_AS(validate_image(bad), ParameterError);
}

TEST_CASE("rmse oracle") {
  const Image a(Shape{1, 3, 8, 8}, 0.5f), b(Shape{1, 3, 8, 8}, 0.75f);
  CHECK(rmse(a, b) == doctest::Approx(0.25));
}
