#include "advmark/imaging.hpp"

#include <cmath>
#include <string>

namespace advmark {

void validate_image(const Image& x) {
  if (x.c() != 3) throw DimensionError("image must have 3 channels, got " + x.shape().str());
  if (x.h() <= 0 || x.w() <= 0 || x.h() % 8 != 0 || x.w() % 8 != 0) {
    throw DimensionError("image H and W must be positive multiples of 8, got " + x.shape().str());
  }
  if ((x.array() < 0.0f).any() || (x.array() > 1.0f).any() || !x.array().isFinite().all()) {
    throw ParameterError("image values must lie in [0,1]");
  }
}

template <class S>
double psnr(const Tensor<S>& a, const Tensor<S>& b, double cap) {
  require_same_shape(a.shape(), b.shape(), "psnr");
  const auto diff = a.array().template cast<double>() - b.array().template cast<double>();
  const double mse = diff.square().mean();
  if (mse <= 0.0) return cap;
  return std::min(cap, 10.0 * std::log10(1.0 / mse));
}

namespace {

constexpr int kWin = 11;
constexpr double kSigma = 1.5;

Eigen::ArrayXd gaussian_window() {
  Eigen::ArrayXd g(kWin);
  for (int i = 0; i < kWin; ++i) {
    const double d = i - kWin / 2;
    g(i) = std::exp(-d * d / (2 * kSigma * kSigma));
  }
  return g / g.sum();
}

// Separable valid-mode filtering of an H×W plane.
Eigen::ArrayXXd filter_valid(const Eigen::ArrayXXd& p, const Eigen::ArrayXd& g) {
  const Eigen::Index h = p.rows() - kWin + 1;
  const Eigen::Index w = p.cols() - kWin + 1;
  Eigen::ArrayXXd rows(p.rows(), w);
  for (Eigen::Index x = 0; x < w; ++x) rows.col(x) = (p.middleCols(x, kWin).rowwise() * g.transpose()).rowwise().sum();
  Eigen::ArrayXXd out(h, w);
  for (Eigen::Index y = 0; y < h; ++y) out.row(y) = (rows.middleRows(y, kWin).colwise() * g).colwise().sum();
  return out;
}

template <class S>
Eigen::ArrayXXd luminance(const Tensor<S>& t, int n) {
  Eigen::ArrayXXd y(t.h(), t.w());
  for (int r = 0; r < t.h(); ++r)
    for (int c = 0; c < t.w(); ++c)
      y(r, c) = 0.299 * t(n, 0, r, c) + 0.587 * t(n, 1, r, c) + 0.114 * t(n, 2, r, c);
  return y;
}

}  // namespace

template <class S>
double ssim(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape(a.shape(), b.shape(), "ssim");
  if (a.c() != 3) throw DimensionError("ssim needs 3-channel images");
  if (a.h() < kWin || a.w() < kWin) throw DimensionError("ssim needs H,W >= 11, got " + a.shape().str());
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  const Eigen::ArrayXd g = gaussian_window();
  double total = 0.0;
  for (int n = 0; n < a.n(); ++n) {
    const Eigen::ArrayXXd x = luminance(a, n);
    const Eigen::ArrayXXd y = luminance(b, n);
    const Eigen::ArrayXXd mx = filter_valid(x, g);
    const Eigen::ArrayXXd my = filter_valid(y, g);
    const Eigen::ArrayXXd sxx = filter_valid(x * x, g) - mx * mx;
    const Eigen::ArrayXXd syy = filter_valid(y * y, g) - my * my;
    const Eigen::ArrayXXd sxy = filter_valid(x * y, g) - mx * my;
    const Eigen::ArrayXXd map =
        ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
    total += map.mean();
  }
  return total / a.n();
}

double bit_accuracy(const Message& a, const Message& b) {
  if (a.size() != b.size()) {
    throw DimensionError("message lengths differ: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  if (a.size() == 0) throw DimensionError("empty message");
  int match = 0;
  for (int i = 0; i < a.size(); ++i) match += a.bits[i] == b.bits[i];
  return static_cast<double>(match) / a.size();
}

Message round_message(const MessageLogits& y) {
  Message m;
  m.bits.resize(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (!std::isfinite(y(i))) throw NumericError("non-finite message logit at index " + std::to_string(i));
    m.bits[i] = y(i) >= 0.5 ? 1 : 0;
  }
  return m;
}

template <class S>
Tensor<S> clamp_image(const Tensor<S>& x) {
  return Tensor<S>(x.shape(), x.array().max(S(0)).min(S(1)));
}

Message random_message(int n, Rng& rng) {
  Message m;
  m.bits.resize(n);
  for (auto& b : m.bits) b = rng.bernoulli(0.5) ? 1 : 0;
  return m;
}

Message complement(const Message& m) {
  Message c = m;
  for (auto& b : c.bits) b = 1 - b;
  return c;
}

Tensor<float> message_tensor(const std::vector<Message>& msgs) {
  if (msgs.empty()) throw DimensionError("no messages");
  const int n = msgs.front().size();
  Tensor<float> t(Shape{static_cast<int>(msgs.size()), n, 1, 1});
  for (std::size_t i = 0; i < msgs.size(); ++i) {
    if (msgs[i].size() != n) throw DimensionError("messages of differing length");
    for (int j = 0; j < n; ++j) t.array()(i * n + j) = msgs[i].bits[j];
  }
  return t;
}

MessageLogits logits_row(const Tensor<float>& logits, int i) {
  const int n = logits.c();
  return logits.array().segment(static_cast<Eigen::Index>(i) * n, n).cast<double>().matrix();
}

double rmse(const Image& a, const Image& b) {
  require_same_shape(a.shape(), b.shape(), "rmse");
  return std::sqrt((a.array().cast<double>() - b.array().cast<double>()).square().mean());
}

template double psnr<float>(const Tensor<float>&, const Tensor<float>&, double);
template double psnr<double>(const Tensor<double>&, const Tensor<double>&, double);
template double ssim<float>(const Tensor<float>&, const Tensor<float>&);
template double ssim<double>(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> clamp_image<float>(const Tensor<float>&);
template Tensor<double> clamp_image<double>(const Tensor<double>&);

}  // namespace advmark
