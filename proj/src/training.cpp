#include "advmark/training.hpp"

#include <algorithm>
#include <numeric>

namespace advmark {

Image gather(const Image& images, const std::vector<int>& idx) {
  Shape s = images.shape();
  s.n = static_cast<int>(idx.size());
  Image out(s);
  const std::size_t per = s.sample_size();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= images.n()) throw DimensionError("gather index out of range");
    std::copy(images.data() + idx[i] * per, images.data() + (idx[i] + 1) * per, out.data() + i * per);
  }
  return out;
}

std::vector<std::vector<int>> epoch_batches(int count, int batch_size, Rng& rng) {
  std::vector<int> order(count);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  std::vector<std::vector<int>> out;
  for (int i = 0; i < count; i += batch_size) {
    out.emplace_back(order.begin() + i, order.begin() + std::min(count, i + batch_size));
  }
  return out;
}

Image random_flips(const Image& images, Rng& rng) {
  Image out = images;
  for (int n = 0; n < images.n(); ++n) {
    const bool fh = rng.bernoulli(0.5), fv = rng.bernoulli(0.5);
    if (!fh && !fv) continue;
    for (int c = 0; c < images.c(); ++c)
      for (int y = 0; y < images.h(); ++y)
        for (int x = 0; x < images.w(); ++x)
          out(n, c, y, x) = images(n, c, fv ? images.h() - 1 - y : y, fh ? images.w() - 1 - x : x);
  }
  return out;
}

double mean_psnr(const Image& a, const Image& b) {
  require_same_shape(a.shape(), b.shape(), "mean_psnr");
  double s = 0;
  for (int i = 0; i < a.n(); ++i) s += psnr(a.samples(i, 1), b.samples(i, 1));
  return s / a.n();
}

}  // namespace advmark
