#pragma once

#include <vector>

#include "advmark/imaging.hpp"
#include "advmark/rng.hpp"

namespace advmark {

/// Samples of a batch tensor picked by index.
Image gather(const Image& images, const std::vector<int>& idx);

/// Shuffled index batches covering [0, count); the last batch may be short.
std::vector<std::vector<int>> epoch_batches(int count, int batch_size, Rng& rng);

/// Random horizontal/vertical flips per sample.
Image random_flips(const Image& images, Rng& rng);

/// Mean over samples of per-image PSNR.
double mean_psnr(const Image& a, const Image& b);

}  // namespace advmark
