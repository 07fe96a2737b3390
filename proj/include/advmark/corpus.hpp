#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "advmark/imaging.hpp"

namespace advmark {

/// 8-bit RGB PNG. Writes the first sample of x.
void write_png(const Image& x, const std::filesystem::path& path);
Image read_png(const std::filesystem::path& path);
/// PNG or JPEG by extension; throws IoError on unreadable files.
Image read_image(const std::filesystem::path& path);

/// Bilinear resize of the shorter side to fit, then centre crop to h×w.
Image resize_center_crop(const Image& x, int h, int w);

struct CorpusConfig {
  int count = 64;
  int height = 64;
  int width = 64;
  std::uint64_t seed = 7;
  double holdout = 0.25;
  /// Optional folder of user images ingested ahead of the synthetic ones.
  std::string source_dir;
};

/// Batch of images (N,3,H,W) in corpus order.
struct Corpus {
  Image images;
  int size() const { return images.n(); }
  Image at(int i) const { return images.samples(i, 1); }
};

/// Deterministic synthetic images (gradients, Gabor textures, smoothed noise),
/// quantised to 8 bits so the PNG round trip is lossless.
Image synthetic_image(int h, int w, std::uint64_t seed);
Corpus generate_corpus(const CorpusConfig& config);

/// Fraction of `bins` equal-width [0,1] bins hit by at least one pixel value.
double histogram_coverage(const Image& images, int bins = 32);

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
/// Loads every *.png in name order.
Corpus load_corpus(const std::filesystem::path& dir);

/// Leading images train, trailing ceil(holdout·N) images are held out.
struct CorpusSplit {
  Corpus train;
  Corpus heldout;
};
CorpusSplit split_corpus(const Corpus& corpus, double holdout);

}  // namespace advmark
