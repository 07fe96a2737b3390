#pragma once

#include <cstdint>
#include <filesystem>

#include "advmark/corpus.hpp"
#include "advmark/nn.hpp"

namespace advmark {

struct DenoiserConfig {
  int width = 16;
  int epochs = 120;
  int batch_size = 16;
  double lr = 2e-3;
  /// Noise level of the forward process, also the training noise.
  double sigma_t = 0.1;
  int steps = 1;
  std::uint64_t seed = 101;
  /// Convergence floors measured on the held-out split.
  double min_denoise_psnr = 26.0;
};

/// Small U-shaped residual denoiser. Untrained bundles are rejected by regenerate.
struct DenoiserBundle {
  ParamMap params;
  std::uint64_t train_seed = 0;
  double sigma_t = 0.1;
  int steps = 1;
  int width = 16;
  bool trained = false;
  double heldout_psnr = 0;
};

DenoiserBundle init_denoiser(int width, std::uint64_t seed);

template <class S>
Var<S> denoise(const DenoiserBundle& d, const Var<S>& x);

/// Trains a fresh denoiser; throws TrainingError below `min_denoise_psnr`.
DenoiserBundle train_denoiser(const Corpus& train, const Corpus& heldout, const DenoiserConfig& config);

/// T repetitions of (add σ_t noise, denoise, clamp), differentiable in x.
template <class S>
Var<S> regenerate(const Var<S>& x, const DenoiserBundle& d, std::uint64_t seed);
Image regenerate(const Image& x, const DenoiserBundle& d, std::uint64_t seed);

void save_denoiser(const DenoiserBundle& d, const std::filesystem::path& path);
DenoiserBundle load_denoiser(const std::filesystem::path& path);

}  // namespace advmark
