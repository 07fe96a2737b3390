#pragma once

#include <cstdint>
#include <vector>

#include "advmark/rng.hpp"
#include "advmark/tensor.hpp"

namespace advmark {

/// 3×H×W intensities in [0,1], stored as a (1,3,H,W) tensor. Batches of
/// images share the same type with N > 1.
using Image = Tensor<float>;

struct Message {
  std::vector<std::uint8_t> bits;

  int size() const { return static_cast<int>(bits.size()); }
  bool operator==(const Message&) const = default;
};

/// Pre-rounding decoder output.
using MessageLogits = Eigen::VectorXd;

inline constexpr double kPsnrCap = 99.0;

/// Throws DimensionError unless the tensor is 3-channel with H,W multiples of 8,
/// and ParameterError when any value leaves [0,1].
void validate_image(const Image& x);

/// 10·log10(1/MSE) over the flattened tensors, peak 1. Values above `cap`
/// (including MSE = 0) are reported as `cap`.
template <class S>
double psnr(const Tensor<S>& a, const Tensor<S>& b, double cap = kPsnrCap);

/// Mean SSIM on BT.601 luminance, 11×11 Gaussian window (σ=1.5), valid region,
/// C1=(0.01)², C2=(0.03)². Batches are averaged.
template <class S>
double ssim(const Tensor<S>& a, const Tensor<S>& b);

double bit_accuracy(const Message& a, const Message& b);

/// Nearest-integer rounding clamped to {0,1}; 0.5 rounds up.
Message round_message(const MessageLogits& y);

template <class S>
Tensor<S> clamp_image(const Tensor<S>& x);

Message random_message(int n, Rng& rng);
Message complement(const Message& m);

/// (N,n,1,1) tensor of 0/1 bits.
Tensor<float> message_tensor(const std::vector<Message>& msgs);

/// Row i of a (N,n,1,1) logits tensor.
MessageLogits logits_row(const Tensor<float>& logits, int i);

double rmse(const Image& a, const Image& b);

}  // namespace advmark
