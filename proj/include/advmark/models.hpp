#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advmark/imaging.hpp"
#include "advmark/nn.hpp"

namespace advmark {

/// Architecture metadata persisted with every watermark checkpoint.
struct ArchMeta {
  int n = 30;            // message bits
  int height = 64;
  int width = 64;
  int enc_width = 16;    // encoder feature channels
  int dec_width = 16;    // decoder stem channels; deeper blocks use 2×
  int msg_channels = 4;  // planes produced by the message projector
  int enc_blocks = 4;
  int dec_blocks = 5;

  bool operator==(const ArchMeta&) const = default;
};

struct ModelConfig {
  ArchMeta arch;
  std::uint64_t seed = 0;
};

/// Encoder and decoder parameters. Immutable by convention: training
/// functions return new bundles.
struct ModelBundle {
  ArchMeta arch;
  ParamMap encoder;
  ParamMap decoder;
  int version = 1;
};

/// Seeded initialisation. Throws ConfigError on invalid dimensions.
ModelBundle init_models(const ModelConfig& config);

void validate_arch(const ArchMeta& arch);

/// Encoder graph over leaves cast to S. Produces clamp(x + residual) where the
/// residual comes from image features concatenated with spatial message planes.
template <class S>
class EncoderNet {
 public:
  EncoderNet(const ModelBundle& bundle, bool param_grads);
  /// images (N,3,H,W) in [0,1]; bits (N,n,1,1) in {0,1}.
  Var<S> operator()(const Var<S>& images, const Var<S>& bits) const;
  const VarMap<S>& params() const { return params_; }

 private:
  ArchMeta arch_;
  VarMap<S> params_;
};

/// Decoder graph: strided conv stack to an (H/8)×(W/8) grid, flattened into a
/// linear head of n logits.
template <class S>
class DecoderNet {
 public:
  DecoderNet(const ModelBundle& bundle, bool param_grads);
  Var<S> operator()(const Var<S>& images) const;
  const VarMap<S>& params() const { return params_; }
  const ArchMeta& arch() const { return arch_; }

 private:
  ArchMeta arch_;
  VarMap<S> params_;
};

Image encode(const ModelBundle& bundle, const Image& cover, const Message& m);
MessageLogits decode(const ModelBundle& bundle, const Image& x);

/// Batched forms: images (N,3,H,W), one message per sample.
Image encode_batch(const ModelBundle& bundle, const Image& covers, const std::vector<Message>& msgs);
/// (N,n,1,1) logits.
Tensor<float> decode_batch(const ModelBundle& bundle, const Image& x);
std::vector<Message> decode_messages(const ModelBundle& bundle, const Image& x);

/// Mean bit accuracy of decode(x) against msgs.
double mean_bit_accuracy(const ModelBundle& bundle, const Image& x, const std::vector<Message>& msgs);
std::vector<double> bit_accuracies(const ModelBundle& bundle, const Image& x, const std::vector<Message>& msgs);

std::vector<Message> random_messages(int count, int n, Rng& rng);

}  // namespace advmark
