#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "advmark/autograd.hpp"
#include "advmark/imaging.hpp"

namespace advmark {

enum class AttackKind {
  identity,
  jpeg,
  jpeg_real,
  gaussian_noise,
  gaussian_blur,
  brightness,
  combined,
  crop,
  resize,
  dropout,
  salt_pepper,
  rotation,
  hue,
  regeneration,
  wevade,
  defender,
  black_q,
  black_s,
};

std::string to_string(AttackKind k);
std::optional<AttackKind> attack_kind_from_string(const std::string& s);

/// One attack with its parameters. `weight` is the optimisation weight used
/// when the attack takes part in the stage-2 attack loss.
struct AttackSpec {
  AttackKind kind = AttackKind::identity;
  std::map<std::string, double> params;
  double weight = 1.0;

  bool differentiable() const;
  bool geometric() const;
  bool adversarial() const;
  /// Attacks never allowed in a training or optimisation loop.
  bool unknown() const;
  double get(const std::string& key) const;
  /// Canonical id, e.g. "jpeg:Q=50".
  std::string id() const;
};

/// Parses "kind" or "kind:key=value,key=value". Missing keys take their
/// defaults; unknown kinds or keys throw ParameterError.
AttackSpec parse_attack(const std::string& text);

/// Parses "a+b+c" into a sequential chain.
std::vector<AttackSpec> parse_attack_chain(const std::string& text);

/// Default parameters for every registered kind.
const std::map<std::string, double>& attack_defaults(AttackKind k);

/// The K=4 training distortions in composition order with their default
/// stage-2 weights: JPEG 1.0, the rest 0.1.
std::vector<AttackSpec> default_training_distortions();

// Differentiable distortions on (N,3,H,W) batches.

/// JPEG approximation: YCbCr, 8×8 DCT, IJG-scaled standard tables,
/// straight-through rounding of the quantised coefficients. With
/// `round_coefficients=false` the quantiser is the identity (smooth path).
template <class S>
Var<S> jpeg_approx(const Var<S>& x, double quality, bool round_coefficients = true);

template <class S>
Var<S> gaussian_noise(const Var<S>& x, double sigma, std::uint64_t seed);

/// Kernel size 2·ceil(3σ)+1, reflect padding. σ=0 is the identity.
template <class S>
Var<S> gaussian_blur(const Var<S>& x, double sigma);

template <class S>
Var<S> brightness(const Var<S>& x, double factor);

/// Sequential composition in list order. Throws ContractError on a
/// non-differentiable kind.
template <class S>
Var<S> combined_distortion(const Var<S>& x, const std::vector<AttackSpec>& specs, std::uint64_t seed);

/// Dispatches one differentiable, non-learned distortion (not regeneration).
template <class S>
Var<S> apply_distortion(const Var<S>& x, const AttackSpec& spec, std::uint64_t seed);

/// Expands `combined` into its four stages in JPEG→noise→blur→brightness order.
std::vector<AttackSpec> expand_combined(const AttackSpec& spec);

/// Evaluation-only transforms. `cover` is required by dropout.
Image apply_geometric(const Image& x, const AttackSpec& spec, std::uint64_t seed, const Image* cover = nullptr);

/// IJG-scaled quantisation table (row-major 8×8) for quality 1..100.
std::array<int, 64> jpeg_quant_table(bool chroma, int quality);

/// Round trip through libjpeg at `quality`. `subsample` selects 4:2:0 chroma.
Image jpeg_codec(const Image& x, int quality, bool subsample = true);

/// JPEG file bytes to a (1,3,H,W) image, and the first sample of x to bytes.
Image decode_jpeg(const std::vector<unsigned char>& bytes);
std::vector<unsigned char> encode_jpeg(const Image& x, int quality);

}  // namespace advmark
