#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "advmark/adversarial.hpp"
#include "advmark/corpus.hpp"
#include "advmark/models.hpp"
#include "advmark/pretrain.hpp"
#include "advmark/regeneration.hpp"
#include "advmark/stage1.hpp"
#include "advmark/stage2.hpp"
#include "advmark/theorem.hpp"

namespace advmark {

struct EvalConfig {
  /// Attack ids evaluated for every model tag.
  std::vector<std::string> attacks;
  /// Parameter sweeps, one id per point.
  std::vector<std::string> sweeps;
  RadiusConfig radius;
  /// Images attacked by Black-Q / Black-S per model tag (leading held-out images).
  int black_box_images = 16;
  SurrogateConfig surrogate;
};

struct RunConfig {
  std::uint64_t seed = 2024;
  CorpusConfig corpus;
  ArchMeta arch;
  PretrainConfig pretrain;
  DenoiserConfig denoiser;
  /// Denoiser seeds of the two regeneration proxies.
  std::uint64_t denoiser_seed_a = 0;
  std::uint64_t denoiser_seed_b = 0;
  Stage1Config stage1;
  Stage2Config stage2;
  EvalConfig eval;
  std::uint64_t model_seed = 0;
};

RunConfig default_config();

/// Documented defaults, then the JSON file (nested sections or dotted keys),
/// then `key=value` overrides, then the seed override. Child seeds are derived
/// from the master seed. Throws ConfigError on unknown keys (listing the valid
/// ones), type mismatches and evaluation-only attacks in training lists.
RunConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides,
                         std::optional<std::uint64_t> seed = std::nullopt);
RunConfig resolve_config_text(const std::string& json_text, const std::vector<std::string>& overrides,
                              std::optional<std::uint64_t> seed = std::nullopt);

/// Fully resolved configuration as a JSON document with one object per section.
std::string config_to_json(const RunConfig& config);
std::vector<std::string> config_keys();

}  // namespace advmark
