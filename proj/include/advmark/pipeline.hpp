#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "advmark/config.hpp"
#include "advmark/harness.hpp"

namespace advmark {

/// Root for run directories when no explicit path is given.
inline constexpr const char* kRunRootEnv = "ADVMARK_RUN_ROOT";

/// `name` under $ADVMARK_RUN_ROOT (or ./runs when unset); absolute paths and
/// paths with a directory component are used as given.
std::filesystem::path run_path(const std::string& name);

using Progress = std::function<void(const std::string&)>;

/// A run directory with its resolved configuration. The configuration stored
/// in the directory acts as the config file when none is given explicitly.
class Run {
 public:
  Run(std::filesystem::path dir, const std::string& config_path, const std::vector<std::string>& overrides,
      std::optional<std::uint64_t> seed, Progress progress = {});

  const std::filesystem::path& dir() const { return dir_; }
  const RunConfig& config() const { return config_; }
  std::string run_id() const;

  std::filesystem::path file(const std::string& name) const { return dir_ / name; }
  bool has(const std::string& name) const { return std::filesystem::exists(file(name)); }

  /// Writes config.json and manifest.json (config, seed, checkpoint hashes).
  void write_manifest() const;

  void gen_corpus() const;
  Corpus corpus() const;
  CorpusSplit split() const;

  void pretrain() const;
  void finetune_stage1() const;
  void train_jat() const;
  void train_eat() const;
  /// Trains the proxy when its checkpoint is missing.
  DenoiserBundle proxy(char which) const;
  void optimize_stage2() const;
  void evaluate() const;
  void verify_theorem() const;
  ReportFiles report() const;

  ModelBundle model(const std::string& tag) const;
  /// Held-out covers, their messages and the watermarked images of a tag:
  /// stage0/stage1/jat/eat embed with their own encoder, advmark is the
  /// stage-2 output.
  struct Embedded {
    Image covers;
    Image watermarked;
    std::vector<Message> msgs;
    std::string decoder_tag;
  };
  Embedded embedded(const std::string& tag) const;
  /// Model tags whose artefacts exist, in pipeline order.
  std::vector<std::string> available_tags() const;

  /// Stage-2 inputs and outputs: (x_w1, x_w2) over the held-out split.
  std::pair<Image, Image> stage2_images() const;

 private:
  void log(const std::string& msg) const;
  void save_stage1_like(const std::string& tag, const Stage1Result& result) const;

  std::filesystem::path dir_;
  RunConfig config_;
  Progress progress_;
};

void save_images(const Image& x, const std::filesystem::path& path);
Image load_images(const std::filesystem::path& path);

/// Per-epoch means of a stage-1 style training log.
void write_stage1_log(const std::vector<Stage1BatchLog>& log, const std::filesystem::path& path);

void write_stage2_log(const std::vector<std::vector<Stage2Iterate>>& logs, const std::vector<std::string>& attack_ids,
                      const std::filesystem::path& path);

}  // namespace advmark
