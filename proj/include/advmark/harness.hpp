#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "advmark/adversarial.hpp"
#include "advmark/models.hpp"
#include "advmark/perceptual.hpp"
#include "advmark/regeneration.hpp"
#include "advmark/theorem.hpp"

namespace advmark {

struct ExperimentRecord {
  std::string run_id;
  std::string model_tag;
  std::string attack_id;
  double bit_accuracy = 0;
  double psnr = 0;
  double ssim = 0;
  double perceptual = 0;
  long long wall_ms = 0;
  std::uint64_t seed = 0;
};

inline constexpr const char* kRecordHeader = "run_id,model_tag,attack_id,bit_accuracy,psnr,ssim,perceptual,wall_ms,seed";

void write_records(const std::vector<ExperimentRecord>& records, const std::filesystem::path& path);
std::vector<ExperimentRecord> read_records(const std::filesystem::path& path);
std::string records_csv(const std::vector<ExperimentRecord>& records);

/// Models and proxies an attack may need. Null members are only an error when
/// an attack asks for them.
struct AttackContext {
  const ModelBundle* bundle = nullptr;
  const DenoiserBundle* proxy_a = nullptr;
  const DenoiserBundle* proxy_b = nullptr;
  const SurrogateBundle* surrogate = nullptr;
};

/// Applies one registered attack to a batch. `covers` feeds dropout; `msgs`
/// feeds the defender attack and the Black-Q evasion test.
Image apply_attack(const AttackSpec& spec, const Image& xw, const std::vector<Message>& msgs, const Image& covers,
                   const AttackContext& ctx, std::uint64_t seed);
/// Sequential composition of a '+'-separated chain.
Image apply_attack_chain(const std::vector<AttackSpec>& chain, const Image& xw, const std::vector<Message>& msgs,
                         const Image& covers, const AttackContext& ctx, std::uint64_t seed);

/// Message for corpus image `index` under the run seed.
Message message_for(std::uint64_t seed, int index, int n);
std::vector<Message> messages_for(std::uint64_t seed, int first_index, int count, int n);

struct EvaluationInput {
  std::string run_id;
  std::string model_tag;
  /// Decoder used for every attack and for white-box gradients.
  const ModelBundle* bundle = nullptr;
  Image covers;
  Image watermarked;
  std::vector<Message> msgs;
  std::uint64_t seed = 0;
};

/// One record per (image, attack). Quality columns compare the attacked image
/// with the watermarked one, except `identity`, which compares the watermarked
/// image with its cover. Black-box attacks only run on the first
/// `black_box_images` images.
std::vector<ExperimentRecord> run_evaluation(const EvaluationInput& input, const std::vector<std::string>& attacks,
                                             const AttackContext& ctx, int black_box_images);

/// Per-image theorem reports.
std::vector<TheoremReport> verify_theorem_set(const ModelBundle& bundle, const Image& xw1, const Image& xw2,
                                              const RadiusConfig& config);
void write_theorem_csv(const std::vector<TheoremReport>& reports, const std::filesystem::path& path);

/// Mean bit accuracy over records with the given tag and attack id; NaN if none.
double mean_ba(const std::vector<ExperimentRecord>& records, const std::string& tag, const std::string& attack_id);
double mean_psnr_of(const std::vector<ExperimentRecord>& records, const std::string& tag, const std::string& attack_id);

struct ReportFiles {
  std::vector<std::filesystem::path> written;
};

/// Tables (text + CSV), sweep plots and the Black-Q PSNR bar chart from
/// records.csv (and sweep.csv when present) in run_dir. Throws IoError when
/// records are missing.
ReportFiles write_report(const std::filesystem::path& run_dir);

/// Table of mean BA: one row per model tag, one column per attack id, in
/// first-appearance order.
std::string table_text(const std::vector<ExperimentRecord>& records);
std::string table_csv(const std::vector<ExperimentRecord>& records);

/// SVG line plot of BA against the swept parameter for one attack kind, one
/// series per model tag.
std::string sweep_svg(const std::vector<ExperimentRecord>& records, const std::string& kind);
/// SVG bar chart of mean attacked PSNR per model tag for Black-Q records.
std::string black_q_svg(const std::vector<ExperimentRecord>& records);

}  // namespace advmark
