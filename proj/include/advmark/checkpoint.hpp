#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "advmark/models.hpp"

namespace advmark {

inline constexpr char kCheckpointMagic[8] = {'A', 'D', 'V', 'M', 'K', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Generic payload: a kind tag, scalar metadata and named float arrays.
struct CheckpointData {
  std::string kind;
  std::map<std::string, double> meta;
  ParamMap arrays;
};

void write_checkpoint(const CheckpointData& data, const std::filesystem::path& path);
/// Throws FormatError on bad magic or truncation, VersionError on a version
/// mismatch and IoError when the file cannot be opened.
CheckpointData read_checkpoint(const std::filesystem::path& path);

std::string serialize_checkpoint(const CheckpointData& data);
CheckpointData deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_checkpoint(const std::filesystem::path& path);

/// FNV-1a 64 of the file contents, as 16 hex digits.
std::string file_hash(const std::filesystem::path& path);
std::string bytes_hash(const std::string& bytes);

}  // namespace advmark
