#include <doctest.h>

#include <filesystem>
#include <cstring>
#include <fstream>

#include "advmark/checkpoint.hpp"
#include "advmark/regeneration.hpp"

using namespace advmark;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "advmark_unit";
  fs::create_directories(dir);
  return dir / name;
}

ModelBundle bundle() {
  ModelConfig c;
  c.arch.height = c.arch.width = 32;
  c.seed = 5;
  return init_models(c);
}

bool bit_equal(const ParamMap& a, const ParamMap& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [k, v] : a) {
    const auto it = b.find(k);
    if (it == b.end() || !(it->second.shape() == v.shape())) return false;
    if (std::memcmp(v.data(), it->second.data(), v.numel() * sizeof(float)) != 0) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("model checkpoints round-trip bit-exactly") {
  const ModelBundle b = bundle();
  const auto path = temp_file("model.ckpt");
  save_checkpoint(b, path);
  const ModelBundle r = load_checkpoint(path);
  CHECK(r.arch == b.arch);
  CHECK(bit_equal(r.encoder, b.encoder));
  CHECK(bit_equal(r.decoder, b.decoder));
  const auto path2 = temp_file("model2.ckpt");
  save_checkpoint(r, path2);
  CHECK(file_hash(path) == file_hash(path2));
}

TEST_CASE("generic payload serialisation") {
  CheckpointData d;
  d.kind = "images";
  d.meta["x"] = 0.1;
  d.arrays["a"] = Tensor<float>(Shape{1, 2, 3, 4}, 0.25f);
  const auto bytes = serialize_checkpoint(d);
  CHECK(bytes.substr(0, 8) == std::string(kCheckpointMagic, 8));
  const auto r = deserialize_checkpoint(bytes);
  CHECK(r.kind == "images");
  CHECK(r.meta.at("x") == 0.1);
  CHECK(bit_equal(r.arrays, d.arrays));
}

TEST_CASE("corrupt checkpoints are rejected") {
  CheckpointData d;
  d.kind = "t";
  d.arrays["a"] = Tensor<float>(Shape{1, 1, 2, 2}, 1.f);
  const std::string good = serialize_checkpoint(d);
  std::string bad_magic = good;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(deserialize_checkpoint(bad_magic), FormatError);
  std::string bad_version = good;
  bad_version[8] = 9;
  CHECK_THROWS_AS(deserialize_checkpoint(bad_version), VersionError);
  CHECK_THROWS_AS(deserialize_checkpoint(good.substr(0, good.size() - 3)), FormatError);
  CHECK_THROWS_AS(deserialize_checkpoint(good + "z"), FormatError);
  CHECK_THROWS_AS(read_checkpoint(temp_file("does_not_exist.ckpt")), IoError);
}

TEST_CASE("a denoiser file is not a model") {
  DenoiserBundle den = init_denoiser(8, 3);
  den.trained = true;
  const auto path = temp_file("den.ckpt");
  save_denoiser(den, path);
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  const DenoiserBundle r = load_denoiser(path);
  CHECK(r.trained);
  CHECK(bit_equal(r.params, den.params));
}

TEST_CASE("hashes are stable FNV-1a") {
  CHECK(bytes_hash("") == "cbf29ce484222325");
  CHECK(bytes_hash("a") == "af63dc4c8601ec8c");
}
