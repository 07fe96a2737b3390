#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "advmark/config.hpp"

using namespace advmark;

TEST_CASE("defaults resolve and derive child seeds") {
  const RunConfig c = resolve_config_text("", {});
  CHECK(c.seed == 2024);
  CHECK(c.corpus.count == 64);
  CHECK(c.stage2.p == 34.0);
  CHECK(c.corpus.seed == derive_seed(c.seed, "corpus"));
  CHECK(c.stage1.seed == derive_seed(c.seed, "stage1"));
  CHECK(c.denoiser_seed_a != c.denoiser_seed_b);
}

TEST_CASE("file overrides defaults and CLI overrides the file") {
  const std::string file = R"({"stage2": {"p": 36, "iter_o": 5}, "corpus.count": 32, "seed": 9})";
  const RunConfig f = resolve_config_text(file, {});
  CHECK(f.stage2.p == 36.0);
  CHECK(f.stage2.iter_o == 5);
  CHECK(f.corpus.count == 32);
  CHECK(f.seed == 9);
  const RunConfig cli = resolve_config_text(file, {"stage2.p=35", "corpus.count=16"}, 77);
  CHECK(cli.stage2.p == 35.0);
  CHECK(cli.stage2.iter_o == 5);
  CHECK(cli.corpus.count == 16);
  CHECK(cli.seed == 77);
  CHECK(cli.corpus.seed == derive_seed(77, "corpus"));
}

TEST_CASE("unknown keys list the valid ones") {
  try {
    resolve_config_text(R"({"stage2": {"pp": 1}})", {});
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("stage2.pp") != std::string::npos);
    CHECK(msg.find("stage2.p") != std::string::npos);
    CHECK(msg.find("stage1.lambda_i1") != std::string::npos);
  }
  CHECK_THROWS_AS(resolve_config_text("", {"nope=1"}), ConfigError);
}

TEST_CASE("type mismatches and bad documents are config errors") {
  CHECK_THROWS_AS(resolve_config_text(R"({"corpus": {"count": "many"}})", {}), ConfigError);
  CHECK_THROWS_AS(resolve_config_text("{not json", {}), ConfigError);
  CHECK_THROWS_AS(resolve_config_text("[1,2]", {}), ConfigError);
  CHECK_THROWS_AS(resolve_config_text("", {"stage2.p"}), ConfigError);
  CHECK_THROWS_AS(resolve_config_text("", {"stage1.tau1=0.2"}), ConfigError);
}

TEST_CASE("evaluation-only attacks cannot enter stage 2") {
  CHECK_THROWS_AS(resolve_config_text(R"({"stage2": {"attacks": ["combined"]}})", {}), ConfigError);
  CHECK_THROWS_AS(resolve_config_text(R"({"stage2": {"attacks": ["regeneration:proxy=B"]}})", {}), ConfigError);
  CHECK_THROWS_AS(resolve_config_text(R"({"stage2": {"attacks": ["black_q"]}})", {}), ConfigError);
  const RunConfig ok = resolve_config_text(R"({"stage2": {"attacks": ["jpeg:Q=70", "regeneration:proxy=A"]}})", {});
  CHECK(ok.stage2.attacks.size() == 2);
}

TEST_CASE("the echoed config resolves to itself") {
  const RunConfig a = resolve_config_text(R"({"stage1": {"lambda_i1": 12}})", {"seed=5"});
  const std::string echo = config_to_json(a);
  const RunConfig b = resolve_config_text(echo, {});
  CHECK(config_to_json(b) == echo);
  CHECK(b.stage1.lambda_i1 == 12.0);
  CHECK(b.seed == 5);
}

TEST_CASE("config files are read from disk") {
  const auto path = std::filesystem::temp_directory_path() / "advmark_unit_config.json";
  std::ofstream(path) << R"({"eval": {"black_box_images": 2}})";
  CHECK(resolve_config(path.string(), {}).eval.black_box_images == 2);
  CHECK_THROWS_AS(resolve_config("/nonexistent/config.json", {}), ConfigError);
}
