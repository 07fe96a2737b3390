#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <regex>
#include <set>

#include "advmark/harness.hpp"
#include "advmark/pipeline.hpp"

using namespace advmark;
namespace fs = std::filesystem;

namespace {

ExperimentRecord rec(const std::string& tag, const std::string& id, double ba, double psnr_db = 40) {
  ExperimentRecord r;
  r.run_id = "r1";
  r.model_tag = tag;
  r.attack_id = id;
  r.bit_accuracy = ba;
  r.psnr = psnr_db;
  r.ssim = 0.9;
  r.perceptual = 0.01;
  r.wall_ms = 3;
  r.seed = 42;
  return r;
}

}  // namespace

TEST_CASE("record CSV has the fixed column order and round-trips") {
  const std::vector<ExperimentRecord> rs = {rec("stage0", "wevade:r=0.078,steps=50", 0.5),
                                            rec("advmark", "jpeg:Q=50", 0.875)};
  const std::string csv = records_csv(rs);
  CHECK(csv.rfind("run_id,model_tag,attack_id,bit_accuracy,psnr,ssim,perceptual,wall_ms,seed\n", 0) == 0);
  const auto path = fs::temp_directory_path() / "advmark_unit_records.csv";
  write_records(rs, path);
  const auto back = read_records(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].attack_id == "wevade:r=0.078,steps=50");
  CHECK(back[1].bit_accuracy == 0.875);
  CHECK(back[1].seed == 42);
}

TEST_CASE("stage-1 log is averaged per epoch") {
  std::vector<Stage1BatchLog> log(3);
  log[0] = {1, 1, 2.0, 1.0, 0.5, 0.1, 0.4, true, false};
  log[1] = {1, 2, 4.0, 3.0, 0.5, 0.3, 0.6, false, false};
  log[2] = {2, 1, 1.0, 0.5, 0.25, 0.2, 0.9, true, false};
  const auto path = fs::temp_directory_path() / "advmark_unit_stage1_log.csv";
  write_stage1_log(log, path);
  std::ifstream in(path);
  std::string header, e1, e2, extra;
  std::getline(in, header);
  std::getline(in, e1);
  std::getline(in, e2);
  CHECK(header == "epoch,batches,loss,adversarial,watermark,image,adv_ba,decoder_steps,diverged");
  CHECK(e1 == "1,2,3,2,0.5,0.2,0.5,1,0");
  CHECK(e2 == "2,1,1,0.5,0.25,0.2,0.9,1,0");
  CHECK_FALSE(std::getline(in, extra));
}

TEST_CASE("every record lands in exactly one table cell") {
  std::vector<ExperimentRecord> rs;
  for (int i = 0; i < 3; ++i) {
    rs.push_back(rec("stage0", "identity", 1.0));
    rs.push_back(rec("stage0", "jpeg:Q=50", 0.5 + 0.1 * i));
    rs.push_back(rec("advmark", "jpeg:Q=50", 0.9));
  }
  const std::string csv = table_csv(rs);
  CHECK(csv == "attack_id,stage0,advmark\nidentity,1,\njpeg:Q=50,0.6,0.9\n");
  CHECK(std::isnan(mean_ba(rs, "advmark", "identity")));
  CHECK(table_text(rs).find("0.6000") != std::string::npos);
}

TEST_CASE("sweep plot has one monotone series per tag") {
  std::vector<ExperimentRecord> rs;
  for (const char* tag : {"stage0", "stage1", "advmark"})
    for (int q : {90, 10, 50, 30, 70}) rs.push_back(rec(tag, "jpeg_real:Q=" + std::to_string(q), q / 100.0));
  rs.push_back(rec("stage0", "gaussian_noise:sigma=0.1", 0.7));
  const std::string svg = sweep_svg(rs, "jpeg_real");
  const std::regex series("<polyline class=\"series\" data-tag=\"([^\"]+)\"[^>]*points=\"([^\"]+)\"");
  std::set<std::string> tags;
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), series); it != std::sregex_iterator(); ++it) {
    tags.insert((*it)[1]);
    std::istringstream pts((*it)[2]);
    std::string p;
    double last = -1e9;
    int count = 0;
    while (pts >> p) {
      const double x = std::stod(p.substr(0, p.find(',')));
      CHECK(x > last);
      last = x;
      ++count;
    }
    CHECK(count == 5);
  }
  CHECK(tags == std::set<std::string>{"stage0", "stage1", "advmark"});
  CHECK_THROWS_AS(sweep_svg(rs, "nope"), ParameterError);
}

TEST_CASE("black-q chart has one bar per tag") {
  const std::vector<ExperimentRecord> rs = {rec("stage0", "black_q:bisect=20,mc=50,queries=2000,tau=0.75", 0.7, 40),
                                            rec("advmark", "black_q:bisect=20,mc=50,queries=2000,tau=0.75", 0.7, 25),
                                            rec("advmark", "identity", 1.0)};
  const std::string svg = black_q_svg(rs);
  const std::regex bar("<rect class=\"bar\"");
  CHECK(std::distance(std::sregex_iterator(svg.begin(), svg.end(), bar), std::sregex_iterator()) == 2);
}

TEST_CASE("report writes tables and plots from a run directory") {
  const fs::path dir = fs::temp_directory_path() / "advmark_unit_report";
  fs::remove_all(dir);
  fs::create_directories(dir);
  CHECK_THROWS_AS(write_report(dir), IoError);
  write_records({rec("stage0", "identity", 1), rec("stage0", "black_q", 0.6, 30)}, dir / "records.csv");
  write_records({rec("stage0", "jpeg_real:Q=50", 0.9), rec("stage0", "jpeg_real:Q=90", 1.0)}, dir / "sweep.csv");
  const auto files = write_report(dir);
  std::set<std::string> names;
  for (const auto& f : files.written) names.insert(f.filename().string());
  CHECK(names.count("robustness.txt") == 1);
  CHECK(names.count("robustness.csv") == 1);
  CHECK(names.count("sweep_jpeg_real.svg") == 1);
  CHECK(names.count("black_q_psnr.svg") == 1);
}

TEST_CASE("messages are a pure function of seed and index") {
  CHECK(message_for(3, 7, 30) == message_for(3, 7, 30));
  CHECK_FALSE(message_for(3, 7, 30) == message_for(3, 8, 30));
  const auto v = messages_for(3, 6, 2, 30);
  CHECK(v[1] == message_for(3, 7, 30));
}

TEST_CASE("run paths honour the root variable") {
  setenv(kRunRootEnv, "/tmp/advmark_root", 1);
  CHECK(run_path("abc") == fs::path("/tmp/advmark_root/abc"));
  CHECK(run_path("/x/y") == fs::path("/x/y"));
  CHECK(run_path("./rel") == fs::path("./rel"));
  unsetenv(kRunRootEnv);
  CHECK(run_path("abc") == fs::path("runs/abc"));
}

TEST_CASE("evaluation quality columns use the documented references") {
  ModelConfig mc;
  mc.arch.height = mc.arch.width = 32;
  const ModelBundle b = init_models(mc);
  Rng rng(1);
  const Image covers(Shape{2, 3, 32, 32}, 0.5f);
  const auto msgs = random_messages(2, 30, rng);
  EvaluationInput in;
  in.run_id = "u";
  in.model_tag = "t";
  in.bundle = &b;
  in.covers = covers;
  in.watermarked = encode_batch(b, covers, msgs);
  in.msgs = msgs;
  in.seed = 4;
  const auto rs = run_evaluation(in, {"identity", "brightness:a=1"}, AttackContext{}, 1);
  REQUIRE(rs.size() == 4);
  CHECK(rs[0].psnr == doctest::Approx(psnr(in.watermarked.samples(0), covers.samples(0))));
  CHECK(rs[2].psnr == doctest::Approx(kPsnrCap));
  CHECK(rs[2].attack_id == "brightness:a=1");
  CHECK_THROWS_AS(run_evaluation(in, {"regeneration:proxy=B"}, AttackContext{}, 1), StateError);
}
