#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "advmark/pipeline.hpp"
#include "advmark/training.hpp"
#include "gradcheck.hpp"

using namespace advmark;
namespace fs = std::filesystem;
using advmark::testing::check_input_gradient;
using advmark::testing::check_leaf_gradient;
using advmark::testing::weighted_sum;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const Outcome& o) {
  std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << id << ' ' << name << ": " << o.detail << std::endl;
  if (!o.pass) ++failures;
}

Outcome guarded(const std::function<Outcome()>& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    return {false, std::string("error: ") + e.what()};
  }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

std::string id_of(const std::string& text) { return parse_attack(text).id(); }

}  // namespace

int main(int argc, char** argv) {
  const fs::path dir = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_run");
  fs::remove_all(dir);
  const Run run(dir, "", {}, std::nullopt, [](const std::string& s) { std::cerr << s << '\n'; });
  const RunConfig& cfg = run.config();

  // End-to-end pipeline with the desk defaults, timed as one budget.
  const auto t_pipeline = std::chrono::steady_clock::now();
  double stage1_seconds = 0, stage2_seconds = 0;
  bool pipeline_ok = true;
  std::string pipeline_error;
  try {
    run.gen_corpus();
    run.pretrain();
    auto t = std::chrono::steady_clock::now();
    run.finetune_stage1();
    stage1_seconds = seconds_since(t);
    t = std::chrono::steady_clock::now();
    run.optimize_stage2();
    stage2_seconds = seconds_since(t);
    run.evaluate();
    run.verify_theorem();
    run.report();
  } catch (const std::exception& e) {
    pipeline_ok = false;
    pipeline_error = e.what();
  }
  const double pipeline_seconds = seconds_since(t_pipeline);
  if (!pipeline_ok) std::cerr << "pipeline failed: " << pipeline_error << '\n';

  std::vector<ExperimentRecord> records;
  if (pipeline_ok) records = read_records(run.file("records.csv"));

  report(1, "stage-2 PSNR floor", guarded([&] {
           const auto [xw1, xw2] = run.stage2_images();
           const Image covers = run.split().heldout.images;
           int ok = 0;
           double worst = kPsnrCap;
           for (int i = 0; i < xw2.n(); ++i) {
             const double p = psnr(xw2.samples(i), covers.samples(i));
             worst = std::min(worst, p);
             ok += p >= cfg.stage2.p ? 1 : 0;
           }
           return Outcome{ok == xw2.n(), std::to_string(ok) + "/" + std::to_string(xw2.n()) + " outputs >= " +
                                             fmt(cfg.stage2.p, 1) + " dB, min " + fmt(worst, 2) + " dB"};
         }));

  report(2, "clean accuracy preservation", guarded([&] {
           const double s0 = mean_ba(records, "stage0", "identity");
           const double s1 = mean_ba(records, "stage1", "identity");
           const double s2 = mean_ba(records, "advmark", "identity");
           const bool ok = s1 >= s0 - 0.01 && s2 >= 0.99;
           return Outcome{ok, "stage0 " + fmt(s0) + ", stage1 " + fmt(s1) + " (need >= " + fmt(s0 - 0.01) +
                                  "), stage2 " + fmt(s2) + " (need >= 0.99)"};
         }));

  report(3, "WEvade robustness gain", guarded([&] {
           const std::string id = id_of("wevade");
           const double s0 = mean_ba(records, "stage0", id), s1 = mean_ba(records, "stage1", id);
           return Outcome{s1 - s0 >= 0.25, "stage0 " + fmt(s0) + " -> stage1 " + fmt(s1) + ", gain " +
                                               fmt(s1 - s0) + " (need >= 0.25); stage1 took " +
                                               fmt(stage1_seconds, 0) + " s"};
         }));

  report(4, "stage-2 distortion and regeneration recovery", guarded([&] {
           const std::string comb = id_of("combined"), regen = id_of("regeneration:proxy=A"),
                             regen_b = id_of("regeneration:proxy=B");
           const double c1 = mean_ba(records, "stage1", comb), c2 = mean_ba(records, "advmark", comb);
           const double r1 = mean_ba(records, "stage1", regen), r2 = mean_ba(records, "advmark", regen);
           const double b1 = mean_ba(records, "stage1", regen_b), b2 = mean_ba(records, "advmark", regen_b);
           return Outcome{c2 - c1 >= 0.10 && r2 - r1 >= 0.10,
                          "combined " + fmt(c1) + " -> " + fmt(c2) + ", proxy A " + fmt(r1) + " -> " + fmt(r2) +
                              " (need +0.10 each); unseen proxy B " + fmt(b1) + " -> " + fmt(b2) + "; stage2 took " +
                              fmt(stage2_seconds, 0) + " s"};
         }));

  report(5, "theorem verification", guarded([&] {
           const ModelBundle b = run.model("stage1");
           const auto [xw1, xw2] = run.stage2_images();
           const auto reports = verify_theorem_set(b, xw1, xw2, cfg.eval.radius);
           const auto degenerate = verify_theorem_set(b, xw1, xw1, cfg.eval.radius);
           int holds = 0, deg = 0, undefined = 0;
           for (const auto& r : reports) {
             holds += r.holds.value_or(false) ? 1 : 0;
             undefined += r.holds ? 0 : 1;
           }
           for (const auto& r : degenerate) deg += r.holds.value_or(false) ? 1 : 0;
           const double frac = static_cast<double>(holds) / reports.size();
           const bool ok = frac >= 0.95 && deg == static_cast<int>(degenerate.size());
           return Outcome{ok, "holds on " + std::to_string(holds) + "/" + std::to_string(reports.size()) + " (" +
                                  std::to_string(undefined) + " undefined), degenerate " + std::to_string(deg) + "/" +
                                  std::to_string(degenerate.size())};
         }));

  report(6, "finite-difference gradient oracle", guarded([&] {
           const ModelBundle b = run.model("stage1");
           const DenoiserBundle proxy = run.proxy('A');
           Tensor<double> x = run.split().heldout.at(0).cast<double>();
           x.array() = 0.1 + 0.8 * x.array();
           double worst = 0;
           std::string worst_name;
           const auto track = [&](const std::string& name, double err) {
             if (err >= worst) worst = err, worst_name = name;
           };
           const auto check = [&](const std::string& name, std::function<Var<double>(const Var<double>&)> f) {
             track(name, check_input_gradient(weighted_sum(f, x.shape(), 1), x, 7).max_rel_error);
           };
           check("jpeg", [](const Var<double>& v) { return jpeg_approx(v, 50.0, false); });
           for (const char* id : {"gaussian_noise", "gaussian_blur", "brightness:a=1.2"}) {
             const AttackSpec s = parse_attack(id);
             check(id, [s](const Var<double>& v) { return apply_distortion(v, s, 3); });
           }
           const auto stages = expand_combined(parse_attack("combined:a=1.2"));
           check("combined", [stages](const Var<double>& v) {
             Var<double> y = jpeg_approx(v, stages[0].get("Q"), false);
             for (std::size_t k = 1; k < stages.size(); ++k) y = apply_distortion(y, stages[k], 3 + k);
             return y;
           });
           check("regeneration", [&proxy](const Var<double>& v) { return regenerate(v, proxy, 5); });
           const DecoderNet<double> dec_x(b, false);
           track("decoder input path",
                 check_input_gradient([&](const Var<double>& v) { return sum(dec_x(v)); }, x, 8).max_rel_error);
           const DecoderNet<double> dec_p(b, true);
           const Var<double> xv(x);
           for (const auto& [name, leaf] : dec_p.params()) {
             if (name.size() < 2 || name.substr(name.size() - 2) != ".w") continue;
             track("decoder parameter path " + name,
                   check_leaf_gradient([&] { return sum(dec_p(xv)); }, leaf, 9).max_rel_error);
           }
           return Outcome{worst < 1e-3, "worst relative error " + std::to_string(worst) + " (" + worst_name +
                                            "), need < 1e-3"};
         }));

  report(7, "Black-Q invariant and PSNR gap", guarded([&] {
           int total = 0, evading = 0;
           std::string bq;
           for (const auto& r : records) {
             if (r.attack_id.rfind("black_q", 0) != 0) continue;
             bq = r.attack_id;
             ++total;
             evading += r.bit_accuracy < 0.75 ? 1 : 0;
           }
           const double p0 = mean_psnr_of(records, "stage0", bq), pa = mean_psnr_of(records, "advmark", bq);
           const bool ok = total > 0 && evading == total && p0 - pa >= 5.0;
           return Outcome{ok, std::to_string(evading) + "/" + std::to_string(total) +
                                  " results below 0.75; attacked PSNR stage0 " + fmt(p0, 2) + " dB, advmark " +
                                  fmt(pa, 2) + " dB (need gap >= 5)"};
         }));

  report(8, "EAT vs JAT baseline ordering", guarded([&] {
           const auto t = std::chrono::steady_clock::now();
           run.train_jat();
           run.train_eat();
           const double secs = seconds_since(t);
           const auto sp = run.split();
           const auto msgs = messages_for(cfg.seed, sp.train.size(), sp.heldout.size(), cfg.arch.n);
           AdvBudget budget = budget_from_spec(parse_attack("defender"));
           const auto measure = [&](const std::string& tag, double& clean, double& defended) {
             const ModelBundle b = run.model(tag);
             const Image xw = encode_batch(b, sp.heldout.images, msgs);
             clean = mean_bit_accuracy(b, xw, msgs);
             defended = mean_bit_accuracy(b, defender_attack(b, xw, msgs, budget), msgs);
           };
           double c0, d0, cj, dj, ce, de;
           measure("stage0", c0, d0);
           measure("jat", cj, dj);
           measure("eat", ce, de);
           const bool ok = ce >= cj - 0.01 && dj > d0 + 0.01 && de > d0 + 0.01;
           return Outcome{ok, "clean EAT " + fmt(ce) + " vs JAT " + fmt(cj) + "; defender BA stage0 " + fmt(d0) +
                                  ", JAT " + fmt(dj) + ", EAT " + fmt(de) + "; training took " + fmt(secs, 0) + " s"};
         }));

  report(9, "metric, persistence and config unit suites", guarded([&] {
           const std::string cmd = std::string("\"") + UNIT_TESTS_PATH +
                                   "\" --test-case='psnr*,ssim*,bit accuracy*,rmse*,*checkpoint*,*config*,"
                                   "the echoed config*,file overrides*,unknown keys*,type mismatches*,"
                                   "corrupt checkpoints*,generic payload*,model checkpoints*,hashes*' "
                                   "--no-intro=true --minimal=true > /dev/null 2>&1";
           const int rc = std::system(cmd.c_str());
           return Outcome{rc == 0, rc == 0 ? "suites passed" : "unit suite exit status " + std::to_string(rc)};
         }));

  report(10, "end-to-end budget", Outcome{pipeline_ok && pipeline_seconds < 45 * 60,
                                          (pipeline_ok ? "" : "pipeline error: " + pipeline_error + "; ") +
                                              "gen-corpus to report in " + fmt(pipeline_seconds / 60, 1) +
                                              " min (need < 45)"});

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
