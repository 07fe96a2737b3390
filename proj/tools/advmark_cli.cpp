#include <chrono>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "advmark/corpus.hpp"
#include "advmark/pipeline.hpp"

using namespace advmark;

namespace {

struct Common {
  std::string run = "default";
  std::string config;
  std::vector<std::string> set;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--run", c.run, "run directory, or a name under $" + std::string(kRunRootEnv))->capture_default_str();
  cmd->add_option("--config", c.config, "JSON config file (defaults to the run's config.json)");
  cmd->add_option("--set", c.set, "key=value override, repeatable");
  cmd->add_option("--seed", c.seed, "master seed");
  cmd->add_flag("-q,--quiet", c.quiet, "no progress lines");
}

Run open_run(const Common& c) {
  Progress progress;
  if (!c.quiet) progress = [](const std::string& s) { std::cerr << s << '\n'; };
  Run run(run_path(c.run), c.config, c.set, c.seed, progress);
  std::cout << config_to_json(run.config()) << '\n';
  return run;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage robust image watermarking"};
  app.require_subcommand(1);
  Common common;

  auto* gen = app.add_subcommand("gen-corpus", "generate the synthetic corpus into the run directory");
  auto* pre = app.add_subcommand("pretrain", "noise-layer training of the base encoder/decoder (stage0)");
  auto* s1 = app.add_subcommand("finetune-stage1", "adversarial encoder fine-tuning (stage1)");
  auto* jat = app.add_subcommand("train-jat", "joint adversarial training baseline");
  auto* eat = app.add_subcommand("train-eat", "encoder-only adversarial training baseline");
  auto* s2 = app.add_subcommand("optimize-stage2", "per-image optimisation of the held-out split");
  auto* atk = app.add_subcommand("attack", "attack one watermarked image and decode it");
  auto* ev = app.add_subcommand("evaluate", "attack every model tag, write records.csv and sweep.csv");
  auto* th = app.add_subcommand("verify-theorem", "robustness-radius check on stage-2 outputs");
  auto* rep = app.add_subcommand("report", "tables and plots from the records");
  for (auto* cmd : {gen, pre, s1, jat, eat, s2, atk, ev, th, rep}) add_common(cmd, common);

  std::string attack_id = "jpeg_real:Q=50";
  std::string tag = "stage0";
  int image = 0;
  std::string output;
  atk->add_option("--attack", attack_id, "attack id, '+' chains attacks")->capture_default_str();
  atk->add_option("--model", tag, "stage0, stage1, advmark, jat or eat")->capture_default_str();
  atk->add_option("--image", image, "held-out image index")->capture_default_str();
  atk->add_option("--output", output, "PNG path for the attacked image");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    Run run = open_run(common);
    const auto t0 = std::chrono::steady_clock::now();
    if (gen->parsed()) run.gen_corpus();
    if (pre->parsed()) run.pretrain();
    if (s1->parsed()) run.finetune_stage1();
    if (jat->parsed()) run.train_jat();
    if (eat->parsed()) run.train_eat();
    if (s2->parsed()) run.optimize_stage2();
    if (ev->parsed()) run.evaluate();
    if (th->parsed()) run.verify_theorem();
    if (rep->parsed()) {
      for (const auto& f : run.report().written) std::cerr << "wrote " << f.string() << '\n';
      std::cout << table_text(read_records(run.file("records.csv")));
    }
    if (atk->parsed()) {
      const auto e = run.embedded(tag);
      if (image < 0 || image >= e.covers.n()) throw ParameterError("image index out of range");
      const ModelBundle b = run.model(e.decoder_tag);
      std::optional<DenoiserBundle> pa, pb;
      AttackContext ctx;
      ctx.bundle = &b;
      if (attack_id.find("regeneration") != std::string::npos) {
        pa = run.proxy('A');
        pb = run.proxy('B');
        ctx.proxy_a = &*pa;
        ctx.proxy_b = &*pb;
      }
      std::optional<SurrogateBundle> sur;
      if (attack_id.find("black_s") != std::string::npos) {
        const auto sp = run.split();
        const auto msgs = messages_for(run.config().seed, 0, sp.train.size(), run.config().arch.n);
        sur = train_surrogate(sp.train.images, encode_batch(b, sp.train.images, msgs), run.config().eval.surrogate);
        ctx.surrogate = &*sur;
      }
      const Image xw = e.watermarked.samples(image);
      const Image attacked = apply_attack_chain(parse_attack_chain(attack_id), xw, {e.msgs[image]},
                                                e.covers.samples(image), ctx,
                                                derive_seed(run.config().seed, attack_id, image));
      if (!output.empty()) write_png(attacked, output);
      std::cout << "bit_accuracy " << bit_accuracy(decode_messages(b, attacked)[0], e.msgs[image]) << " psnr "
                << psnr(attacked, xw) << '\n';
    }
    const auto secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cerr << "done in " << secs << " s\n";
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
