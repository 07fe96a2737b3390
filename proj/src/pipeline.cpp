#include "advmark/pipeline.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "advmark/checkpoint.hpp"
#include "advmark/training.hpp"

namespace advmark {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* const kTags[] = {"stage0", "stage1", "advmark", "jat", "eat"};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
}

std::string checkpoint_for(const std::string& tag) { return (tag == "advmark" ? "stage1" : tag) + ".ckpt"; }

}  // namespace

fs::path run_path(const std::string& name) {
  const fs::path p(name);
  if (p.is_absolute() || p.has_parent_path()) return p;
  const char* root = std::getenv(kRunRootEnv);
  return fs::path(root && *root ? root : "runs") / p;
}

void save_images(const Image& x, const fs::path& path) {
  CheckpointData d;
  d.kind = "images";
  d.arrays["images"] = x;
  write_checkpoint(d, path);
}

Image load_images(const fs::path& path) {
  CheckpointData d = read_checkpoint(path);
  if (d.kind != "images" || !d.arrays.contains("images")) throw FormatError(path.string() + " holds no images");
  return d.arrays.at("images");
}

void write_stage1_log(const std::vector<Stage1BatchLog>& log, const fs::path& path) {
  std::ostringstream os;
  os << "epoch,batches,loss,adversarial,watermark,image,adv_ba,decoder_steps,diverged\n";
  for (std::size_t i = 0; i < log.size();) {
    const int epoch = log[i].epoch;
    double loss = 0, adv = 0, wm = 0, img = 0, ba = 0;
    int count = 0, steps = 0, diverged = 0;
    for (; i < log.size() && log[i].epoch == epoch; ++i, ++count) {
      const auto& l = log[i];
      loss += l.loss;
      adv += l.adversarial;
      wm += l.watermark;
      img += l.image;
      ba += l.adv_ba;
      steps += l.decoder_step ? 1 : 0;
      diverged += l.diverged ? 1 : 0;
    }
    os << epoch << ',' << count << ',' << loss / count << ',' << adv / count << ',' << wm / count << ','
       << img / count << ',' << ba / count << ',' << steps << ',' << diverged << '\n';
  }
  write_text(path, os.str());
}

void write_stage2_log(const std::vector<std::vector<Stage2Iterate>>& logs, const std::vector<std::string>& attack_ids,
                      const fs::path& path) {
  std::ostringstream os;
  os << "image,iteration";
  for (const auto& id : attack_ids) os << ",\"ba:" << id << '"';
  os << ",psnr,accepted\n";
  for (std::size_t i = 0; i < logs.size(); ++i) {
    for (const auto& it : logs[i]) {
      os << i << ',' << it.iteration;
      for (const auto& id : attack_ids) {
        os << ',';
        if (auto f = it.attack_ba.find(id); f != it.attack_ba.end()) os << f->second;
      }
      os << ',' << it.psnr << ',' << (it.accepted ? 1 : 0) << '\n';
    }
  }
  write_text(path, os.str());
}

Run::Run(fs::path dir, const std::string& config_path, const std::vector<std::string>& overrides,
         std::optional<std::uint64_t> seed, Progress progress)
    : dir_(std::move(dir)), progress_(std::move(progress)) {
  std::string source = config_path;
  if (source.empty() && fs::exists(dir_ / "config.json")) source = (dir_ / "config.json").string();
  config_ = resolve_config(source, overrides, seed);
  fs::create_directories(dir_);
}

std::string Run::run_id() const {
  const std::string name = fs::absolute(dir_).lexically_normal().filename().string();
  return name.empty() ? fs::absolute(dir_).lexically_normal().parent_path().filename().string() : name;
}

void Run::log(const std::string& msg) const {
  if (progress_) progress_(msg);
}

void Run::write_manifest() const {
  write_text(file("config.json"), config_to_json(config_) + "\n");
  json m;
  m["run_id"] = run_id();
  m["seed"] = config_.seed;
  m["config"] = json::parse(config_to_json(config_));
  json hashes = json::object();
  for (const auto& entry : fs::directory_iterator(dir_)) {
    if (entry.path().extension() == ".ckpt") hashes[entry.path().filename().string()] = file_hash(entry.path());
  }
  for (const char* name : {"stage2/xw1.ckpt", "stage2/xw2.ckpt"}) {
    if (has(name)) hashes[name] = file_hash(file(name));
  }
  m["checkpoints"] = hashes;
  write_text(file("manifest.json"), m.dump(2) + "\n");
}

void Run::gen_corpus() const {
  write_manifest();
  const Corpus c = generate_corpus(config_.corpus);
  fs::remove_all(file("corpus"));
  write_corpus(c, file("corpus"));
  log("corpus: " + std::to_string(c.size()) + " images, histogram coverage " +
      std::to_string(histogram_coverage(c.images)));
}

Corpus Run::corpus() const {
  if (!has("corpus")) throw StateError("no corpus in " + dir_.string() + "; run gen-corpus first");
  return load_corpus(file("corpus"));
}

CorpusSplit Run::split() const { return split_corpus(corpus(), config_.corpus.holdout); }

void Run::pretrain() const {
  const auto sp = split();
  write_manifest();
  ModelConfig mc;
  mc.arch = config_.arch;
  mc.seed = config_.model_seed;
  const ModelBundle init = init_models(mc);
  const ModelBundle trained =
      pretrain_base(init, sp.train, sp.heldout, config_.pretrain, nullptr, [&](const PretrainLog& l) {
        if (l.heldout_ba < 0) return;
        std::ostringstream os;
        os << "pretrain epoch " << l.epoch << " heldout BA " << l.heldout_ba << " PSNR " << l.heldout_psnr
           << " image weight " << l.image_weight;
        log(os.str());
      });
  save_checkpoint(trained, file("stage0.ckpt"));
  write_manifest();
}

ModelBundle Run::model(const std::string& tag) const {
  const std::string name = checkpoint_for(tag);
  if (!has(name)) throw StateError("missing " + name + " in " + dir_.string());
  ModelBundle b = load_checkpoint(file(name));
  if (!(b.arch == config_.arch)) throw ConfigError(name + " does not match the configured architecture");
  return b;
}

void Run::save_stage1_like(const std::string& tag, const Stage1Result& result) const {
  save_checkpoint(result.bundle, file(tag + ".ckpt"));
  write_stage1_log(result.log, file(tag + "_log.csv"));
  write_manifest();
}

namespace {

Stage1Callback stage1_progress(const Progress& progress, const std::string& what) {
  return [progress, what](const Stage1BatchLog& l) {
    if (!progress) return;
    std::ostringstream os;
    os << what << " epoch " << l.epoch << " batch " << l.batch << " loss " << l.loss << " adv BA " << l.adv_ba
       << (l.decoder_step ? " (decoder step)" : "");
    progress(os.str());
  };
}

}  // namespace

void Run::finetune_stage1() const {
  const ModelBundle base = model("stage0");
  write_manifest();
  const auto r = run_stage1(base, split().train, config_.stage1, stage1_progress(progress_, "stage1"));
  if (r.aborted) log("warning: stage1 stopped on a non-finite loss; last good parameters kept");
  save_stage1_like("stage1", r);
}

void Run::train_jat() const {
  const ModelBundle base = model("stage0");
  write_manifest();
  const auto r = train_jat_baseline(base, split().train, default_jat_attacks(), config_.stage1,
                                    stage1_progress(progress_, "jat"));
  save_stage1_like("jat", r);
}

void Run::train_eat() const {
  const ModelBundle base = model("stage0");
  write_manifest();
  const auto r = train_eat_baseline(base, split().train, config_.stage1, stage1_progress(progress_, "eat"));
  save_stage1_like("eat", r);
}

DenoiserBundle Run::proxy(char which) const {
  const std::string name = std::string("proxy_") + which + ".ckpt";
  if (has(name)) return load_denoiser(file(name));
  const auto sp = split();
  DenoiserConfig dc = config_.denoiser;
  dc.seed = which == 'A' ? config_.denoiser_seed_a : config_.denoiser_seed_b;
  log(std::string("training regeneration proxy ") + which);
  const DenoiserBundle d = train_denoiser(sp.train, sp.heldout, dc);
  save_denoiser(d, file(name));
  log("proxy " + std::string(1, which) + " held-out denoise PSNR " + std::to_string(d.heldout_psnr));
  write_manifest();
  return d;
}

void Run::optimize_stage2() const {
  const ModelBundle b = model("stage1");
  const DenoiserBundle proxy_a = proxy('A');
  const auto sp = split();
  const int first = sp.train.size();
  const Image covers = sp.heldout.images;
  const auto msgs = messages_for(config_.seed, first, covers.n(), config_.arch.n);
  const Image xw1 = encode_batch(b, covers, msgs);
  std::vector<Image> outs;
  std::vector<std::vector<Stage2Iterate>> logs;
  std::ostringstream summary;
  summary << "image,psnr_w1,psnr_w2,degenerate,accepted_steps\n";
  fs::create_directories(file("stage2/png"));
  for (int i = 0; i < covers.n(); ++i) {
    Stage2Config cfg = config_.stage2;
    cfg.seed = derive_seed(config_.stage2.seed, "image", i);
    const Stage2Result r = optimize_image(b, covers.samples(i), msgs[i], xw1.samples(i), cfg, &proxy_a);
    if (r.degenerate) {
      std::cerr << "warning: image " << i << " is below the PSNR floor after stage 1 ("
                << psnr(xw1.samples(i), covers.samples(i)) << " dB); returned unchanged\n";
    }
    outs.push_back(r.image);
    logs.push_back(r.log);
    summary << i << ',' << psnr(xw1.samples(i), covers.samples(i)) << ',' << psnr(r.image, covers.samples(i)) << ','
            << (r.degenerate ? 1 : 0) << ',' << r.accepted_steps << '\n';
    char name[32];
    std::snprintf(name, sizeof name, "img_%04d.png", first + i);
    write_png(r.image, file("stage2/png") / name);
    log("stage2 image " + std::to_string(i) + ": " + std::to_string(r.accepted_steps) + " accepted steps");
  }
  std::vector<std::string> ids;
  for (const auto& a : config_.stage2.attacks) ids.push_back(a.id());
  save_images(xw1, file("stage2/xw1.ckpt"));
  save_images(stack(outs), file("stage2/xw2.ckpt"));
  write_stage2_log(logs, ids, file("stage2/iterates.csv"));
  write_text(file("stage2/summary.csv"), summary.str());
  write_manifest();
}

std::pair<Image, Image> Run::stage2_images() const {
  if (!has("stage2/xw2.ckpt")) throw StateError("no stage-2 output; run optimize-stage2 first");
  return {load_images(file("stage2/xw1.ckpt")), load_images(file("stage2/xw2.ckpt"))};
}

Run::Embedded Run::embedded(const std::string& tag) const {
  const auto sp = split();
  Embedded e;
  e.covers = sp.heldout.images;
  e.msgs = messages_for(config_.seed, sp.train.size(), e.covers.n(), config_.arch.n);
  e.decoder_tag = tag == "advmark" ? "stage1" : tag;
  if (tag == "advmark") {
    e.watermarked = stage2_images().second;
  } else {
    e.watermarked = encode_batch(model(tag), e.covers, e.msgs);
  }
  return e;
}

std::vector<std::string> Run::available_tags() const {
  std::vector<std::string> out;
  for (const char* t : kTags) {
    if (std::string(t) == "advmark" ? has("stage2/xw2.ckpt") : has(checkpoint_for(t))) out.push_back(t);
  }
  return out;
}

void Run::evaluate() const {
  const auto tags = available_tags();
  if (tags.empty()) throw StateError("nothing to evaluate in " + dir_.string());
  const DenoiserBundle proxy_a = proxy('A');
  const DenoiserBundle proxy_b = proxy('B');
  const auto sp = split();
  std::vector<ExperimentRecord> records, sweep;
  for (const auto& tag : tags) {
    const Embedded e = embedded(tag);
    const ModelBundle b = model(e.decoder_tag);
    AttackContext ctx;
    ctx.proxy_a = &proxy_a;
    ctx.proxy_b = &proxy_b;
    SurrogateBundle surrogate;
    bool needs_surrogate = false;
    for (const auto& a : config_.eval.attacks) needs_surrogate = needs_surrogate || a.find("black_s") != std::string::npos;
    if (needs_surrogate) {
      const auto train_msgs = messages_for(config_.seed, 0, sp.train.size(), config_.arch.n);
      surrogate = train_surrogate(sp.train.images, encode_batch(b, sp.train.images, train_msgs), config_.eval.surrogate);
      ctx.surrogate = &surrogate;
      log(tag + " surrogate validation accuracy " + std::to_string(surrogate.validation_accuracy));
    }
    EvaluationInput in;
    in.run_id = run_id();
    in.model_tag = tag;
    in.bundle = &b;
    in.covers = e.covers;
    in.watermarked = e.watermarked;
    in.msgs = e.msgs;
    in.seed = derive_seed(config_.seed, "evaluate");
    log("evaluating " + tag);
    auto r = run_evaluation(in, config_.eval.attacks, ctx, config_.eval.black_box_images);
    records.insert(records.end(), r.begin(), r.end());
    auto s = run_evaluation(in, config_.eval.sweeps, ctx, config_.eval.black_box_images);
    sweep.insert(sweep.end(), s.begin(), s.end());
  }
  write_records(records, file("records.csv"));
  write_records(sweep, file("sweep.csv"));
  json summary = json::object();
  for (const auto& tag : tags) {
    json row = json::object();
    for (const auto& r : records) {
      if (r.model_tag != tag || row.contains(r.attack_id)) continue;
      row[r.attack_id] = {{"bit_accuracy", mean_ba(records, tag, r.attack_id)},
                          {"psnr", mean_psnr_of(records, tag, r.attack_id)}};
    }
    summary[tag] = row;
  }
  write_text(file("summary.json"), summary.dump(2) + "\n");
}

void Run::verify_theorem() const {
  const ModelBundle b = model("stage1");
  const auto [xw1, xw2] = stage2_images();
  const auto reports = verify_theorem_set(b, xw1, xw2, config_.eval.radius);
  write_theorem_csv(reports, file("theorem.csv"));
  int defined = 0, holds = 0;
  for (const auto& r : reports) {
    if (!r.holds) continue;
    ++defined;
    holds += *r.holds ? 1 : 0;
  }
  log("theorem holds on " + std::to_string(holds) + " of " + std::to_string(defined) + " images with alpha > 0");
}

ReportFiles Run::report() const { return write_report(dir_); }

}  // namespace advmark
