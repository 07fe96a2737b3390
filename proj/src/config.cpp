#include "advmark/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>

#include <json.hpp>

namespace advmark {

using nlohmann::json;

namespace {

std::vector<std::string> default_eval_attacks() {
  return {"identity",
          "jpeg_real:Q=50",
          "jpeg:Q=50",
          "gaussian_noise:sigma=0.1",
          "gaussian_blur:sigma=0.5",
          "brightness:a=1.5",
          "combined",
          "regeneration:proxy=A",
          "regeneration:proxy=B",
          "wevade",
          "defender",
          "crop",
          "resize",
          "dropout",
          "salt_pepper",
          "rotation",
          "hue",
          "black_s",
          "black_q"};
}

std::vector<std::string> default_sweeps() {
  return {"jpeg_real:Q=90",           "jpeg_real:Q=70",           "jpeg_real:Q=50",          "jpeg_real:Q=30",
          "jpeg_real:Q=10",           "gaussian_noise:sigma=0.02", "gaussian_noise:sigma=0.05", "gaussian_noise:sigma=0.1",
          "gaussian_noise:sigma=0.15", "gaussian_blur:sigma=0.5",  "gaussian_blur:sigma=1",    "gaussian_blur:sigma=1.5",
          "gaussian_blur:sigma=2",    "brightness:a=0.5",         "brightness:a=0.8",        "brightness:a=1.2",
          "brightness:a=1.5"};
}

struct Entry {
  std::string key;
  std::function<json(const RunConfig&)> get;
  std::function<void(RunConfig&, const json&)> set;
};

[[noreturn]] void type_error(const std::string& key, const char* expected, const json& v) {
  throw ConfigError("config key '" + key + "' expects " + expected + ", got " + v.dump());
}

template <class T>
Entry number(const std::string& key, T RunConfig::*section, double T::*field) {
  return {key, [=](const RunConfig& c) { return json((c.*section).*field); },
          [=](RunConfig& c, const json& v) {
            if (!v.is_number()) type_error(key, "a number", v);
            (c.*section).*field = v.get<double>();
          }};
}

template <class T>
Entry integer(const std::string& key, T RunConfig::*section, int T::*field) {
  return {key, [=](const RunConfig& c) { return json((c.*section).*field); },
          [=](RunConfig& c, const json& v) {
            if (!v.is_number_integer()) type_error(key, "an integer", v);
            (c.*section).*field = v.get<int>();
          }};
}

Entry string_list(const std::string& key, std::function<std::vector<std::string>&(RunConfig&)> ref) {
  return {key, [=](const RunConfig& c) { return json(ref(const_cast<RunConfig&>(c))); },
          [=](RunConfig& c, const json& v) {
            if (!v.is_array()) type_error(key, "a list of strings", v);
            std::vector<std::string> out;
            for (const auto& e : v) {
              if (!e.is_string()) type_error(key, "a list of strings", v);
              out.push_back(e.get<std::string>());
            }
            ref(c) = out;
          }};
}

json stage2_attack_list(const RunConfig& c) {
  json a = json::array();
  for (const auto& s : c.stage2.attacks) a.push_back(s.id());
  return a;
}

json stage2_weight_list(const RunConfig& c) {
  json a = json::array();
  for (const auto& s : c.stage2.attacks) a.push_back(s.weight);
  return a;
}

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = [] {
    std::vector<Entry> t;
    t.push_back({"seed", [](const RunConfig& c) { return json(c.seed); },
                 [](RunConfig& c, const json& v) {
                   if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
                     type_error("seed", "a non-negative integer", v);
                   }
                   c.seed = v.get<std::uint64_t>();
                 }});
    t.push_back(integer("corpus.count", &RunConfig::corpus, &CorpusConfig::count));
    t.push_back(integer("corpus.height", &RunConfig::corpus, &CorpusConfig::height));
    t.push_back(integer("corpus.width", &RunConfig::corpus, &CorpusConfig::width));
    t.push_back(number("corpus.holdout", &RunConfig::corpus, &CorpusConfig::holdout));
    t.push_back({"corpus.source_dir", [](const RunConfig& c) { return json(c.corpus.source_dir); },
                 [](RunConfig& c, const json& v) {
                   if (!v.is_string()) type_error("corpus.source_dir", "a string", v);
                   c.corpus.source_dir = v.get<std::string>();
                 }});
    t.push_back(integer("model.n", &RunConfig::arch, &ArchMeta::n));
    t.push_back(integer("model.enc_width", &RunConfig::arch, &ArchMeta::enc_width));
    t.push_back(integer("model.dec_width", &RunConfig::arch, &ArchMeta::dec_width));
    t.push_back(integer("model.msg_channels", &RunConfig::arch, &ArchMeta::msg_channels));
    t.push_back(integer("pretrain.max_epochs", &RunConfig::pretrain, &PretrainConfig::max_epochs));
    t.push_back(integer("pretrain.batch_size", &RunConfig::pretrain, &PretrainConfig::batch_size));
    t.push_back(number("pretrain.lr", &RunConfig::pretrain, &PretrainConfig::lr));
    t.push_back(number("pretrain.image_weight", &RunConfig::pretrain, &PretrainConfig::image_weight));
    t.push_back(number("pretrain.weight_factor", &RunConfig::pretrain, &PretrainConfig::weight_factor));
    t.push_back(number("pretrain.warmup_ba", &RunConfig::pretrain, &PretrainConfig::warmup_ba));
    t.push_back(number("pretrain.target_ba", &RunConfig::pretrain, &PretrainConfig::target_ba));
    t.push_back(number("pretrain.target_psnr", &RunConfig::pretrain, &PretrainConfig::target_psnr));
    t.push_back(integer("pretrain.eval_every", &RunConfig::pretrain, &PretrainConfig::eval_every));
    t.push_back(number("pretrain.noise_sigma", &RunConfig::pretrain, &PretrainConfig::noise_sigma));
    t.push_back(number("pretrain.jpeg_quality", &RunConfig::pretrain, &PretrainConfig::jpeg_quality));
    t.push_back(integer("denoiser.width", &RunConfig::denoiser, &DenoiserConfig::width));
    t.push_back(integer("denoiser.epochs", &RunConfig::denoiser, &DenoiserConfig::epochs));
    t.push_back(integer("denoiser.batch_size", &RunConfig::denoiser, &DenoiserConfig::batch_size));
    t.push_back(number("denoiser.lr", &RunConfig::denoiser, &DenoiserConfig::lr));
    t.push_back(number("denoiser.sigma_t", &RunConfig::denoiser, &DenoiserConfig::sigma_t));
    t.push_back(integer("denoiser.steps", &RunConfig::denoiser, &DenoiserConfig::steps));
    t.push_back(number("denoiser.min_psnr", &RunConfig::denoiser, &DenoiserConfig::min_denoise_psnr));
    t.push_back(integer("stage1.iter_e", &RunConfig::stage1, &Stage1Config::iter_e));
    t.push_back(number("stage1.lr_e", &RunConfig::stage1, &Stage1Config::lr_e));
    t.push_back(number("stage1.lr_d", &RunConfig::stage1, &Stage1Config::lr_d));
    t.push_back({"stage1.r", [](const RunConfig& c) { return json(c.stage1.budget.r); },
                 [](RunConfig& c, const json& v) {
                   if (!v.is_number()) type_error("stage1.r", "a number", v);
                   c.stage1.budget.r = v.get<double>();
                 }});
    t.push_back({"stage1.adv_steps", [](const RunConfig& c) { return json(c.stage1.budget.steps); },
                 [](RunConfig& c, const json& v) {
                   if (!v.is_number_integer()) type_error("stage1.adv_steps", "an integer", v);
                   c.stage1.budget.steps = v.get<int>();
                 }});
    t.push_back({"stage1.adv_step_size", [](const RunConfig& c) { return json(c.stage1.budget.step_size); },
                 [](RunConfig& c, const json& v) {
                   if (!v.is_number()) type_error("stage1.adv_step_size", "a number", v);
                   c.stage1.budget.step_size = v.get<double>();
                 }});
    t.push_back(number("stage1.lambda_w1", &RunConfig::stage1, &Stage1Config::lambda_w1));
    t.push_back(number("stage1.lambda_i1", &RunConfig::stage1, &Stage1Config::lambda_i1));
    t.push_back(number("stage1.tau1", &RunConfig::stage1, &Stage1Config::tau1));
    t.push_back(integer("stage1.epochs", &RunConfig::stage1, &Stage1Config::epochs));
    t.push_back(integer("stage1.batch_size", &RunConfig::stage1, &Stage1Config::batch_size));
    t.push_back(integer("stage2.iter_o", &RunConfig::stage2, &Stage2Config::iter_o));
    t.push_back(number("stage2.alpha_x", &RunConfig::stage2, &Stage2Config::alpha_x));
    t.push_back(number("stage2.p", &RunConfig::stage2, &Stage2Config::p));
    t.push_back(number("stage2.lambda_w2", &RunConfig::stage2, &Stage2Config::lambda_w2));
    t.push_back(number("stage2.lambda_i2", &RunConfig::stage2, &Stage2Config::lambda_i2));
    t.push_back(number("stage2.tau2", &RunConfig::stage2, &Stage2Config::tau2));
    t.push_back({"stage2.attacks", stage2_attack_list, [](RunConfig& c, const json& v) {
                   if (!v.is_array()) type_error("stage2.attacks", "a list of attack ids", v);
                   std::vector<AttackSpec> out;
                   for (const auto& e : v) {
                     if (!e.is_string()) type_error("stage2.attacks", "a list of attack ids", v);
                     try {
                       out.push_back(parse_attack(e.get<std::string>()));
                     } catch (const ParameterError& err) {
                       throw ConfigError(std::string("stage2.attacks: ") + err.what());
                     }
                   }
                   // Weights follow the defaults: JPEG 1, the rest 0.1.
                   for (auto& s : out) s.weight = s.kind == AttackKind::jpeg ? 1.0 : 0.1;
                   c.stage2.attacks = out;
                 }});
    t.push_back({"stage2.weights", stage2_weight_list, [](RunConfig& c, const json& v) {
                   if (!v.is_array()) type_error("stage2.weights", "a list of numbers", v);
                   if (v.size() != c.stage2.attacks.size()) {
                     throw ConfigError("stage2.weights needs one weight per stage2 attack (" +
                                       std::to_string(c.stage2.attacks.size()) + ")");
                   }
                   for (std::size_t i = 0; i < v.size(); ++i) {
                     if (!v[i].is_number()) type_error("stage2.weights", "a list of numbers", v);
                     c.stage2.attacks[i].weight = v[i].get<double>();
                   }
                 }});
    t.push_back(string_list("attacks.eval", [](RunConfig& c) -> std::vector<std::string>& { return c.eval.attacks; }));
    t.push_back(string_list("attacks.sweep", [](RunConfig& c) -> std::vector<std::string>& { return c.eval.sweeps; }));
    t.push_back({"eval.theorem_directions", [](const RunConfig& c) { return json(c.eval.radius.directions); },
                 [](RunConfig& c, const json& v) {
                   if (!v.is_number_integer()) type_error("eval.theorem_directions", "an integer", v);
                   c.eval.radius.directions = v.get<int>();
                 }});
    t.push_back({"eval.theorem_bisections", [](const RunConfig& c) { return json(c.eval.radius.bisections); },
                 [](RunConfig& c, const json& v) {
                   if (!v.is_number_integer()) type_error("eval.theorem_bisections", "an integer", v);
                   c.eval.radius.bisections = v.get<int>();
                 }});
    t.push_back({"eval.theorem_max_radius", [](const RunConfig& c) { return json(c.eval.radius.max_radius); },
                 [](RunConfig& c, const json& v) {
                   if (!v.is_number()) type_error("eval.theorem_max_radius", "a number", v);
                   c.eval.radius.max_radius = v.get<double>();
                 }});
    t.push_back(integer("eval.black_box_images", &RunConfig::eval, &EvalConfig::black_box_images));
    t.push_back({"eval.surrogate_epochs", [](const RunConfig& c) { return json(c.eval.surrogate.epochs); },
                 [](RunConfig& c, const json& v) {
                   if (!v.is_number_integer()) type_error("eval.surrogate_epochs", "an integer", v);
                   c.eval.surrogate.epochs = v.get<int>();
                 }});
    return t;
  }();
  return table;
}

const Entry& find_entry(const std::string& key) {
  for (const auto& e : entries())
    if (e.key == key) return e;
  std::string valid;
  for (const auto& e : entries()) valid += (valid.empty() ? "" : ", ") + e.key;
  throw ConfigError("unknown config key '" + key + "'; valid keys: " + valid);
}

void flatten(const json& j, const std::string& prefix, std::vector<std::pair<std::string, json>>& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object()) {
      flatten(*it, key, out);
    } else {
      out.emplace_back(key, *it);
    }
  }
}

void derive_seeds(RunConfig& c) {
  const std::uint64_t s = c.seed;
  c.corpus.seed = derive_seed(s, "corpus");
  c.model_seed = derive_seed(s, "model");
  c.pretrain.seed = derive_seed(s, "pretrain");
  c.denoiser_seed_a = derive_seed(s, "denoiser-A");
  c.denoiser_seed_b = derive_seed(s, "denoiser-B");
  c.denoiser.seed = c.denoiser_seed_a;
  c.stage1.seed = derive_seed(s, "stage1");
  c.stage2.seed = derive_seed(s, "stage2");
  c.eval.radius.seed = derive_seed(s, "theorem");
  c.eval.surrogate.seed = derive_seed(s, "surrogate");
}

void check(const RunConfig& c) {
  if (c.corpus.count <= 0) throw ConfigError("corpus.count must be positive");
  ArchMeta a = c.arch;
  validate_arch(a);
  c.stage1.validate();
  c.stage2.validate();
  for (const auto& s : c.stage2.attacks) {
    if (s.unknown()) throw ConfigError("stage2.attacks may not contain evaluation-only attack '" + s.id() + "'");
    if (s.kind != AttackKind::regeneration && !s.differentiable()) {
      throw ConfigError("stage2.attacks entry '" + s.id() + "' is not differentiable");
    }
  }
  for (const auto& list : {c.eval.attacks, c.eval.sweeps}) {
    for (const auto& id : list) {
      try {
        parse_attack_chain(id);
      } catch (const ParameterError& e) {
        throw ConfigError(std::string("attack list: ") + e.what());
      }
    }
  }
  if (c.eval.black_box_images < 0) throw ConfigError("eval.black_box_images must be >= 0");
}

json parse_scalar(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return json(text);
  }
}

}  // namespace

RunConfig default_config() {
  RunConfig c;
  c.stage2.attacks = default_stage2_attacks();
  c.eval.attacks = default_eval_attacks();
  c.eval.sweeps = default_sweeps();
  derive_seeds(c);
  return c;
}

RunConfig resolve_config_text(const std::string& text, const std::vector<std::string>& overrides,
                              std::optional<std::uint64_t> seed) {
  RunConfig c = default_config();
  std::vector<std::pair<std::string, json>> kv;
  if (!text.empty()) {
    json doc;
    try {
      doc = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!doc.is_null()) {
      if (!doc.is_object()) throw ConfigError("config document must be an object of sections");
      flatten(doc, "", kv);
    }
  }
  // stage2.attacks resets the weights, so it is applied before stage2.weights.
  auto apply = [&](std::vector<std::pair<std::string, json>>& items) {
    std::stable_partition(items.begin(), items.end(), [](const auto& p) { return p.first != "stage2.weights"; });
    for (const auto& [k, v] : items) find_entry(k).set(c, v);
  };
  apply(kv);
  std::vector<std::pair<std::string, json>> cli;
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not key=value");
    cli.emplace_back(o.substr(0, eq), parse_scalar(o.substr(eq + 1)));
  }
  apply(cli);
  if (seed) c.seed = *seed;
  c.arch.height = c.corpus.height;
  c.arch.width = c.corpus.width;
  derive_seeds(c);
  check(c);
  return c;
}

RunConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides,
                         std::optional<std::uint64_t> seed) {
  std::string text;
  if (!path.empty()) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config file " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    text = ss.str();
  }
  return resolve_config_text(text, overrides, seed);
}

std::string config_to_json(const RunConfig& c) {
  json doc = json::object();
  for (const auto& e : entries()) {
    const auto dot = e.key.find('.');
    if (dot == std::string::npos) {
      doc[e.key] = e.get(c);
    } else {
      doc[e.key.substr(0, dot)][e.key.substr(dot + 1)] = e.get(c);
    }
  }
  return doc.dump(2) + "\n";
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& e : entries()) out.push_back(e.key);
  return out;
}

}  // namespace advmark
