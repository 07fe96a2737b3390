#include "advmark/regeneration.hpp"

#include <cmath>

#include "advmark/checkpoint.hpp"
#include "advmark/distortion.hpp"
#include "advmark/training.hpp"

namespace advmark {

DenoiserBundle init_denoiser(int width, std::uint64_t seed) {
  if (width <= 0) throw ConfigError("denoiser width must be positive");
  DenoiserBundle d;
  d.width = width;
  d.train_seed = seed;
  Rng rng = Rng(seed).child("denoiser");
  add_conv(d.params, "den.in", width, 3, 3, rng);
  add_conv(d.params, "den.down", 2 * width, width, 3, rng);
  add_conv(d.params, "den.mid", 2 * width, 2 * width, 3, rng);
  add_conv(d.params, "den.up", width, 3 * width, 3, rng);
  add_conv(d.params, "den.out", 3, width, 3, rng, 0.1);
  return d;
}

template <class S>
Var<S> denoise(const DenoiserBundle& d, const Var<S>& x) {
  const VarMap<S> p = make_leaves<S>(d.params, false);
  const S slope = S(0.1);
  const Var<S> h1 = leaky_relu(conv(p, "den.in", x * S(2) + S(-1)), slope);
  Var<S> h2 = leaky_relu(conv(p, "den.down", h1, 2), slope);
  h2 = leaky_relu(conv(p, "den.mid", h2), slope);
  const Var<S> up = upsample_nearest(h2, 2);
  const Var<S> h3 = leaky_relu(conv(p, "den.up", concat_channels<S>({up, h1})), slope);
  return x + conv(p, "den.out", h3);
}

template <class S>
Var<S> regenerate(const Var<S>& x, const DenoiserBundle& d, std::uint64_t seed) {
  if (!d.trained) throw StateError("regenerate needs a trained denoiser");
  Var<S> y = x;
  for (int t = 0; t < d.steps; ++t) {
    y = clamp(denoise(d, gaussian_noise(y, d.sigma_t, derive_seed(seed, "regenerate", t))), S(0), S(1));
  }
  return y;
}

Image regenerate(const Image& x, const DenoiserBundle& d, std::uint64_t seed) {
  return regenerate(Var<float>(x), d, seed).value();
}

DenoiserBundle train_denoiser(const Corpus& train, const Corpus& heldout, const DenoiserConfig& cfg) {
  if (train.size() == 0) throw TrainingError("denoiser corpus is empty");
  if (!(cfg.sigma_t > 0) || cfg.steps < 1) throw ConfigError("denoiser needs sigma_t > 0 and steps >= 1");
  DenoiserBundle d = init_denoiser(cfg.width, cfg.seed);
  d.sigma_t = cfg.sigma_t;
  d.steps = cfg.steps;
  Rng rng = Rng(cfg.seed).child("denoiser-train");
  Adam opt(cfg.lr);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& idx : epoch_batches(train.size(), cfg.batch_size, rng)) {
      const Image clean = random_flips(gather(train.images, idx), rng);
      VarMap<float> leaves = make_leaves<float>(d.params, true);
      DenoiserBundle view = d;
      const Var<float> x(clean);
      // Same graph as denoise() but over trainable leaves.
      const float slope = 0.1f;
      const Var<float> noisy = gaussian_noise(x, cfg.sigma_t, rng.engine()());
      const Var<float> h1 = leaky_relu(conv(leaves, "den.in", noisy * 2.0f + -1.0f), slope);
      Var<float> h2 = leaky_relu(conv(leaves, "den.down", h1, 2), slope);
      h2 = leaky_relu(conv(leaves, "den.mid", h2), slope);
      const Var<float> h3 =
          leaky_relu(conv(leaves, "den.up", concat_channels<float>({upsample_nearest(h2, 2), h1})), slope);
      const Var<float> loss = mse(noisy + conv(leaves, "den.out", h3), x);
      backward(loss);
      if (!std::isfinite(loss.item())) throw TrainingError("denoiser training diverged");
      opt.step(d.params, leaves);
    }
  }
  d.trained = true;
  const Corpus& check = heldout.size() > 0 ? heldout : train;
  const Image out = clamp(denoise(d, gaussian_noise(Var<float>(check.images), cfg.sigma_t,
                                                    derive_seed(cfg.seed, "denoiser-eval"))),
                          0.0f, 1.0f)
                        .value();
  d.heldout_psnr = mean_psnr(out, check.images);
  if (d.heldout_psnr < cfg.min_denoise_psnr) {
    throw TrainingError("denoiser reached only " + std::to_string(d.heldout_psnr) + " dB held-out (floor " +
                        std::to_string(cfg.min_denoise_psnr) + ")");
  }
  return d;
}

void save_denoiser(const DenoiserBundle& d, const std::filesystem::path& path) {
  CheckpointData c;
  c.kind = "denoiser";
  c.meta = {{"train_seed", static_cast<double>(d.train_seed)},
            {"sigma_t", d.sigma_t},
            {"steps", d.steps},
            {"width", d.width},
            {"trained", d.trained ? 1.0 : 0.0},
            {"heldout_psnr", d.heldout_psnr}};
  c.arrays = d.params;
  write_checkpoint(c, path);
}

DenoiserBundle load_denoiser(const std::filesystem::path& path) {
  CheckpointData c = read_checkpoint(path);
  if (c.kind != "denoiser") throw FormatError("checkpoint holds '" + c.kind + "', expected 'denoiser'");
  for (const char* k : {"train_seed", "sigma_t", "steps", "width", "trained", "heldout_psnr"}) {
    if (!c.meta.count(k)) throw FormatError(std::string("denoiser checkpoint lacks '") + k + "'");
  }
  DenoiserBundle d = init_denoiser(static_cast<int>(c.meta["width"]), static_cast<std::uint64_t>(c.meta["train_seed"]));
  for (auto& [name, t] : d.params) {
    auto it = c.arrays.find(name);
    if (it == c.arrays.end() || !(it->second.shape() == t.shape())) {
      throw FormatError("denoiser array '" + name + "' missing or mis-shaped");
    }
    t = it->second;
  }
  d.sigma_t = c.meta["sigma_t"];
  d.steps = static_cast<int>(c.meta["steps"]);
  d.trained = c.meta["trained"] != 0.0;
  d.heldout_psnr = c.meta["heldout_psnr"];
  return d;
}

template Var<float> denoise<float>(const DenoiserBundle&, const Var<float>&);
template Var<double> denoise<double>(const DenoiserBundle&, const Var<double>&);
template Var<float> regenerate<float>(const Var<float>&, const DenoiserBundle&, std::uint64_t);
template Var<double> regenerate<double>(const Var<double>&, const DenoiserBundle&, std::uint64_t);

}  // namespace advmark
