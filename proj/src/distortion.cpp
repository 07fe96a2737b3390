#include "advmark/distortion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "advmark/rng.hpp"

namespace advmark {

namespace {

struct KindInfo {
  AttackKind kind;
  const char* name;
  std::map<std::string, double> defaults;
};

const std::vector<KindInfo>& registry() {
  static const std::vector<KindInfo> r = {
      {AttackKind::identity, "identity", {}},
      {AttackKind::jpeg, "jpeg", {{"Q", 50}}},
      {AttackKind::jpeg_real, "jpeg_real", {{"Q", 50}}},
      {AttackKind::gaussian_noise, "gaussian_noise", {{"sigma", 0.1}}},
      {AttackKind::gaussian_blur, "gaussian_blur", {{"sigma", 0.5}}},
      {AttackKind::brightness, "brightness", {{"a", 1.5}}},
      {AttackKind::combined, "combined", {{"Q", 50}, {"noise", 0.1}, {"blur", 0.5}, {"a", 1.5}}},
      {AttackKind::crop, "crop", {{"p", 0.035}}},
      {AttackKind::resize, "resize", {{"r", 0.7}}},
      {AttackKind::dropout, "dropout", {{"p", 0.3}}},
      {AttackKind::salt_pepper, "salt_pepper", {{"p", 0.1}}},
      {AttackKind::rotation, "rotation", {{"a", 30}}},
      {AttackKind::hue, "hue", {{"delta", 0.2}}},
      // proxy 0 = A (seen during optimisation), 1 = B (held out)
      {AttackKind::regeneration, "regeneration", {{"proxy", 0}}},
      {AttackKind::wevade, "wevade", {{"r", 20.0 / 255.0}, {"steps", 10}, {"step", 0}}},
      {AttackKind::defender, "defender", {{"r", 20.0 / 255.0}, {"steps", 10}, {"step", 0}}},
      {AttackKind::black_q, "black_q", {{"tau", 0.75}, {"queries", 2000}, {"mc", 50}, {"bisect", 20}}},
      {AttackKind::black_s, "black_s", {{"r", 20.0 / 255.0}, {"steps", 10}, {"step", 0}}},
  };
  return r;
}

const KindInfo& info(AttackKind k) {
  for (const auto& i : registry())
    if (i.kind == k) return i;
  throw ParameterError("unregistered attack kind");
}

std::string format_value(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

}  // namespace

std::string to_string(AttackKind k) { return info(k).name; }

std::optional<AttackKind> attack_kind_from_string(const std::string& s) {
  for (const auto& i : registry())
    if (s == i.name) return i.kind;
  return std::nullopt;
}

const std::map<std::string, double>& attack_defaults(AttackKind k) { return info(k).defaults; }

bool AttackSpec::differentiable() const {
  switch (kind) {
    case AttackKind::identity:
    case AttackKind::jpeg:
    case AttackKind::gaussian_noise:
    case AttackKind::gaussian_blur:
    case AttackKind::brightness:
    case AttackKind::combined:
    case AttackKind::regeneration:
      return true;
    default:
      return false;
  }
}

bool AttackSpec::geometric() const {
  switch (kind) {
    case AttackKind::crop:
    case AttackKind::resize:
    case AttackKind::dropout:
    case AttackKind::salt_pepper:
    case AttackKind::rotation:
    case AttackKind::hue:
      return true;
    default:
      return false;
  }
}

bool AttackSpec::adversarial() const {
  return kind == AttackKind::wevade || kind == AttackKind::defender || kind == AttackKind::black_q ||
         kind == AttackKind::black_s;
}

bool AttackSpec::unknown() const {
  return kind == AttackKind::combined || kind == AttackKind::black_q || kind == AttackKind::black_s ||
         (kind == AttackKind::regeneration && get("proxy") != 0.0);
}

double AttackSpec::get(const std::string& key) const {
  auto it = params.find(key);
  if (it != params.end()) return it->second;
  const auto& d = attack_defaults(kind);
  auto jt = d.find(key);
  if (jt == d.end()) throw ParameterError("attack " + to_string(kind) + " has no parameter '" + key + "'");
  return jt->second;
}

std::string AttackSpec::id() const {
  std::string s = to_string(kind);
  if (kind == AttackKind::regeneration) return s + ":proxy=" + (get("proxy") == 0.0 ? "A" : "B");
  bool first = true;
  for (const auto& [k, v] : params) {
    s += first ? ":" : ",";
    s += k + "=" + format_value(v);
    first = false;
  }
  return s;
}

AttackSpec parse_attack(const std::string& text) {
  const auto colon = text.find(':');
  const std::string name = text.substr(0, colon);
  const auto kind = attack_kind_from_string(name);
  if (!kind) throw ParameterError("unknown attack kind '" + name + "'");
  AttackSpec spec;
  spec.kind = *kind;
  spec.params = attack_defaults(*kind);
  if (colon != std::string::npos) {
    std::stringstream ss(text.substr(colon + 1));
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item.empty()) continue;
      const auto eq = item.find('=');
      if (eq == std::string::npos) throw ParameterError("attack parameter '" + item + "' lacks '='");
      const std::string key = item.substr(0, eq);
      const std::string val = item.substr(eq + 1);
      if (!spec.params.contains(key)) {
        throw ParameterError("attack " + name + " has no parameter '" + key + "'");
      }
      if (key == "proxy" && (val == "A" || val == "B")) {
        spec.params[key] = val == "A" ? 0.0 : 1.0;
        continue;
      }
      try {
        std::size_t used = 0;
        spec.params[key] = std::stod(val, &used);
        if (used != val.size()) throw std::invalid_argument(val);
      } catch (const std::exception&) {
        throw ParameterError("attack parameter " + key + " is not a number: '" + val + "'");
      }
    }
  }
  return spec;
}

std::vector<AttackSpec> parse_attack_chain(const std::string& text) {
  std::vector<AttackSpec> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, '+')) out.push_back(parse_attack(item));
  if (out.empty()) throw ParameterError("empty attack chain");
  return out;
}

std::vector<AttackSpec> default_training_distortions() {
  std::vector<AttackSpec> v = {parse_attack("jpeg"), parse_attack("gaussian_noise"), parse_attack("gaussian_blur"),
                               parse_attack("brightness")};
  v[0].weight = 1.0;
  for (std::size_t i = 1; i < v.size(); ++i) v[i].weight = 0.1;
  return v;
}

std::array<int, 64> jpeg_quant_table(bool chroma, int quality) {
  static constexpr std::array<int, 64> kLuma = {
      16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,  14, 13, 16, 24,  40,  57,
      69, 56, 14, 17, 22,  29,  51,  87,  80, 62, 18, 22, 37,  56,  68,  109, 103, 77, 24, 35, 55,  64,
      81, 104, 113, 92, 49, 64, 78,  87,  103, 121, 120, 101, 72, 92, 95, 98,  112, 100, 103, 99};
  static constexpr std::array<int, 64> kChroma = {
      17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99, 24, 26, 56, 99, 99, 99,
      99, 99, 47, 66, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
      99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};
  if (quality < 1 || quality > 100) throw ParameterError("JPEG quality must be in 1..100");
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  std::array<int, 64> out{};
  const auto& base = chroma ? kChroma : kLuma;
  for (int i = 0; i < 64; ++i) out[i] = std::clamp((base[i] * scale + 50) / 100, 1, 255);
  return out;
}

template <class S>
Var<S> jpeg_approx(const Var<S>& x, double quality, bool round_coefficients) {
  if (!(quality >= 1.0 && quality <= 100.0)) throw ParameterError("JPEG quality must be in 1..100");
  const Shape s = x.shape();
  if (s.c != 3 || s.h % 8 != 0 || s.w % 8 != 0) throw DimensionError("jpeg_approx needs 3×H×W with H,W % 8 == 0");

  // JFIF YCbCr on the 0..255 scale, luma level-shifted by 128.
  Eigen::Matrix<S, 3, 3> fwd;
  fwd << S(0.299), S(0.587), S(0.114), S(-0.168736), S(-0.331264), S(0.5), S(0.5), S(-0.418688), S(-0.081312);
  const Eigen::Matrix<S, 3, 3> to_ycc = fwd * S(255);
  const Eigen::Matrix<S, 3, 1> ycc_offset(S(-128), S(0), S(0));
  Eigen::Matrix<S, 3, 3> inv;
  inv << S(1), S(0), S(1.402), S(1), S(-0.344136), S(-0.714136), S(1), S(1.772), S(0);
  const Eigen::Matrix<S, 3, 3> to_rgb = inv / S(255);
  const Eigen::Matrix<S, 3, 1> rgb_offset = Eigen::Matrix<S, 3, 1>::Constant(S(128) / S(255));

  const int q = static_cast<int>(std::lround(quality));
  const auto luma = jpeg_quant_table(false, q);
  const auto chroma = jpeg_quant_table(true, q);
  Tensor<S> step(Shape{1, 3, s.h, s.w});
  Tensor<S> inv_step(Shape{1, 3, s.h, s.w});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < s.h; ++y)
      for (int xx = 0; xx < s.w; ++xx) {
        const int v = (c == 0 ? luma : chroma)[(y % 8) * 8 + (xx % 8)];
        step(0, c, y, xx) = static_cast<S>(v);
        inv_step(0, c, y, xx) = S(1) / static_cast<S>(v);
      }

  Var<S> coeff = block_dct8(channel_mix(x, to_ycc, ycc_offset), false);
  Var<S> scaled = mul_broadcast(coeff, inv_step);
  if (round_coefficients) scaled = round_ste(scaled);
  Var<S> rec = block_dct8(mul_broadcast(scaled, step), true);
  return clamp(channel_mix(rec, to_rgb, rgb_offset), S(0), S(1));
}

template <class S>
Var<S> gaussian_noise(const Var<S>& x, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw ParameterError("gaussian_noise sigma must be >= 0");
  if (sigma == 0.0) return x;
  Rng rng(seed);
  Tensor<S> z(x.shape());
  for (Eigen::Index i = 0; i < z.array().size(); ++i) z.array()(i) = static_cast<S>(sigma * rng.normal());
  return clamp(add_const(x, z), S(0), S(1));
}

template <class S>
Var<S> gaussian_blur(const Var<S>& x, double sigma) {
  if (!(sigma >= 0.0)) throw ParameterError("gaussian_blur sigma must be >= 0");
  if (sigma == 0.0) return x;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<S> k(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) total += std::exp(-(i * i) / (2 * sigma * sigma));
  for (int i = -radius; i <= radius; ++i) k[i + radius] = static_cast<S>(std::exp(-(i * i) / (2 * sigma * sigma)) / total);
  return clamp(conv1d_reflect(conv1d_reflect(x, k, 3), k, 2), S(0), S(1));
}

template <class S>
Var<S> brightness(const Var<S>& x, double factor) {
  if (!(factor > 0.0)) throw ParameterError("brightness factor must be > 0");
  return clamp(x * static_cast<S>(factor), S(0), S(1));
}

std::vector<AttackSpec> expand_combined(const AttackSpec& spec) {
  if (spec.kind != AttackKind::combined) return {spec};
  AttackSpec j = parse_attack("jpeg"), n = parse_attack("gaussian_noise"), b = parse_attack("gaussian_blur"),
             br = parse_attack("brightness");
  j.params["Q"] = spec.get("Q");
  n.params["sigma"] = spec.get("noise");
  b.params["sigma"] = spec.get("blur");
  br.params["a"] = spec.get("a");
  return {j, n, b, br};
}

template <class S>
Var<S> apply_distortion(const Var<S>& x, const AttackSpec& spec, std::uint64_t seed) {
  switch (spec.kind) {
    case AttackKind::identity:
      return x;
    case AttackKind::jpeg:
      return jpeg_approx(x, spec.get("Q"));
    case AttackKind::gaussian_noise:
      return gaussian_noise(x, spec.get("sigma"), seed);
    case AttackKind::gaussian_blur:
      return gaussian_blur(x, spec.get("sigma"));
    case AttackKind::brightness:
      return brightness(x, spec.get("a"));
    case AttackKind::combined:
      return combined_distortion(x, expand_combined(spec), seed);
    default:
      throw ContractError("attack " + spec.id() + " is not a differentiable distortion");
  }
}

template <class S>
Var<S> combined_distortion(const Var<S>& x, const std::vector<AttackSpec>& specs, std::uint64_t seed) {
  for (const auto& s : specs) {
    if (!s.differentiable() || s.kind == AttackKind::regeneration) {
      throw ContractError("combined_distortion: " + s.id() + " is not a differentiable distortion");
    }
  }
  Var<S> h = x;
  for (std::size_t i = 0; i < specs.size(); ++i) h = apply_distortion(h, specs[i], derive_seed(seed, "combined", i));
  return h;
}

namespace {

float bilinear(const Image& x, int n, int c, double y, double xx) {
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(xx));
  const double fy = y - y0;
  const double fx = xx - x0;
  auto px = [&](int yy, int xv) -> double {
    if (yy < 0 || yy >= x.h() || xv < 0 || xv >= x.w()) return 0.0;
    return x(n, c, yy, xv);
  };
  double v = (1 - fy) * ((1 - fx) * px(y0, x0) + (fx == 0.0 ? 0.0 : fx * px(y0, x0 + 1)));
  if (fy != 0.0) v += fy * ((1 - fx) * px(y0 + 1, x0) + (fx == 0.0 ? 0.0 : fx * px(y0 + 1, x0 + 1)));
  return static_cast<float>(v);
}

// Edge-clamped bilinear resampling to (h, w), align_corners=false convention.
Image resample(const Image& x, int h, int w) {
  Image out(Shape{x.n(), x.c(), h, w});
  const double sy = static_cast<double>(x.h()) / h;
  const double sx = static_cast<double>(x.w()) / w;
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
          const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, x.h() - 1.0);
          const double fx = std::clamp((xx + 0.5) * sx - 0.5, 0.0, x.w() - 1.0);
          out(n, c, y, xx) = bilinear(x, n, c, fy, fx);
        }
  return out;
}

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  const float mx = std::max({r, g, b});
  const float mn = std::min({r, g, b});
  const float d = mx - mn;
  v = mx;
  s = mx > 0 ? d / mx : 0.0f;
  if (d == 0) {
    h = 0;
  } else if (mx == r) {
    h = std::fmod((g - b) / d, 6.0f);
  } else if (mx == g) {
    h = (b - r) / d + 2.0f;
  } else {
    h = (r - g) / d + 4.0f;
  }
  h /= 6.0f;
  if (h < 0) h += 1.0f;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  const float hh = h * 6.0f;
  const int i = static_cast<int>(std::floor(hh)) % 6;
  const float f = hh - std::floor(hh);
  const float p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
}

}  // namespace

Image apply_geometric(const Image& x, const AttackSpec& spec, std::uint64_t seed, const Image* cover) {
  if (!spec.geometric()) throw ParameterError("apply_geometric: " + to_string(spec.kind) + " is not a geometric attack");
  Rng rng(seed);
  const int H = x.h(), W = x.w();
  Image out = x;
  switch (spec.kind) {
    case AttackKind::crop: {
      const double p = spec.get("p");
      if (!(p > 0 && p <= 1)) throw ParameterError("crop p must be in (0,1]");
      const double side = std::sqrt(p);
      const int ch = std::max(1, static_cast<int>(std::lround(side * H)));
      const int cw = std::max(1, static_cast<int>(std::lround(side * W)));
      out = Image(x.shape());
      for (int n = 0; n < x.n(); ++n) {
        const int y0 = rng.uniform_int(0, H - ch);
        const int x0 = rng.uniform_int(0, W - cw);
        for (int c = 0; c < x.c(); ++c)
          for (int y = y0; y < y0 + ch; ++y)
            for (int xx = x0; xx < x0 + cw; ++xx) out(n, c, y, xx) = x(n, c, y, xx);
      }
      break;
    }
    case AttackKind::resize: {
      const double r = spec.get("r");
      if (!(r > 0)) throw ParameterError("resize r must be > 0");
      const int h = std::max(1, static_cast<int>(std::lround(r * H)));
      const int w = std::max(1, static_cast<int>(std::lround(r * W)));
      out = resample(resample(x, h, w), H, W);
      break;
    }
    case AttackKind::dropout: {
      const double p = spec.get("p");
      if (!(p >= 0 && p <= 1)) throw ParameterError("dropout p must be in [0,1]");
      if (cover == nullptr) throw ParameterError("dropout needs the cover image");
      require_same_shape(x.shape(), cover->shape(), "dropout cover");
      for (int n = 0; n < x.n(); ++n)
        for (int y = 0; y < H; ++y)
          for (int xx = 0; xx < W; ++xx)
            if (rng.bernoulli(p))
              for (int c = 0; c < x.c(); ++c) out(n, c, y, xx) = (*cover)(n, c, y, xx);
      break;
    }
    case AttackKind::salt_pepper: {
      const double p = spec.get("p");
      if (!(p >= 0 && p <= 1)) throw ParameterError("salt_pepper p must be in [0,1]");
      for (int n = 0; n < x.n(); ++n)
        for (int y = 0; y < H; ++y)
          for (int xx = 0; xx < W; ++xx)
            if (rng.bernoulli(p)) {
              const float v = rng.bernoulli(0.5) ? 1.0f : 0.0f;
              for (int c = 0; c < x.c(); ++c) out(n, c, y, xx) = v;
            }
      break;
    }
    case AttackKind::rotation: {
      const double a = spec.get("a") * std::numbers::pi / 180.0;
      const double cs = std::cos(a), sn = std::sin(a);
      const double cy = (H - 1) / 2.0, cx = (W - 1) / 2.0;
      for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c)
          for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx) {
              // inverse mapping of the output pixel into the source
              const double dy = y - cy, dx = xx - cx;
              const double sy = cs * dy - sn * dx + cy;
              const double sx = sn * dy + cs * dx + cx;
              out(n, c, y, xx) = bilinear(x, n, c, sy, sx);
            }
      break;
    }
    case AttackKind::hue: {
      const auto delta = static_cast<float>(spec.get("delta"));
      for (int n = 0; n < x.n(); ++n)
        for (int y = 0; y < H; ++y)
          for (int xx = 0; xx < W; ++xx) {
            float h, s, v;
            rgb_to_hsv(x(n, 0, y, xx), x(n, 1, y, xx), x(n, 2, y, xx), h, s, v);
            h = std::fmod(h + delta, 1.0f);
            if (h < 0) h += 1.0f;
            hsv_to_rgb(h, s, v, out(n, 0, y, xx), out(n, 1, y, xx), out(n, 2, y, xx));
          }
      break;
    }
    default:
      throw ParameterError("apply_geometric: unsupported kind");
  }
  return clamp_image(out);
}

#define ADVMARK_INSTANTIATE(S)                                                               \
  template Var<S> jpeg_approx<S>(const Var<S>&, double, bool);                               \
  template Var<S> gaussian_noise<S>(const Var<S>&, double, std::uint64_t);                   \
  template Var<S> gaussian_blur<S>(const Var<S>&, double);                                   \
  template Var<S> brightness<S>(const Var<S>&, double);                                      \
  template Var<S> combined_distortion<S>(const Var<S>&, const std::vector<AttackSpec>&, std::uint64_t); \
  template Var<S> apply_distortion<S>(const Var<S>&, const AttackSpec&, std::uint64_t);

ADVMARK_INSTANTIATE(float)
ADVMARK_INSTANTIATE(double)

#undef ADVMARK_INSTANTIATE

}  // namespace advmark
