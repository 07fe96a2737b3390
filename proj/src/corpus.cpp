#include "advmark/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

#include <png.h>

#include "advmark/distortion.hpp"
#include "advmark/errors.hpp"

namespace advmark {

namespace fs = std::filesystem;

void write_png(const Image& x, const fs::path& path) {
  if (x.c() != 3) throw DimensionError("write_png needs a 3-channel image");
  std::vector<unsigned char> buf(static_cast<std::size_t>(x.h()) * x.w() * 3);
  for (int y = 0; y < x.h(); ++y)
    for (int xx = 0; xx < x.w(); ++xx)
      for (int c = 0; c < 3; ++c)
        buf[(static_cast<std::size_t>(y) * x.w() + xx) * 3 + c] =
            static_cast<unsigned char>(std::lround(std::clamp(x(0, c, y, xx), 0.0f, 1.0f) * 255.0f));
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(x.w());
  img.height = static_cast<png_uint_32>(x.h());
  img.format = PNG_FORMAT_RGB;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr)) {
    throw IoError("cannot write PNG " + path.string() + ": " + img.message);
  }
}

Image read_png(const fs::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw IoError("cannot read PNG " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError("cannot decode PNG " + path.string() + ": " + img.message);
  }
  const int h = static_cast<int>(img.height), w = static_cast<int>(img.width);
  Image out(Shape{1, 3, h, w});
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx)
      for (int c = 0; c < 3; ++c) out(0, c, y, xx) = buf[(static_cast<std::size_t>(y) * w + xx) * 3 + c] / 255.0f;
  return out;
}

Image read_image(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".png") return read_png(path);
  if (ext == ".jpg" || ext == ".jpeg") {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    try {
      return decode_jpeg(bytes);
    } catch (const FormatError& e) {
      throw IoError("cannot decode JPEG " + path.string());
    }
  }
  throw IoError("unsupported image format: " + path.string());
}

namespace {

float bilinear(const Image& x, int c, double y, double xx) {
  y = std::clamp(y, 0.0, static_cast<double>(x.h() - 1));
  xx = std::clamp(xx, 0.0, static_cast<double>(x.w() - 1));
  const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(xx));
  const int y1 = std::min(y0 + 1, x.h() - 1), x1 = std::min(x0 + 1, x.w() - 1);
  const double fy = y - y0, fx = xx - x0;
  return static_cast<float>((1 - fy) * ((1 - fx) * x(0, c, y0, x0) + fx * x(0, c, y0, x1)) +
                            fy * ((1 - fx) * x(0, c, y1, x0) + fx * x(0, c, y1, x1)));
}

}  // namespace

Image resize_center_crop(const Image& x, int h, int w) {
  if (h <= 0 || w <= 0) throw DimensionError("target size must be positive");
  const double scale = std::max(static_cast<double>(h) / x.h(), static_cast<double>(w) / x.w());
  // Box pre-filter when shrinking a lot, so aliasing stays bounded.
  Image src = x;
  const int factor = static_cast<int>(std::floor(1.0 / scale));
  if (factor >= 2) {
    Image pooled(Shape{1, 3, x.h() / factor, x.w() / factor});
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < pooled.h(); ++y)
        for (int xx = 0; xx < pooled.w(); ++xx) {
          double s = 0;
          for (int dy = 0; dy < factor; ++dy)
            for (int dx = 0; dx < factor; ++dx) s += x(0, c, y * factor + dy, xx * factor + dx);
          pooled(0, c, y, xx) = static_cast<float>(s / (factor * factor));
        }
    src = pooled;
  }
  const double s2 = std::max(static_cast<double>(h) / src.h(), static_cast<double>(w) / src.w());
  const double oy = (src.h() * s2 - h) / 2.0, ox = (src.w() * s2 - w) / 2.0;
  Image out(Shape{1, 3, h, w});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        out(0, c, y, xx) = bilinear(src, c, (y + oy + 0.5) / s2 - 0.5, (xx + ox + 0.5) / s2 - 0.5);
  return clamp_image(out);
}

Image synthetic_image(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::ArrayXXd planes[3];
  for (auto& p : planes) p = Eigen::ArrayXXd::Zero(h, w);
  auto colour = [&] {
    Eigen::Vector3d v(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    return v;
  };
  // Linear gradient.
  {
    const double theta = rng.uniform(0, 2 * std::numbers::pi);
    const Eigen::Vector3d a = colour();
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double t = (std::cos(theta) * (x - w / 2.0) + std::sin(theta) * (y - h / 2.0)) / std::max(h, w);
        for (int c = 0; c < 3; ++c) planes[c](y, x) += a[c] * t;
      }
  }
  // Gabor patches.
  const int gabors = rng.uniform_int(1, 3);
  for (int g = 0; g < gabors; ++g) {
    const double cy = rng.uniform(0, h), cx = rng.uniform(0, w);
    const double sigma = rng.uniform(0.15, 0.5) * std::max(h, w);
    const double freq = rng.uniform(2.0, 10.0) / std::max(h, w);
    const double theta = rng.uniform(0, std::numbers::pi), phase = rng.uniform(0, 2 * std::numbers::pi);
    const Eigen::Vector3d a = colour() * rng.uniform(0.3, 0.8);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double dy = y - cy, dx = x - cx;
        const double u = std::cos(theta) * dx + std::sin(theta) * dy;
        const double v = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma)) *
                         std::cos(2 * std::numbers::pi * freq * u + phase);
        for (int c = 0; c < 3; ++c) planes[c](y, x) += a[c] * v;
      }
  }
  // Smoothed noise field.
  {
    const double sigma = rng.uniform(1.0, 4.0);
    const double amp = rng.uniform(0.2, 0.6);
    Tensor<double> noise(Shape{1, 3, h, w});
    for (std::size_t i = 0; i < noise.numel(); ++i) noise.data()[i] = rng.normal();
    const int radius = static_cast<int>(std::ceil(3 * sigma));
    std::vector<double> k(2 * radius + 1);
    double ks = 0;
    for (int i = -radius; i <= radius; ++i) ks += k[i + radius] = std::exp(-i * i / (2 * sigma * sigma));
    for (double& v : k) v /= ks;
    const Tensor<double> smooth = conv1d_reflect(conv1d_reflect(Var<double>(noise), k, 2), k, 3).value();
    for (int c = 0; c < 3; ++c) {
      const double sd = std::sqrt(smooth.plane(0, c).array().square().mean()) + 1e-12;
      planes[c] += amp * smooth.plane(0, c).array() / sd * 0.25;
    }
  }
  // Per-channel min-max into a random sub-range of [0,1].
  Image out(Shape{1, 3, h, w});
  const double lo = rng.uniform(0.0, 0.15), hi = rng.uniform(0.85, 1.0);
  double mn = planes[0].minCoeff(), mx = planes[0].maxCoeff();
  for (int c = 1; c < 3; ++c) {
    mn = std::min(mn, planes[c].minCoeff());
    mx = std::max(mx, planes[c].maxCoeff());
  }
  const double span = std::max(mx - mn, 1e-9);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double v = lo + (hi - lo) * (planes[c](y, x) - mn) / span;
        out(0, c, y, x) = static_cast<float>(std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0);
      }
  return out;
}

Corpus generate_corpus(const CorpusConfig& cfg) {
  if (cfg.count <= 0) throw ConfigError("corpus.count must be positive");
  if (cfg.height % 8 != 0 || cfg.width % 8 != 0 || cfg.height <= 0 || cfg.width <= 0) {
    throw ConfigError("corpus height/width must be positive multiples of 8");
  }
  std::vector<Image> images;
  if (!cfg.source_dir.empty()) {
    const fs::path dir(cfg.source_dir);
    if (!fs::is_directory(dir)) throw IoError("cannot read image folder " + cfg.source_dir);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      std::string ext = e.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
      if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      if (static_cast<int>(images.size()) >= cfg.count) break;
      Image img = resize_center_crop(read_image(f), cfg.height, cfg.width);
      img.array() = (img.array() * 255.0f).round() / 255.0f;
      images.push_back(img);
    }
  }
  for (int i = static_cast<int>(images.size()); i < cfg.count; ++i) {
    images.push_back(synthetic_image(cfg.height, cfg.width, derive_seed(cfg.seed, "corpus", i)));
  }
  return Corpus{stack(images)};
}

double histogram_coverage(const Image& images, int bins) {
  std::vector<bool> hit(bins, false);
  for (std::size_t i = 0; i < images.numel(); ++i) {
    const int b = std::clamp(static_cast<int>(images.data()[i] * bins), 0, bins - 1);
    hit[b] = true;
  }
  return static_cast<double>(std::count(hit.begin(), hit.end(), true)) / bins;
}

void write_corpus(const Corpus& corpus, const fs::path& dir) {
  fs::create_directories(dir);
  for (int i = 0; i < corpus.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "img_%04d.png", i);
    write_png(corpus.at(i), dir / name);
  }
}

Corpus load_corpus(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("corpus folder not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("corpus folder holds no PNG images: " + dir.string());
  std::vector<Image> images;
  for (const auto& f : files) images.push_back(read_png(f));
  for (const auto& im : images) {
    if (!(im.shape() == images.front().shape())) throw IoError("corpus images differ in size: " + dir.string());
  }
  return Corpus{stack(images)};
}

CorpusSplit split_corpus(const Corpus& corpus, double holdout) {
  if (holdout < 0 || holdout >= 1) throw ConfigError("holdout fraction must be in [0,1)");
  const int n = corpus.size();
  int held = static_cast<int>(std::ceil(holdout * n));
  if (held >= n) held = n - 1;
  CorpusSplit s;
  s.train = Corpus{corpus.images.samples(0, n - held)};
  s.heldout = held > 0 ? Corpus{corpus.images.samples(n - held, held)} : Corpus{Image(Shape{0, 3, corpus.images.h(), corpus.images.w()})};
  return s;
}

}  // namespace advmark
