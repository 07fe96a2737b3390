#include <doctest.h>

#include <filesystem>

#include "advmark/corpus.hpp"

using namespace advmark;
namespace fs = std::filesystem;

TEST_CASE("same seed gives a bit-identical corpus") {
  CorpusConfig c;
  c.count = 6;
  const Corpus a = generate_corpus(c), b = generate_corpus(c);
  CHECK((a.images.array() == b.images.array()).all());
  c.seed = 8;
  const Corpus d = generate_corpus(c);
  CHECK_FALSE((a.images.array() == d.images.array()).all());
}

TEST_CASE("default corpus covers the intensity histogram") {
  const Corpus c = generate_corpus(CorpusConfig{});
  CHECK(c.size() == 64);
  CHECK(c.images.h() == 64);
  CHECK(histogram_coverage(c.images) >= 0.8);
  CHECK(histogram_coverage(Image(Shape{1, 3, 8, 8}, 0.5f)) == doctest::Approx(1.0 / 32));
}

TEST_CASE("png round trip is lossless on the corpus") {
  CorpusConfig c;
  c.count = 3;
  const Corpus a = generate_corpus(c);
  const fs::path dir = fs::temp_directory_path() / "advmark_unit_corpus";
  fs::remove_all(dir);
  write_corpus(a, dir);
  const Corpus b = load_corpus(dir);
  CHECK((a.images.array() == b.images.array()).all());
  CHECK_THROWS_AS(load_corpus(dir / "missing"), IoError);
}

TEST_CASE("split keeps the trailing quarter") {
  CorpusConfig c;
  c.count = 10;
  const auto s = split_corpus(generate_corpus(c), 0.25);
  CHECK(s.train.size() == 7);
  CHECK(s.heldout.size() == 3);
}

TEST_CASE("resize and crop to the working size") {
  const Image x(Shape{1, 3, 40, 80}, 0.3f);
  const Image y = resize_center_crop(x, 32, 32);
  CHECK(y.shape() == Shape{1, 3, 32, 32});
  CHECK((y.array() - 0.3f).abs().maxCoeff() < 1e-6f);
}
