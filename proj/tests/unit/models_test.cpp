#include <doctest.h>

#include "advmark/corpus.hpp"
#include "advmark/models.hpp"
#include "gradcheck.hpp"

using namespace advmark;
using advmark::testing::check_input_gradient;
using advmark::testing::check_leaf_gradient;

namespace {

ModelBundle small_bundle(std::uint64_t seed) {
  ModelConfig c;
  c.arch.height = c.arch.width = 32;
  c.seed = seed;
  return init_models(c);
}

Image covers(int n, int size, std::uint64_t seed) {
  return generate_corpus(CorpusConfig{n, size, size, seed, 0.25, ""}).images;
}

}  // namespace

TEST_CASE("initialisation is seed-deterministic") {
  const ModelBundle a = small_bundle(1), b = small_bundle(1), c = small_bundle(2);
  bool same = true, differs = false;
  for (const auto& [name, t] : a.encoder) {
    same = same && (t.array() == b.encoder.at(name).array()).all();
    differs = differs || !(t.array() == c.encoder.at(name).array()).all();
  }
  CHECK(same);
  CHECK(differs);
}

TEST_CASE("decoder output length is n") {
  ModelConfig c;
  const ModelBundle b = init_models(c);
  CHECK(decode(b, Image(Shape{1, 3, 64, 64}, 0.5f)).size() == 30);
}

TEST_CASE("decode of an all-zero image is finite") {
  const ModelBundle b = small_bundle(3);
  CHECK(decode(b, Image(Shape{1, 3, 32, 32})).allFinite());
}

TEST_CASE("decoded logits do not depend on the rest of the batch") {
  const ModelBundle b = small_bundle(6);
  const Image x = covers(16, 32, 8);
  const Tensor<float> all = decode_batch(b, x);
  bool same = true;
  for (int i = 0; i < x.n(); ++i) {
    const Tensor<float> one = decode_batch(b, x.samples(i));
    same = same && (one.array() == all.samples(i).array()).all();
  }
  CHECK(same);
}

TEST_CASE("encode is clamped and deterministic") {
  const ModelBundle b = small_bundle(4);
  Rng rng(1);
  const Message m = random_message(30, rng);
  const Image x = covers(1, 32, 5);
  const Image y1 = encode(b, x, m), y2 = encode(b, x, m);
  CHECK(y1.array().minCoeff() >= 0.f);
  CHECK(y1.array().maxCoeff() <= 1.f);
  CHECK((y1.array() == y2.array()).all());
}

TEST_CASE("shape and length mismatches are dimension errors") {
  const ModelBundle b = small_bundle(5);
  Rng rng(2);
  CHECK_THROWS_AS(encode(b, covers(1, 32, 1), random_message(29, rng)), DimensionError);
  CHECK_THROWS_AS(encode(b, covers(1, 64, 1), random_message(30, rng)), DimensionError);
  CHECK_THROWS_AS(decode(b, Image(Shape{1, 3, 64, 64})), DimensionError);
}

TEST_CASE("invalid architectures are config errors") {
  ModelConfig c;
  c.arch.n = 0;
  CHECK_THROWS_AS(init_models(c), ConfigError);
  c = ModelConfig{};
  c.arch.height = 60;
  CHECK_THROWS_AS(init_models(c), ConfigError);
}

TEST_CASE("decoder gradient with respect to the image matches finite differences") {
  const ModelBundle b = small_bundle(6);
  const DecoderNet<double> dec(b, false);
  const Tensor<double> x = covers(1, 32, 7).cast<double>();
  const auto r = check_input_gradient([&dec](const Var<double>& v) { return sum(dec(v)); }, x, 8);
  CHECK(r.max_rel_error < 1e-3);
}

TEST_CASE("decoder gradient with respect to its parameters matches finite differences") {
  const ModelBundle b = small_bundle(7);
  const DecoderNet<double> dec(b, true);
  const Var<double> x(covers(1, 32, 9).cast<double>());
  for (const char* name : {"dec.conv1.w", "dec.conv3.w", "dec.head.w", "dec.head.b"}) {
    const Var<double>& leaf = dec.params().at(name);
    const auto r = check_leaf_gradient([&] { return sum(dec(x)); }, leaf, 10);
    INFO(name);
    CHECK(r.max_rel_error < 1e-3);
  }
}

TEST_CASE("encoder gradient with respect to the cover matches finite differences") {
  const ModelBundle b = small_bundle(8);
  const EncoderNet<double> enc(b, false);
  Rng rng(3);
  const Var<double> bits(message_tensor({random_message(30, rng)}).cast<double>());
  Tensor<double> x = covers(1, 32, 11).cast<double>();
  x.array() = 0.2 + 0.6 * x.array();
  const auto r = check_input_gradient([&](const Var<double>& v) { return sum(enc(v, bits)); }, x, 12);
  CHECK(r.max_rel_error < 1e-3);
}

TEST_CASE("bit accuracy helpers agree") {
  const ModelBundle b = small_bundle(9);
  Rng rng(4);
  const auto msgs = random_messages(3, 30, rng);
  const Image x = encode_batch(b, covers(3, 32, 2), msgs);
  const auto per = bit_accuracies(b, x, msgs);
  const auto dec = decode_messages(b, x);
  double mean = 0;
  for (int i = 0; i < 3; ++i) {
    CHECK(per[i] == bit_accuracy(dec[i], msgs[i]));
    mean += per[i] / 3;
  }
  CHECK(mean_bit_accuracy(b, x, msgs) == doctest::Approx(mean));
}
