#include "advmark/models.hpp"

namespace advmark {

namespace {
constexpr float kSlope = 0.1f;
}

void validate_arch(const ArchMeta& a) {
  if (a.n <= 0) throw ConfigError("message length n must be positive");
  if (a.height <= 0 || a.width <= 0 || a.height % 8 != 0 || a.width % 8 != 0) {
    throw ConfigError("image height/width must be positive multiples of 8");
  }
  if (a.enc_width <= 0 || a.dec_width <= 0 || a.msg_channels <= 0) throw ConfigError("channel widths must be positive");
  if (a.enc_blocks != 4 || a.dec_blocks != 5) throw ConfigError("only 4 encoder and 5 decoder blocks are supported");
}

ModelBundle init_models(const ModelConfig& config) {
  const ArchMeta& a = config.arch;
  validate_arch(a);
  ModelBundle b;
  b.arch = a;
  Rng root(config.seed);
  Rng er = root.child("encoder");
  const int grid = (a.height / 8) * (a.width / 8);
  add_conv(b.encoder, "enc.conv1", a.enc_width, 3, 3, er);
  add_conv(b.encoder, "enc.conv2", a.enc_width, a.enc_width, 3, er);
  add_linear(b.encoder, "enc.msg", a.msg_channels * grid, a.n, er);
  add_conv(b.encoder, "enc.conv3", a.enc_width, a.enc_width + a.msg_channels + 3, 3, er);
  add_conv(b.encoder, "enc.conv4", a.enc_width, a.enc_width, 3, er);
  add_conv(b.encoder, "enc.out", 3, a.enc_width, 1, er, 0.05);

  Rng dr = root.child("decoder");
  const int w1 = a.dec_width, w2 = 2 * a.dec_width;
  add_conv(b.decoder, "dec.conv1", w1, 3, 3, dr);
  add_conv(b.decoder, "dec.conv2", w2, w1, 3, dr);
  add_conv(b.decoder, "dec.conv3", w2, w2, 3, dr);
  add_conv(b.decoder, "dec.conv4", w2, w2, 3, dr);
  add_conv(b.decoder, "dec.conv5", w2, w2, 3, dr);
  add_linear(b.decoder, "dec.head", a.n, w2 * grid, dr);
  b.decoder["dec.head.b"].array().setConstant(0.5f);
  return b;
}

template <class S>
EncoderNet<S>::EncoderNet(const ModelBundle& bundle, bool param_grads)
    : arch_(bundle.arch), params_(make_leaves<S>(bundle.encoder, param_grads)) {}

template <class S>
Var<S> EncoderNet<S>::operator()(const Var<S>& images, const Var<S>& bits) const {
  const Shape s = images.shape();
  if (s.c != 3 || s.h != arch_.height || s.w != arch_.width) {
    throw DimensionError("encoder expects (N,3," + std::to_string(arch_.height) + "," + std::to_string(arch_.width) +
                         "), got " + s.str());
  }
  if (bits.shape().n != s.n || static_cast<int>(bits.shape().sample_size()) != arch_.n) {
    throw DimensionError("encoder expects " + std::to_string(arch_.n) + "-bit messages per image, got " +
                         bits.shape().str());
  }
  const S slope = static_cast<S>(kSlope);
  const Var<S> centred = images * S(2) + S(-1);
  Var<S> h = leaky_relu(conv(params_, "enc.conv1", centred), slope);
  h = leaky_relu(conv(params_, "enc.conv2", h), slope);
  // bits {0,1} -> {-0.5,+0.5}
  const Var<S> signed_bits = bits + S(-0.5);
  Var<S> planes = reshape(dense(params_, "enc.msg", signed_bits),
                          Shape{s.n, arch_.msg_channels, s.h / 8, s.w / 8});
  planes = upsample_nearest(planes, 8);
  h = leaky_relu(conv(params_, "enc.conv3", concat_channels<S>({h, planes, centred})), slope);
  h = leaky_relu(conv(params_, "enc.conv4", h), slope);
  const Var<S> residual = conv(params_, "enc.out", h);
  return clamp(images + residual, S(0), S(1));
}

template <class S>
DecoderNet<S>::DecoderNet(const ModelBundle& bundle, bool param_grads)
    : arch_(bundle.arch), params_(make_leaves<S>(bundle.decoder, param_grads)) {}

template <class S>
Var<S> DecoderNet<S>::operator()(const Var<S>& images) const {
  const Shape s = images.shape();
  if (s.c != 3 || s.h != arch_.height || s.w != arch_.width) {
    throw DimensionError("decoder expects (N,3," + std::to_string(arch_.height) + "," + std::to_string(arch_.width) +
                         "), got " + s.str());
  }
  const S slope = static_cast<S>(kSlope);
  Var<S> h = leaky_relu(conv(params_, "dec.conv1", images * S(2) + S(-1)), slope);
  h = leaky_relu(conv(params_, "dec.conv2", h, 2), slope);
  h = leaky_relu(conv(params_, "dec.conv3", h, 2), slope);
  h = leaky_relu(conv(params_, "dec.conv4", h, 2), slope);
  h = leaky_relu(conv(params_, "dec.conv5", h), slope);
  return reshape(dense(params_, "dec.head", h), Shape{s.n, arch_.n, 1, 1});
}

Image encode_batch(const ModelBundle& bundle, const Image& covers, const std::vector<Message>& msgs) {
  if (static_cast<int>(msgs.size()) != covers.n()) throw DimensionError("one message per image required");
  for (const auto& m : msgs) {
    if (m.size() != bundle.arch.n) {
      throw DimensionError("message length " + std::to_string(m.size()) + " != " + std::to_string(bundle.arch.n));
    }
  }
  EncoderNet<float> enc(bundle, false);
  return enc(Var<float>(covers), Var<float>(message_tensor(msgs))).value();
}

Image encode(const ModelBundle& bundle, const Image& cover, const Message& m) {
  if (cover.n() != 1) throw DimensionError("encode takes a single image");
  return encode_batch(bundle, cover, {m});
}

Tensor<float> decode_batch(const ModelBundle& bundle, const Image& x) {
  DecoderNet<float> dec(bundle, false);
  return dec(Var<float>(x)).value();
}

MessageLogits decode(const ModelBundle& bundle, const Image& x) {
  if (x.n() != 1) throw DimensionError("decode takes a single image");
  return logits_row(decode_batch(bundle, x), 0);
}

std::vector<Message> decode_messages(const ModelBundle& bundle, const Image& x) {
  const Tensor<float> logits = decode_batch(bundle, x);
  std::vector<Message> out;
  for (int i = 0; i < x.n(); ++i) out.push_back(round_message(logits_row(logits, i)));
  return out;
}

std::vector<double> bit_accuracies(const ModelBundle& bundle, const Image& x, const std::vector<Message>& msgs) {
  const auto decoded = decode_messages(bundle, x);
  if (decoded.size() != msgs.size()) throw DimensionError("one message per image required");
  std::vector<double> out;
  for (std::size_t i = 0; i < msgs.size(); ++i) out.push_back(bit_accuracy(decoded[i], msgs[i]));
  return out;
}

double mean_bit_accuracy(const ModelBundle& bundle, const Image& x, const std::vector<Message>& msgs) {
  const auto v = bit_accuracies(bundle, x, msgs);
  double s = 0;
  for (double a : v) s += a;
  return s / static_cast<double>(v.size());
}

std::vector<Message> random_messages(int count, int n, Rng& rng) {
  std::vector<Message> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) out.push_back(random_message(n, rng));
  return out;
}

template class EncoderNet<float>;
template class EncoderNet<double>;
template class DecoderNet<float>;
template class DecoderNet<double>;

}  // namespace advmark
