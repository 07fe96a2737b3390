#include "advmark/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace advmark {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_string(std::string& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  explicit Reader(const std::string& b) : b_(b) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string() {
    const auto len = get<std::uint32_t>();
    need(len);
    std::string s = b_.substr(pos_, len);
    pos_ += len;
    return s;
  }
  const char* take(std::size_t len) {
    need(len);
    const char* p = b_.data() + pos_;
    pos_ += len;
    return p;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t len) const {
    if (len > b_.size() - pos_) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  const std::string& b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const CheckpointData& data) {
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put_string(out, data.kind);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(data.meta.size()));
  for (const auto& [k, v] : data.meta) {
    put_string(out, k);
    put<double>(out, v);
  }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(data.arrays.size()));
  for (const auto& [name, t] : data.arrays) {
    put_string(out, name);
    for (int d : {t.n(), t.c(), t.h(), t.w()}) put<std::int32_t>(out, d);
    const std::uint64_t bytes = t.numel() * sizeof(float);
    put<std::uint64_t>(out, bytes);
    out.append(reinterpret_cast<const char*>(t.data()), bytes);
  }
  return out;
}

CheckpointData deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kCheckpointMagic) || std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw FormatError("not a checkpoint: bad magic");
  }
  Reader r(bytes);
  r.take(sizeof(kCheckpointMagic));
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  }
  CheckpointData d;
  d.kind = r.get_string();
  const auto nmeta = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < nmeta; ++i) {
    std::string k = r.get_string();
    d.meta[k] = r.get<double>();
  }
  const auto narr = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < narr; ++i) {
    std::string name = r.get_string();
    Shape s{};
    s.n = r.get<std::int32_t>();
    s.c = r.get<std::int32_t>();
    s.h = r.get<std::int32_t>();
    s.w = r.get<std::int32_t>();
    if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) throw FormatError("negative shape for array '" + name + "'");
    const auto len = r.get<std::uint64_t>();
    if (len != s.numel() * sizeof(float)) {
      throw FormatError("array '" + name + "' declares " + std::to_string(len) + " bytes for shape " + s.str());
    }
    Tensor<float> t(s);
    std::memcpy(t.data(), r.take(len), len);
    d.arrays.emplace(std::move(name), std::move(t));
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint payload");
  return d;
}

void write_checkpoint(const CheckpointData& data, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(data);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

namespace {
std::string slurp(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}
}  // namespace

CheckpointData read_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(slurp(path)); }

void save_checkpoint(const ModelBundle& b, const std::filesystem::path& path) {
  CheckpointData d;
  d.kind = "watermark";
  const ArchMeta& a = b.arch;
  d.meta = {{"n", a.n},
            {"height", a.height},
            {"width", a.width},
            {"enc_width", a.enc_width},
            {"dec_width", a.dec_width},
            {"msg_channels", a.msg_channels},
            {"enc_blocks", a.enc_blocks},
            {"dec_blocks", a.dec_blocks},
            {"bundle_version", b.version}};
  d.arrays = b.encoder;
  for (const auto& [k, v] : b.decoder) d.arrays.emplace(k, v);
  write_checkpoint(d, path);
}

ModelBundle load_checkpoint(const std::filesystem::path& path) {
  CheckpointData d = read_checkpoint(path);
  if (d.kind != "watermark") throw FormatError("checkpoint holds '" + d.kind + "', expected 'watermark'");
  auto meta = [&](const char* key) {
    auto it = d.meta.find(key);
    if (it == d.meta.end()) throw FormatError(std::string("checkpoint lacks metadata '") + key + "'");
    return static_cast<int>(it->second);
  };
  ArchMeta a;
  a.n = meta("n");
  a.height = meta("height");
  a.width = meta("width");
  a.enc_width = meta("enc_width");
  a.dec_width = meta("dec_width");
  a.msg_channels = meta("msg_channels");
  a.enc_blocks = meta("enc_blocks");
  a.dec_blocks = meta("dec_blocks");
  ModelBundle ref = init_models({a, 0});
  ModelBundle b;
  b.arch = a;
  b.version = meta("bundle_version");
  auto fill = [&](const ParamMap& shapes, ParamMap& dst) {
    for (const auto& [name, t] : shapes) {
      auto it = d.arrays.find(name);
      if (it == d.arrays.end()) throw FormatError("checkpoint lacks array '" + name + "'");
      if (!(it->second.shape() == t.shape())) {
        throw FormatError("array '" + name + "' has shape " + it->second.shape().str() + ", architecture expects " +
                          t.shape().str());
      }
      dst.emplace(name, it->second);
    }
  };
  fill(ref.encoder, b.encoder);
  fill(ref.decoder, b.decoder);
  if (b.encoder.size() + b.decoder.size() != d.arrays.size()) throw FormatError("checkpoint holds unexpected arrays");
  return b;
}

std::string bytes_hash(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << h;
  return ss.str();
}

std::string file_hash(const std::filesystem::path& path) { return bytes_hash(slurp(path)); }

}  // namespace advmark
