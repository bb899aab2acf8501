#include "fsvfm/checkpoint_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>

#include "fsvfm/errors.hpp"

static_assert(std::endian::native == std::endian::little, "checkpoint codec assumes a little-endian host");

namespace fsvfm {

const Matrix* CheckpointFile::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t.value;
  return nullptr;
}

const Matrix& CheckpointFile::at(const std::string& name) const {
  const Matrix* m = find(name);
  if (!m) throw StateError("checkpoint has no tensor " + name);
  return *m;
}

const std::string& CheckpointFile::meta_at(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) throw StateError("checkpoint has no metadata key " + key);
  return it->second;
}

void CheckpointFile::put(std::string name, Matrix value) {
  for (auto& t : tensors)
    if (t.name == name) {
      t.value = std::move(value);
      return;
    }
  tensors.push_back({std::move(name), std::move(value)});
}

namespace {
constexpr char kMagic[4] = {'F', 'S', 'V', 'C'};

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

class Cursor {
 public:
  explicit Cursor(std::span<const std::uint8_t> b) : bytes_(b) {}
  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void get_doubles(double* dst, std::size_t n, const char* what) {
    if (n > (bytes_.size() - pos_) / sizeof(double)) throw CodecError(pos_, std::string("truncated ") + what);
    std::memcpy(dst, bytes_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw CodecError(pos_, std::string("truncated ") + what);
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};
}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const CheckpointFile& ckpt) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  nlohmann::json meta = nlohmann::json::object();
  for (const auto& [k, v] : ckpt.meta) meta[k] = v;
  const std::string text = meta.dump();
  put_le<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.value.rows()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.value.cols()));
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.value.data());
    out.insert(out.end(), p, p + static_cast<std::size_t>(t.value.size()) * sizeof(double));
  }
  return out;
}

CheckpointFile decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Cursor c(bytes);
  if (c.get_string(4, "magic") != std::string(kMagic, 4)) throw CodecError(0, "not a checkpoint (bad magic)");
  const auto version = c.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) throw CodecError(4, "unsupported checkpoint version " + std::to_string(version));
  const auto meta_len = c.get<std::uint64_t>("metadata length");
  const std::size_t meta_at = c.pos();
  const std::string text = c.get_string(static_cast<std::size_t>(meta_len), "metadata");
  CheckpointFile ckpt;
  try {
    auto meta = nlohmann::json::parse(text);
    for (auto it = meta.begin(); it != meta.end(); ++it) ckpt.meta[it.key()] = it.value().get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw CodecError(meta_at, std::string("malformed checkpoint metadata: ") + e.what());
  }
  const auto n = c.get<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < n; ++i) {
    TensorRecord t;
    const auto name_len = c.get<std::uint32_t>("tensor name length");
    t.name = c.get_string(name_len, "tensor name");
    const auto rows = c.get<std::uint32_t>("tensor rows");
    const auto cols = c.get<std::uint32_t>("tensor cols");
    t.value.resize(rows, cols);
    c.get_doubles(t.value.data(), static_cast<std::size_t>(rows) * cols, "tensor data");
    ckpt.tensors.push_back(std::move(t));
  }
  if (!c.done()) throw CodecError(c.pos(), "trailing bytes after checkpoint");
  return ckpt;
}

void write_checkpoint_file(const std::filesystem::path& path, const CheckpointFile& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw StateError("cannot write checkpoint " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw StateError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

CheckpointFile read_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StateError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace fsvfm
