#include <cstring>
#include <fstream>
#include <functional>
#include <stdexcept>

#include "tosa/model.hpp"

namespace tosa {

// Checkpoint layout (all integers little-endian):
//   magic "TOSA", u32 version = 1
//   config block: u32 image_size, patch_size, channels, embed_dim, heads,
//     depth, num_classes; u32 n_tosa + u32 layer indices; f64 ratio;
//     u8 scope; u32 selector_channels, selector_kernel; u8 has_dense_head;
//     u8 tosa_active
//   u32 record count, then per parameter:
//     u32 name length, name bytes, u32 rank, u64 extents, f64 values
// f64 values round-trip via their raw bit pattern, so load(save(x)) is
// bit-exact.

namespace {

constexpr char kMagic[4] = {'T', 'O', 'S', 'A'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  }
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) {
    std::uint8_t b[4] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8),
                         static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 24)};
    bytes(b, 4);
  }
  void u64(std::uint64_t v) {
    std::uint8_t b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
    bytes(b, 8);
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void finish(const std::string& path) {
    out_.flush();
    if (!out_) throw std::runtime_error("checkpoint: write to '" + path + "' failed");
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  }
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw std::runtime_error("checkpoint: '" + path_ + "' is truncated");
    }
  }
  std::uint8_t u8() {
    std::uint8_t v;
    bytes(&v, 1);
    return v;
  }
  std::uint32_t u32() {
    std::uint8_t b[4];
    bytes(b, 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }
  std::uint64_t u64() {
    std::uint8_t b[8];
    bytes(b, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    if (n > (1u << 20)) throw std::runtime_error("checkpoint: implausible string length");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

 private:
  std::ifstream in_;
  std::string path_;
};

}  // namespace

void save_checkpoint(const ModelState& state, const std::string& path) {
  Writer w(path);
  w.bytes(kMagic, 4);
  w.u32(kVersion);

  const ModelConfig& c = state.config;
  w.u32(static_cast<std::uint32_t>(c.image_size));
  w.u32(static_cast<std::uint32_t>(c.patch_size));
  w.u32(static_cast<std::uint32_t>(c.channels));
  w.u32(static_cast<std::uint32_t>(c.embed_dim));
  w.u32(static_cast<std::uint32_t>(c.heads));
  w.u32(static_cast<std::uint32_t>(c.depth));
  w.u32(static_cast<std::uint32_t>(c.num_classes));
  w.u32(static_cast<std::uint32_t>(c.tosa_layers.size()));
  for (std::size_t layer : c.tosa_layers) w.u32(static_cast<std::uint32_t>(layer));
  w.f64(c.ratio);
  w.u8(static_cast<std::uint8_t>(c.scope));
  w.u32(static_cast<std::uint32_t>(c.selector_channels));
  w.u32(static_cast<std::uint32_t>(c.selector_kernel));
  w.u8(state.has_dense_head ? 1 : 0);
  w.u8(state.tosa_active ? 1 : 0);

  const auto params = state.named_params();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, tensor] : params) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t e : tensor.shape()) w.u64(e);
    for (std::size_t i = 0; i < tensor.size(); ++i) w.f64(tensor.data()[i]);
  }
  w.finish(path);
}

ModelState load_checkpoint(const std::string& path) {
  Reader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("checkpoint: '" + path + "' has wrong magic bytes");
  }
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }

  ModelConfig c;
  c.image_size = r.u32();
  c.patch_size = r.u32();
  c.channels = r.u32();
  c.embed_dim = r.u32();
  c.heads = r.u32();
  c.depth = r.u32();
  c.num_classes = r.u32();
  const std::uint32_t n_tosa = r.u32();
  c.tosa_layers.clear();
  for (std::uint32_t i = 0; i < n_tosa; ++i) c.tosa_layers.push_back(r.u32());
  c.ratio = r.f64();
  const std::uint8_t scope = r.u8();
  if (scope > 2) throw std::runtime_error("checkpoint: invalid skip scope value");
  c.scope = static_cast<SkipScope>(scope);
  c.selector_channels = r.u32();
  c.selector_kernel = r.u32();
  const bool has_dense = r.u8() != 0;
  const bool tosa_active = r.u8() != 0;

  ModelState state = ModelState::init(c, 0);
  if (has_dense) state.ensure_dense_head(0);
  state.tosa_active = tosa_active;

  std::map<std::string, Tensor> by_name;
  for (const auto& [name, tensor] : state.named_params()) by_name.emplace(name, tensor);

  const std::uint32_t count = r.u32();
  if (count != by_name.size()) {
    throw std::runtime_error("checkpoint: parameter record count " + std::to_string(count) +
                             " does not match config-implied count " +
                             std::to_string(by_name.size()));
  }
  for (std::uint32_t rec = 0; rec < count; ++rec) {
    const std::string name = r.str();
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw std::runtime_error("checkpoint: unknown parameter record '" + name + "'");
    }
    Tensor t = it->second;
    const std::uint32_t rank = r.u32();
    if (rank != t.rank()) {
      throw std::runtime_error("checkpoint: rank mismatch for '" + name + "'");
    }
    for (std::uint32_t d = 0; d < rank; ++d) {
      if (r.u64() != t.shape()[d]) {
        throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
      }
    }
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = r.f64();
    by_name.erase(it);
  }
  if (!by_name.empty()) {
    throw std::runtime_error("checkpoint: parameter '" + by_name.begin()->first + "' missing");
  }
  return state;
}

std::vector<std::uint8_t> param_bytes(const ModelState& state,
                                      const std::function<bool(const std::string&)>& name_filter) {
  std::vector<std::uint8_t> bytes;
  for (const auto& [name, tensor] : state.named_params()) {
    if (name_filter && !name_filter(name)) continue;
    const std::size_t at = bytes.size();
    bytes.resize(at + tensor.size() * sizeof(double));
    std::memcpy(bytes.data() + at, tensor.data(), tensor.size() * sizeof(double));
  }
  return bytes;
}

}  // namespace tosa
